"""Tempered mean-field solver for latent Dirichlet allocation.

The temperature enters exactly once: the token-topic softmax scales its
document-topic term by alpha. The document updates (gamma) and the
topic-word updates (lam) are the untempered conjugate accumulations and
take no temperature argument at all, so those code paths are identical for
every alpha. The tracked objective scales the document-topic part of the
usual bound by alpha; each update is an exact block maximizer of it, so
the recorded trace never decreases.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln

from .kernels import doc_fixed_point
from .objective import AlphaConfig, ElboTrace
from .rng import Stream

INNER_TOL = 1e-5
MAX_INNER = 100


@dataclass(frozen=True)
class LdaCorpus:
    """Bag-of-words corpus: one (word_ids, counts) pair per document."""

    docs: tuple
    vocab_size: int

    def __post_init__(self):
        cleaned = []
        for words, counts in self.docs:
            w = np.asarray(words, dtype=np.int64).ravel()
            c = np.asarray(counts, dtype=np.float64).ravel()
            if w.size != c.size or w.size == 0:
                raise ValueError("each document needs matching nonempty ids and counts")
            if np.any(w < 0) or np.any(w >= self.vocab_size):
                raise ValueError("word id outside the vocabulary")
            if np.any(c <= 0):
                raise ValueError("counts must be positive")
            if np.unique(w).size != w.size:
                raise ValueError("word ids must be distinct within a document")
            cleaned.append((w, c))
        object.__setattr__(self, "docs", tuple(cleaned))
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be at least 2")
        if not cleaned:
            raise ValueError("corpus must contain at least one document")

    @property
    def n_docs(self) -> int:
        return len(self.docs)

    def doc_lengths(self) -> np.ndarray:
        return np.array([c.sum() for _, c in self.docs])

    @staticmethod
    def from_triplets(doc_ids, word_ids, counts, vocab_size: int) -> "LdaCorpus":
        doc_ids = np.asarray(doc_ids, dtype=np.int64)
        word_ids = np.asarray(word_ids, dtype=np.int64)
        counts = np.asarray(counts, dtype=np.float64)
        docs = []
        for d in np.unique(doc_ids):
            mask = doc_ids == d
            docs.append((word_ids[mask], counts[mask]))
        return LdaCorpus(tuple(docs), vocab_size)


def read_corpus_csv(path, vocab_size: int | None = None) -> LdaCorpus:
    """Read a doc_id,word_id,count triplet file (header required)."""
    doc_ids, word_ids, counts = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["doc_id", "word_id", "count"]:
            raise ValueError(f"unexpected corpus header {header!r}")
        for row in reader:
            doc_ids.append(int(row[0]))
            word_ids.append(int(row[1]))
            counts.append(float(row[2]))
    if vocab_size is None:
        vocab_size = max(word_ids) + 1
    return LdaCorpus.from_triplets(doc_ids, word_ids, counts, vocab_size)


@dataclass(frozen=True)
class LdaHyper:
    """Topic count and Dirichlet hyperparameters. When c_exponent is set,
    the symmetric priors sharpen to 1/K**c and 1/V**c."""

    n_topics: int
    eta_beta: float | None = None
    eta_gamma: float | None = None
    c_exponent: float | None = None

    def __post_init__(self):
        if self.n_topics < 2:
            raise ValueError("n_topics must be at least 2")
        if self.c_exponent is not None and self.c_exponent <= 1.0:
            raise ValueError("c_exponent must exceed 1 when given")
        if self.eta_beta is not None and self.eta_beta <= 0:
            raise ValueError("eta_beta must be positive")
        if self.eta_gamma is not None and self.eta_gamma <= 0:
            raise ValueError("eta_gamma must be positive")

    def resolved(self, vocab_size: int):
        """Concrete (eta_beta, eta_gamma) for a given vocabulary size."""
        c = self.c_exponent
        eta_beta = self.eta_beta
        eta_gamma = self.eta_gamma
        if eta_beta is None:
            eta_beta = 1.0 / vocab_size ** (c if c is not None else 1.0)
        if eta_gamma is None:
            eta_gamma = 1.0 / self.n_topics ** (c if c is not None else 1.0)
        return float(eta_beta), float(eta_gamma)


@dataclass
class LdaVariationalState:
    """Topic-word Dirichlet parameters lam (K, V), document-topic Dirichlet
    parameters gamma (D, K), and per-document token-topic laws phi."""

    lam: np.ndarray
    gamma: np.ndarray
    phi: list = field(default_factory=list)

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=np.float64)
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        if np.any(self.lam <= 0) or np.any(self.gamma <= 0):
            raise ValueError("Dirichlet parameters must be positive")


def expected_log_beta(lam: np.ndarray) -> np.ndarray:
    """E[log topic-word probabilities] under Dirichlet rows of lam."""
    return digamma(lam) - digamma(lam.sum(axis=1, keepdims=True))


def e_step_doc(
    doc,
    gamma0: np.ndarray,
    elog_beta: np.ndarray,
    alpha: float,
    eta_gamma: float,
    inner_tol: float = INNER_TOL,
    max_inner: int = MAX_INNER,
):
    """Run one document's site updates to their joint fixed point.

    Token-topic laws are softmax(Elog_beta[:, w] + alpha * Elog_theta);
    the document parameters accumulate gamma = eta_gamma + counts @ phi
    with no temperature. Iterates until the mean absolute gamma change
    drops below inner_tol (capped at max_inner). Returns
    (gamma, phi, inner_iterations)."""
    words, counts = doc
    return doc_fixed_point(
        elog_beta, words, counts, gamma0, alpha, eta_gamma, inner_tol, max_inner
    )


def m_step(corpus: LdaCorpus, phis: list, eta_beta: float, n_topics: int) -> np.ndarray:
    """Topic-word accumulation lam_kv = eta_beta + sum_d count * phi.
    Temperature-free by construction (it takes no alpha argument)."""
    vocab = corpus.vocab_size
    lam = np.full((n_topics, vocab), eta_beta)
    for (words, counts), phi in zip(corpus.docs, phis):
        np.add.at(lam.T, words, counts[:, None] * phi)
    return lam


def _dirichlet_kl(a: np.ndarray, b_scalar: float) -> float:
    """KL( Dirichlet(a) || Dirichlet(b_scalar * ones) ), rows summed."""
    a = np.atleast_2d(a)
    m = a.shape[1]
    a_sum = a.sum(axis=1)
    term = (
        gammaln(a_sum)
        - gammaln(a).sum(axis=1)
        - gammaln(m * b_scalar)
        + m * gammaln(b_scalar)
        + ((a - b_scalar) * (digamma(a) - digamma(a_sum)[:, None])).sum(axis=1)
    )
    return float(term.sum())


def tracked_objective(
    corpus: LdaCorpus,
    state: LdaVariationalState,
    alpha: float,
    eta_beta: float,
    eta_gamma: float,
) -> float:
    """Tempered bound: token terms with the document-topic part scaled by
    alpha, minus alpha times the document KLs, minus the topic KLs."""
    elog_beta = expected_log_beta(state.lam)
    elog_theta = digamma(state.gamma) - digamma(state.gamma.sum(axis=1, keepdims=True))
    total = 0.0
    for d, ((words, counts), phi) in enumerate(zip(corpus.docs, state.phi)):
        with np.errstate(divide="ignore", invalid="ignore"):
            log_phi = np.where(phi > 0, np.log(phi), 0.0)
        inner = phi * (elog_beta[:, words].T + alpha * elog_theta[d][None, :] - log_phi)
        total += float(counts @ inner.sum(axis=1))
    total -= alpha * _dirichlet_kl(state.gamma, eta_gamma)
    total -= _dirichlet_kl(state.lam, eta_beta)
    return total


def fit_lda(corpus: LdaCorpus, hyper: LdaHyper, cfg: AlphaConfig):
    """Tempered variational fit. Returns (state, trace).

    Topic-word parameters start at a seeded perturbation of a flat count
    profile; document parameters start at eta_gamma + length/K and are
    warm-started across sweeps so every move is an exact block ascent of
    the tracked objective. A sweep is: site fixed points for all documents,
    then the topic-word accumulation; the objective is recorded per sweep
    and the fit stops when its change drops below cfg.elbo_tol."""
    k = hyper.n_topics
    eta_beta, eta_gamma = hyper.resolved(corpus.vocab_size)
    stream = Stream(cfg.seed, 31)
    total_count = float(corpus.doc_lengths().sum())
    scale = total_count / (k * corpus.vocab_size)
    lam = eta_beta + scale * (0.9 + 0.2 * stream.uniform((k, corpus.vocab_size)))
    gamma = eta_gamma + np.repeat(
        corpus.doc_lengths()[:, None] / k, k, axis=1
    )
    phis = [np.full((w.size, k), 1.0 / k) for w, _ in corpus.docs]
    state = LdaVariationalState(lam, gamma, phis)
    trace = ElboTrace()
    previous = -np.inf
    for sweep in range(cfg.max_iters):
        elog_beta = expected_log_beta(state.lam)
        new_gamma = np.empty_like(state.gamma)
        new_phis = []
        for d, doc in enumerate(corpus.docs):
            g, phi, _ = e_step_doc(doc, state.gamma[d], elog_beta, cfg.alpha, eta_gamma)
            new_gamma[d] = g
            new_phis.append(phi)
        lam = m_step(corpus, new_phis, eta_beta, k)
        state = LdaVariationalState(lam, new_gamma, new_phis)
        value = tracked_objective(corpus, state, cfg.alpha, eta_beta, eta_gamma)
        trace.record(value)
        if abs(value - previous) < cfg.elbo_tol:
            trace.converged_at = sweep
            break
        previous = value
    return state, trace


def top_words(lam: np.ndarray, n_top: int = 10) -> np.ndarray:
    """Indices of the n_top highest-weight words per topic, best first."""
    order = np.argsort(-lam, axis=1, kind="stable")
    return order[:, :n_top]
