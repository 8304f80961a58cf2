"""Seeded synthetic dataset generators and their file formats.

Every generator is driven by the package's counter-based streams, so a
(kind, params, seed) triple maps to one dataset on every platform. Files
are written atomically with 17-significant-digit floats and unix newlines;
each dataset directory carries a JSON sidecar with the generating
parameters, the seed, and the ground truth.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .lda import LdaCorpus
from .risklab import TinyDiscreteModel
from .rng import Stream

KINDS = ("linreg_s21", "gmm_s22", "lda_synth", "tiny_discrete")

SIDECAR_NAME = "dataset.json"


@dataclass
class DatasetBundle:
    kind: str
    seed: int
    params: dict
    payload: dict
    truth: dict = field(default_factory=dict)


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def atomic_write_text(path, content: str) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(content)
    os.replace(tmp, path)


def _merge_params(defaults: dict, params: dict | None, kind: str) -> dict:
    merged = dict(defaults)
    if params:
        unknown = set(params) - set(defaults)
        if unknown:
            raise ValueError(f"unknown {kind} parameters: {sorted(unknown)}")
        merged.update(params)
    return merged


def _generate_linreg(params: dict, stream: Stream):
    n, d = int(params["n"]), int(params["d"])
    nonzero = np.asarray(params["beta_nonzero"], dtype=np.float64)
    if d < nonzero.size:
        raise ValueError("d must cover the nonzero coefficients")
    beta = np.zeros(d)
    beta[: nonzero.size] = nonzero
    x = params["x_scale"] * stream.child(1).normal((n, d))
    noise = params["sigma"] * stream.child(2).normal(n)
    y = x @ beta + noise
    payload = {"x": x, "y": y}
    truth = {
        "beta_star": beta,
        "support": np.flatnonzero(beta),
        "sigma": params["sigma"],
    }
    return payload, truth


def _generate_gmm(params: dict, stream: Stream):
    n, d, k = int(params["n"]), int(params["d"]), int(params["k"])
    pi = np.full(k, 1.0 / k)
    means = np.sqrt(params["mean_prior_var"]) * stream.child(1).normal((k, d))
    labels = stream.child(2).categorical(pi, size=n)
    y = means[labels] + stream.child(3).normal((n, d))
    payload = {"y": y}
    truth = {"means": means, "pi": pi, "labels": labels}
    return payload, truth


def _generate_lda(params: dict, stream: Stream):
    k, vocab = int(params["k"]), int(params["vocab"])
    n_docs, doc_len = int(params["n_docs"]), int(params["doc_len"])
    support = int(params["support"])
    if k * support > vocab:
        raise ValueError("disjoint topic supports need k * support <= vocab")
    topic_word = np.zeros((k, vocab))
    supports = []
    for t in range(k):
        ids = np.arange(t * support, (t + 1) * support)
        supports.append(ids)
        topic_word[t, ids] = 1.0 / support
    doc_topic = np.zeros((n_docs, k))
    doc_ids, word_ids, counts = [], [], []
    for d in range(n_docs):
        doc_stream = stream.child(10, d)
        n_active = 1 + int(doc_stream.integers(0, 2))
        active = doc_stream.permutation(k)[:n_active]
        weights = doc_stream.uniform(n_active) + 0.2
        theta = np.zeros(k)
        theta[active] = weights / weights.sum()
        doc_topic[d] = theta
        topics = doc_stream.categorical(theta, size=doc_len)
        words = np.empty(doc_len, dtype=np.int64)
        u = doc_stream.uniform(doc_len)
        for t in range(k):
            mask = topics == t
            if not np.any(mask):
                continue
            cdf = np.cumsum(topic_word[t])
            words[mask] = np.searchsorted(cdf / cdf[-1], u[mask], side="right")
        ids, cnt = np.unique(words, return_counts=True)
        doc_ids.extend([d] * ids.size)
        word_ids.extend(ids.tolist())
        counts.extend(cnt.tolist())
    payload = {
        "doc_ids": np.asarray(doc_ids, dtype=np.int64),
        "word_ids": np.asarray(word_ids, dtype=np.int64),
        "counts": np.asarray(counts, dtype=np.float64),
        "vocab_size": vocab,
    }
    truth = {
        "topic_word": topic_word,
        "doc_topic": doc_topic,
        "supports": np.asarray(supports),
    }
    return payload, truth


def default_tiny_model() -> TinyDiscreteModel:
    """The two-atom, two-state Bernoulli-mixture model the bound checks use.

    Atom 0 (the truth) mixes Bernoulli(0.2) and Bernoulli(0.8) equally;
    atom 1 mixes Bernoulli(0.35) and Bernoulli(0.65) at weights (0.3, 0.7).
    The prior is uniform over the two atoms."""
    emit0 = np.array([[0.8, 0.2], [0.2, 0.8]])
    pi0 = np.array([0.5, 0.5])
    emit1 = np.array([[0.65, 0.35], [0.35, 0.65]])
    pi1 = np.array([0.3, 0.7])
    return TinyDiscreteModel(
        theta_grid=((emit0, pi0), (emit1, pi1)),
        prior_weights=np.array([0.5, 0.5]),
        obs_space=np.array([0, 1]),
        truth_index=0,
    )


def _generate_tiny(params: dict, stream: Stream):
    model = default_tiny_model()
    n = int(params["n"])
    data = model.sample_data(stream.child(1), n)
    payload = {"data": data}
    truth = {
        "truth_index": model.truth_index,
        "prior_weights": model.prior_weights,
        "obs_space": model.obs_space,
        "emissions": np.stack([atom[0] for atom in model.theta_grid]),
        "mixing": np.stack([atom[1] for atom in model.theta_grid]),
    }
    return payload, truth


_DEFAULTS = {
    "linreg_s21": {
        "n": 100,
        "d": 500,
        "beta_nonzero": (5.0, -4.0, -3.0, 2.0),
        "sigma": 1.0,
        "x_scale": 1.5,
    },
    "gmm_s22": {"n": 1000, "d": 2, "k": 3, "mean_prior_var": 50.0},
    "lda_synth": {"k": 3, "vocab": 50, "n_docs": 40, "doc_len": 100, "support": 10},
    "tiny_discrete": {"n": 5},
}

_GENERATORS = {
    "linreg_s21": _generate_linreg,
    "gmm_s22": _generate_gmm,
    "lda_synth": _generate_lda,
    "tiny_discrete": _generate_tiny,
}


def generate(kind: str, params: dict | None = None, seed: int = 0) -> DatasetBundle:
    """Build one seeded dataset. Unknown kinds and parameters raise."""
    if kind not in KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; choose from {KINDS}")
    merged = _merge_params(_DEFAULTS[kind], params, kind)
    payload, truth = _GENERATORS[kind](merged, Stream(seed, 21))
    return DatasetBundle(kind=kind, seed=seed, params=merged, payload=payload, truth=truth)


# --- file formats ----------------------------------------------------------


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_regression_csv(path, x: np.ndarray, y: np.ndarray) -> None:
    header = ["y"] + [f"x{j + 1}" for j in range(x.shape[1])]
    rows = (
        [_fmt(yi)] + [_fmt(v) for v in xi]
        for yi, xi in zip(y, x)
    )
    atomic_write_text(path, _csv_text(header, rows))


def read_regression_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "y":
            raise ValueError(f"unexpected regression header {header!r}")
        rows = [[float(v) for v in row] for row in reader]
    data = np.asarray(rows, dtype=np.float64)
    return data[:, 1:], data[:, 0]


def write_points_csv(path, y: np.ndarray) -> None:
    header = [f"y{j + 1}" for j in range(y.shape[1])]
    atomic_write_text(path, _csv_text(header, ([_fmt(v) for v in row] for row in y)))


def read_points_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "y1":
            raise ValueError(f"unexpected points header {header!r}")
        rows = [[float(v) for v in row] for row in reader]
    return np.asarray(rows, dtype=np.float64)


def write_corpus_csv(path, doc_ids, word_ids, counts) -> None:
    rows = (
        [str(int(d)), str(int(w)), _fmt(c)]
        for d, w, c in zip(doc_ids, word_ids, counts)
    )
    atomic_write_text(path, _csv_text(["doc_id", "word_id", "count"], rows))


def write_vocab(path, tokens) -> None:
    atomic_write_text(path, "".join(f"{t}\n" for t in tokens))


def read_vocab(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_sidecar(path, bundle: DatasetBundle) -> None:
    doc = {
        "kind": bundle.kind,
        "seed": bundle.seed,
        "params": _jsonable(bundle.params),
        "truth": _jsonable(bundle.truth),
    }
    atomic_write_text(path, json.dumps(doc, sort_keys=True, indent=2) + "\n")


def read_sidecar(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_bundle(bundle: DatasetBundle, out_dir) -> list:
    """Write a bundle's data files plus the JSON sidecar; returns the file
    names written inside out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if bundle.kind == "linreg_s21":
        write_regression_csv(os.path.join(out_dir, "data.csv"), bundle.payload["x"], bundle.payload["y"])
        written.append("data.csv")
    elif bundle.kind == "gmm_s22":
        write_points_csv(os.path.join(out_dir, "data.csv"), bundle.payload["y"])
        written.append("data.csv")
    elif bundle.kind == "lda_synth":
        write_corpus_csv(
            os.path.join(out_dir, "corpus.csv"),
            bundle.payload["doc_ids"],
            bundle.payload["word_ids"],
            bundle.payload["counts"],
        )
        vocab = [f"w{j:03d}" for j in range(bundle.payload["vocab_size"])]
        write_vocab(os.path.join(out_dir, "vocab.txt"), vocab)
        written.extend(["corpus.csv", "vocab.txt"])
    else:
        rows = ([str(int(v))] for v in bundle.payload["data"])
        atomic_write_text(os.path.join(out_dir, "data.csv"), _csv_text(["y"], rows))
        written.append("data.csv")
    write_sidecar(os.path.join(out_dir, SIDECAR_NAME), bundle)
    written.append(SIDECAR_NAME)
    return written


def corpus_from_bundle(bundle: DatasetBundle) -> LdaCorpus:
    return LdaCorpus.from_triplets(
        bundle.payload["doc_ids"],
        bundle.payload["word_ids"],
        bundle.payload["counts"],
        bundle.payload["vocab_size"],
    )
