"""Hot inner loops with numba-compiled and pure-numpy implementations.

The backend is chosen once at import from the ALPHAVB_BACKEND environment
variable ("numba" or "numpy"; default numba when importable) and can be
switched at runtime with set_backend, which the benchmark harness uses.
Both backends are deterministic; results agree to floating-point noise but
are not guaranteed bit-identical across backends.

Two loops live here because they dominate fit time and resist batching:
the per-document topic-model fixed point (ragged documents, data-dependent
iteration counts) and the fused mixture responsibility/accumulation pass.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


_VALID = ("numba", "numpy")
_BACKEND = os.environ.get("ALPHAVB_BACKEND", "numba" if HAS_NUMBA else "numpy")
if _BACKEND not in _VALID:
    raise ValueError(f"ALPHAVB_BACKEND must be one of {_VALID}, got {_BACKEND!r}")
if _BACKEND == "numba" and not HAS_NUMBA:
    _BACKEND = "numpy"


def active_backend() -> str:
    return _BACKEND


def set_backend(name: str) -> None:
    global _BACKEND
    if name not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}")
    if name == "numba" and not HAS_NUMBA:
        raise ValueError("numba backend requested but numba is not importable")
    _BACKEND = name


# --- shared digamma -------------------------------------------------------
# Hand-rolled so the compiled and fallback paths share one definition; the
# recurrence lifts the argument above 10 and the asymptotic tail then gives
# ~1e-15 absolute accuracy, plenty under the 1e-5 inner tolerance.


@njit(cache=True)
def _digamma_scalar(x: float) -> float:
    r = 0.0
    while x < 10.0:
        r -= 1.0 / x
        x += 1.0
    f = 1.0 / (x * x)
    tail = f * (
        1.0 / 12.0
        - f
        * (
            1.0 / 120.0
            - f
            * (1.0 / 252.0 - f * (1.0 / 240.0 - f * (1.0 / 132.0 - f * (691.0 / 32760.0))))
        )
    )
    return r + math.log(x) - 0.5 / x - tail


def _digamma_np(x: np.ndarray) -> np.ndarray:
    x = np.array(x, dtype=np.float64, copy=True)
    r = np.zeros_like(x)
    while np.any(x < 10.0):
        mask = x < 10.0
        r[mask] -= 1.0 / x[mask]
        x[mask] += 1.0
    f = 1.0 / (x * x)
    tail = f * (
        1.0 / 12.0
        - f
        * (
            1.0 / 120.0
            - f
            * (1.0 / 252.0 - f * (1.0 / 240.0 - f * (1.0 / 132.0 - f * (691.0 / 32760.0))))
        )
    )
    return r + np.log(x) - 0.5 / x - tail


# --- per-document topic fixed point ---------------------------------------


@njit(cache=True)
def _doc_fixed_point_numba(elog_beta, words, counts, gamma0, alpha, eta_gamma, tol, max_inner):
    n_topics = elog_beta.shape[0]
    n_words = words.shape[0]
    gamma = gamma0.copy()
    phi = np.zeros((n_words, n_topics))
    iters = 0
    for _ in range(max_inner):
        iters += 1
        gsum = 0.0
        for k in range(n_topics):
            gsum += gamma[k]
        dig_sum = _digamma_scalar(gsum)
        gamma_new = np.full(n_topics, eta_gamma)
        for w in range(n_words):
            wid = words[w]
            top = -1.0e308
            for k in range(n_topics):
                val = elog_beta[k, wid] + alpha * (_digamma_scalar(gamma[k]) - dig_sum)
                phi[w, k] = val
                if val > top:
                    top = val
            norm = 0.0
            for k in range(n_topics):
                phi[w, k] = math.exp(phi[w, k] - top)
                norm += phi[w, k]
            for k in range(n_topics):
                phi[w, k] /= norm
                gamma_new[k] += counts[w] * phi[w, k]
        delta = 0.0
        for k in range(n_topics):
            delta += abs(gamma_new[k] - gamma[k])
            gamma[k] = gamma_new[k]
        if delta / n_topics < tol:
            break
    return gamma, phi, iters


def _doc_fixed_point_numpy(elog_beta, words, counts, gamma0, alpha, eta_gamma, tol, max_inner):
    n_topics = elog_beta.shape[0]
    gamma = gamma0.copy()
    beta_part = elog_beta[:, words].T  # (n_words, n_topics)
    phi = np.zeros_like(beta_part)
    iters = 0
    for _ in range(max_inner):
        iters += 1
        elog_theta = _digamma_np(gamma) - _digamma_scalar(float(gamma.sum()))
        logits = beta_part + alpha * elog_theta[None, :]
        logits -= logits.max(axis=1, keepdims=True)
        phi = np.exp(logits)
        phi /= phi.sum(axis=1, keepdims=True)
        gamma_new = eta_gamma + counts @ phi
        delta = float(np.abs(gamma_new - gamma).sum())
        gamma = gamma_new
        if delta / n_topics < tol:
            break
    return gamma, phi, iters


def doc_fixed_point(elog_beta, words, counts, gamma0, alpha, eta_gamma, tol=1e-5, max_inner=100):
    """Run one document's site update to its fixed point.

    Alternates the token-topic softmax (word term untempered, document term
    scaled by alpha) with the topic-count accumulation until the mean
    absolute change in the document's topic parameters drops below tol.
    Returns (gamma, phi, inner_iterations).
    """
    elog_beta = np.ascontiguousarray(elog_beta, dtype=np.float64)
    words = np.ascontiguousarray(words, dtype=np.int64)
    counts = np.ascontiguousarray(counts, dtype=np.float64)
    gamma0 = np.ascontiguousarray(gamma0, dtype=np.float64)
    if _BACKEND == "numba":
        return _doc_fixed_point_numba(
            elog_beta, words, counts, gamma0, float(alpha), float(eta_gamma), float(tol), int(max_inner)
        )
    return _doc_fixed_point_numpy(
        elog_beta, words, counts, gamma0, float(alpha), float(eta_gamma), float(tol), int(max_inner)
    )


# --- fused mixture responsibility pass -------------------------------------


@njit(cache=True)
def _mixture_resp_numba(y, mu, sig2, log_pi, exponent):
    n, d = y.shape
    n_comp = mu.shape[0]
    resp = np.empty((n, n_comp))
    counts = np.zeros(n_comp)
    sums = np.zeros((n_comp, d))
    half_norm = np.empty(n_comp)
    for k in range(n_comp):
        sq = 0.0
        for j in range(d):
            sq += mu[k, j] * mu[k, j]
        half_norm[k] = 0.5 * (sq + d * sig2[k])
    for i in range(n):
        top = -1.0e308
        for k in range(n_comp):
            dot = 0.0
            for j in range(d):
                dot += y[i, j] * mu[k, j]
            val = exponent * (log_pi[k] + dot - half_norm[k])
            resp[i, k] = val
            if val > top:
                top = val
        norm = 0.0
        for k in range(n_comp):
            resp[i, k] = math.exp(resp[i, k] - top)
            norm += resp[i, k]
        for k in range(n_comp):
            resp[i, k] /= norm
            counts[k] += resp[i, k]
            for j in range(d):
                sums[k, j] += resp[i, k] * y[i, j]
    return resp, counts, sums


def _mixture_resp_numpy(y, mu, sig2, log_pi, exponent):
    d = y.shape[1]
    half_norm = 0.5 * ((mu**2).sum(axis=1) + d * sig2)
    logits = exponent * (log_pi[None, :] + y @ mu.T - half_norm[None, :])
    logits -= logits.max(axis=1, keepdims=True)
    resp = np.exp(logits)
    resp /= resp.sum(axis=1, keepdims=True)
    return resp, resp.sum(axis=0), resp.T @ y


def mixture_responsibilities(y, mu, sig2, log_pi, exponent):
    """Row-stochastic responsibilities for an isotropic Gaussian mixture,
    fused with the count and first-moment accumulators the component update
    needs. exponent scales the whole logit (1 for the untempered rule,
    alpha for the tempered one). Returns (resp, counts, sums)."""
    y = np.ascontiguousarray(y, dtype=np.float64)
    mu = np.ascontiguousarray(mu, dtype=np.float64)
    sig2 = np.ascontiguousarray(sig2, dtype=np.float64)
    log_pi = np.ascontiguousarray(log_pi, dtype=np.float64)
    if _BACKEND == "numba":
        return _mixture_resp_numba(y, mu, sig2, log_pi, float(exponent))
    return _mixture_resp_numpy(y, mu, sig2, log_pi, float(exponent))
