"""Compare the compiled and pure-numpy kernel backends.

Runs the per-document topic fixed point and the mixture responsibility
pass on moderately sized synthetic inputs under both backends, checks
that the outputs agree, and prints wall-clock timings. Usage:

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from alphavb import kernels
from alphavb.rng import Stream


def make_lda_inputs(n_topics=20, vocab=2000, n_words=400, seed=0):
    s = Stream(seed, 90)
    elog_beta = np.log(s.uniform((n_topics, vocab)) + 1e-3)
    elog_beta -= np.log(np.exp(elog_beta).sum(axis=1, keepdims=True))
    words = s.permutation(vocab)[:n_words].astype(np.int64)
    counts = (1.0 + s.integers(0, 5, size=n_words)).astype(np.float64)
    gamma0 = 1.0 + s.uniform(n_topics)
    return elog_beta, words, counts, gamma0


def make_gmm_inputs(n=20000, d=8, k=12, seed=1):
    s = Stream(seed, 91)
    y = s.normal((n, d)) * 3.0
    mu = s.normal((k, d))
    sig2 = 0.5 + s.uniform(k)
    log_pi = np.full(k, -np.log(k))
    return y, mu, sig2, log_pi


def time_backend(backend, repeat):
    kernels.set_backend(backend)
    elog_beta, words, counts, gamma0 = make_lda_inputs()
    y, mu, sig2, log_pi = make_gmm_inputs()

    # warm-up pass (also triggers compilation on the numba path)
    kernels.doc_fixed_point(elog_beta, words, counts, gamma0, 0.8, 0.05)
    kernels.mixture_responsibilities(y, mu, sig2, log_pi, 0.8)

    t0 = time.perf_counter()
    for _ in range(repeat):
        lda_out = kernels.doc_fixed_point(elog_beta, words, counts, gamma0, 0.8, 0.05)
    t_lda = (time.perf_counter() - t0) / repeat

    t0 = time.perf_counter()
    for _ in range(repeat):
        gmm_out = kernels.mixture_responsibilities(y, mu, sig2, log_pi, 0.8)
    t_gmm = (time.perf_counter() - t0) / repeat
    return t_lda, t_gmm, lda_out, gmm_out


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    results = {}
    for backend in ("numpy",) + (("numba",) if kernels.HAS_NUMBA else ()):
        t_lda, t_gmm, lda_out, gmm_out = time_backend(backend, args.repeat)
        results[backend] = (t_lda, t_gmm, lda_out, gmm_out)
        print(f"{backend:>6}: doc fixed point {t_lda * 1e3:8.2f} ms   "
              f"responsibilities {t_gmm * 1e3:8.2f} ms")

    if len(results) == 2:
        for idx, name in ((0, "gamma"), (1, "phi")):
            a = results["numpy"][2][idx]
            b = results["numba"][2][idx]
            assert np.allclose(a, b, atol=1e-10), f"lda {name} mismatch"
        for idx, name in ((0, "resp"), (1, "counts"), (2, "sums")):
            a = results["numpy"][3][idx]
            b = results["numba"][3][idx]
            assert np.allclose(a, b, atol=1e-10), f"gmm {name} mismatch"
        speed_lda = results["numpy"][0][0] / results["numba"][0][0]
        speed_gmm = results["numpy"][0][1] / results["numba"][0][1]
        print(f"numba speedup: doc fixed point x{speed_lda:.1f}, "
              f"responsibilities x{speed_gmm:.1f}")
        print("backend outputs agree within 1e-10")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
