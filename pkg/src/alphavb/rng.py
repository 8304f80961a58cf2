"""Deterministic random streams built on the Philox counter-based generator.

Every randomized routine in the package draws from a `Stream` keyed by a
64-bit seed plus an integer path, so independent substreams can be derived
for replications, components, and initializations without correlation.
Normals are produced by inverse-CDF on open-interval uniforms (no rejection
sampling), which keeps the byte-for-byte output identical across platforms.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_TWO53 = float(1 << 53)


class Stream:
    """A seeded, path-addressable source of uniforms, normals and integers."""

    def __init__(self, seed: int, *path: int):
        if not isinstance(seed, (int, np.integer)):
            raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
        if seed < 0:
            raise ValueError("seed must be nonnegative")
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def child(self, *path: int) -> "Stream":
        """Derive an independent substream under an extended path."""
        return Stream(self.seed, *(self.path + tuple(int(p) for p in path)))

    def uniform(self, size=None) -> np.ndarray:
        """Uniforms on the open interval (0, 1), safe to push through ndtri."""
        raw = self._gen.integers(0, 1 << 53, size=size, dtype=np.uint64)
        return (np.asarray(raw, dtype=np.float64) + 0.5) / _TWO53

    def normal(self, size=None) -> np.ndarray:
        return ndtri(self.uniform(size=size))

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        """Integers in [low, high), matching numpy's half-open convention."""
        return self._gen.integers(low, high, size=size)

    def categorical(self, probs: np.ndarray, size=None) -> np.ndarray:
        """Draw category indices by inverse CDF on the probability vector."""
        p = np.asarray(probs, dtype=np.float64)
        cdf = np.cumsum(p)
        cdf /= cdf[-1]
        u = self.uniform(size=size)
        return np.searchsorted(cdf, u, side="right")

    def permutation(self, n: int) -> np.ndarray:
        """A seeded permutation of range(n) via argsort of uniforms."""
        return np.argsort(self.uniform(size=n), kind="stable")


def stream(seed: int, *path: int) -> Stream:
    return Stream(seed, *path)
