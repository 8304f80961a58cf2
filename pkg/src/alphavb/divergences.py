"""Divergences between discrete and Gaussian densities, plus a Monte Carlo
Renyi estimator for densities only available through their log-pdf.

Conventions. KL and the second-moment divergence V are taken in nats.
Squared Hellinger distance is the integral of (sqrt(p) - sqrt(q))^2, so it
lives in [0, 2] and satisfies  D_{1/2}(p, q) = -2 * log(1 - H2/2)  exactly.
Renyi orders are restricted to (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_SIMPLEX_TOL = 1e-12


class DivergenceError(ValueError):
    """Base class for divergence domain errors."""


class AbsoluteContinuityError(DivergenceError):
    """p puts mass where q has none, so KL(p, q) and V(p, q) are undefined."""


class MutualSingularityError(DivergenceError):
    """p and q share no support, so the Renyi divergence diverges."""


@dataclass(frozen=True)
class DivergenceKind:
    name: str
    alpha: float | None = None

    def __post_init__(self):
        if self.name not in ("kl", "renyi", "hellinger_sq", "v"):
            raise ValueError(f"unknown divergence kind {self.name!r}")
        if self.name == "renyi":
            if self.alpha is None or not (0.0 < self.alpha < 1.0):
                raise ValueError("renyi order must lie strictly inside (0, 1)")
        elif self.alpha is not None:
            raise ValueError(f"{self.name} takes no order parameter")


KL = DivergenceKind("kl")
HELLINGER_SQ = DivergenceKind("hellinger_sq")
V = DivergenceKind("v")


def renyi(alpha: float) -> DivergenceKind:
    return DivergenceKind("renyi", float(alpha))


@dataclass(frozen=True)
class DiscreteDistribution:
    """A validated probability vector over a finite alphabet."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probs must be a nonempty 1-d vector")
        if np.any(p < 0):
            raise ValueError("probs must be nonnegative")
        if abs(p.sum() - 1.0) > _SIMPLEX_TOL:
            raise ValueError(f"probs must sum to 1 within {_SIMPLEX_TOL}")
        object.__setattr__(self, "probs", p)


@dataclass(frozen=True)
class GaussianDensity:
    """A multivariate normal given by mean vector and positive definite cov."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        c = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if m.ndim != 1 or c.shape != (m.size, m.size):
            raise ValueError("mean must be (d,) and cov must be (d, d)")
        if not np.allclose(c, c.T, atol=1e-10):
            raise ValueError("cov must be symmetric")
        try:
            np.linalg.cholesky(c)
        except np.linalg.LinAlgError:
            raise ValueError("cov must be positive definite") from None
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", c)

    @property
    def dim(self) -> int:
        return self.mean.size


def _as_probs(dist) -> np.ndarray:
    if isinstance(dist, DiscreteDistribution):
        return dist.probs
    return DiscreteDistribution(np.asarray(dist, dtype=np.float64)).probs


def discrete_divergence(kind: DivergenceKind, p, q) -> float:
    """Divergence between two finite distributions on the same alphabet.

    Zero-probability states of p contribute nothing (0 * log 0 = 0). KL and
    V raise AbsoluteContinuityError when p charges a state q does not;
    the Renyi order-alpha divergence raises MutualSingularityError when the
    supports are disjoint.
    """
    pv, qv = _as_probs(p), _as_probs(q)
    if pv.shape != qv.shape:
        raise ValueError("p and q must live on the same alphabet")
    mask = pv > 0
    if kind.name in ("kl", "v"):
        if np.any(qv[mask] == 0):
            raise AbsoluteContinuityError(
                "p charges a state with zero q-probability"
            )
        log_ratio = np.log(pv[mask] / qv[mask])
        if kind.name == "kl":
            return float(np.sum(pv[mask] * log_ratio))
        return float(np.sum(pv[mask] * log_ratio**2))
    if kind.name == "hellinger_sq":
        return float(np.sum((np.sqrt(pv) - np.sqrt(qv)) ** 2))
    # renyi, order in (0, 1): terms with q = 0 vanish since alpha < 1
    both = mask & (qv > 0)
    if not np.any(both):
        raise MutualSingularityError("p and q have disjoint supports")
    a = kind.alpha
    m = np.sum(pv[both] ** a * qv[both] ** (1.0 - a))
    return float(np.log(m) / (a - 1.0))


def _solve_psd(c: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    lo = np.linalg.cholesky(c)
    return np.linalg.solve(lo.T, np.linalg.solve(lo, rhs))


def _logdet(c: np.ndarray) -> float:
    lo = np.linalg.cholesky(c)
    return 2.0 * float(np.sum(np.log(np.diag(lo))))


def gaussian_divergence(kind: DivergenceKind, a: GaussianDensity, b: GaussianDensity) -> float:
    """Closed-form divergence between two Gaussians.

    KL, V and squared Hellinger are exact for any positive definite
    covariances. The Renyi closed form is only implemented for (numerically)
    equal covariances, where it reduces to alpha/2 times the squared
    Mahalanobis distance between the means; for unequal covariances use
    monte_carlo_renyi instead.
    """
    if not isinstance(a, GaussianDensity) or not isinstance(b, GaussianDensity):
        raise TypeError("a and b must be GaussianDensity instances")
    if a.dim != b.dim:
        raise ValueError("dimension mismatch")
    d = a.dim
    delta = a.mean - b.mean
    if kind.name == "kl":
        binv_delta = _solve_psd(b.cov, delta)
        tr = float(np.trace(_solve_psd(b.cov, a.cov)))
        return 0.5 * (tr + float(delta @ binv_delta) - d + _logdet(b.cov) - _logdet(a.cov))
    if kind.name == "v":
        # V = Var_a[log(a/b)] + KL^2 for the Gaussian quadratic log-ratio
        kl = gaussian_divergence(KL, a, b)
        a_inv = _solve_psd(a.cov, np.eye(d))
        b_inv = _solve_psd(b.cov, np.eye(d))
        m_mat = b_inv - a_inv
        bvec = b_inv @ delta
        msigma = m_mat @ a.cov
        var = 0.5 * float(np.trace(msigma @ msigma)) + float(bvec @ a.cov @ bvec)
        return var + kl * kl
    if kind.name == "hellinger_sq":
        mix = 0.5 * (a.cov + b.cov)
        quad = float(delta @ _solve_psd(mix, delta))
        log_bc = 0.25 * _logdet(a.cov) + 0.25 * _logdet(b.cov) - 0.5 * _logdet(mix) - 0.125 * quad
        return 2.0 * (1.0 - float(np.exp(log_bc)))
    # renyi
    if not np.allclose(a.cov, b.cov, rtol=1e-10, atol=1e-12):
        raise ValueError(
            "closed-form Renyi requires equal covariances; "
            "use monte_carlo_renyi for the general case"
        )
    quad = float(delta @ _solve_psd(a.cov, delta))
    return 0.5 * kind.alpha * quad


def monte_carlo_renyi(log_p, log_pstar, alpha: float, sampler_from_pstar, n_samples: int):
    """Importance estimate of the order-alpha Renyi divergence D(p, pstar).

    Draws x_1..x_n from pstar via the supplied seeded sampler and returns
    (estimate, standard_error) where the estimate is
    log(mean(exp(alpha * (log_p - log_pstar)))) / (alpha - 1) and the error
    is the delta-method standard error of the log-mean. Raises
    MutualSingularityError when every weight underflows to zero.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie strictly inside (0, 1)")
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    x = sampler_from_pstar(n_samples)
    z = alpha * (np.asarray(log_p(x), dtype=np.float64) - np.asarray(log_pstar(x), dtype=np.float64))
    zmax = np.max(z)
    if not np.isfinite(zmax):
        raise MutualSingularityError("all importance weights underflow to zero")
    w = np.exp(z - zmax)
    mean_w = float(np.mean(w))
    sd_w = float(np.std(w, ddof=1))
    estimate = (zmax + np.log(mean_w)) / (alpha - 1.0)
    se = sd_w / (np.sqrt(n_samples) * mean_w * abs(alpha - 1.0))
    return float(estimate), float(se)
