"""Finite-sample risk experiments on exactly enumerable models.

The lab checks, by direct enumeration, that the fitted tempered posterior
satisfies the oracle-style risk inequality: with probability at least
1 - zeta over the data, for every q in the variational family,

    E_{q_hat}[ per-obs Renyi divergence to the truth ]
        <= alpha/(n(1-alpha)) * Psi(q) + log(1/zeta)/(n(1-alpha)),

where Psi is the tempered objective anchored at the true parameter. Since
the right side is smallest at the family's Psi-minimizer and the left side
only involves that minimizer, a replication violates the bound for some q
exactly when it violates it at the argmin, which is what each replication
records. The enumerated family pairs a grid of parameter laws (plus, for
every site configuration, the exact Gibbs-optimal parameter law) with a
grid of per-site latent laws, so the family optimum is the exact tempered
variational solution over that product set.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .divergences import DiscreteDistribution, DivergenceKind, discrete_divergence, renyi
from .gaussian_vi import GaussianComponentSet, mixture_log_density
from .objective import ModelSpec
from .rng import Stream

_SIZE_CAP = 1e7


@dataclass(frozen=True)
class TinyDiscreteModel:
    """A mixture model small enough to enumerate exactly.

    Parameters live on a finite grid: theta_grid[g] = (emit, pi) where emit
    is the (k, m) row-stochastic emission table over obs_space and pi the
    mixing weights. prior_weights is the (strictly positive) prior over the
    grid, truth_index the data-generating atom.
    """

    theta_grid: tuple
    prior_weights: np.ndarray
    obs_space: np.ndarray
    truth_index: int

    def __post_init__(self):
        grid = []
        k = None
        m = None
        for emit, pi in self.theta_grid:
            emit = np.atleast_2d(np.asarray(emit, dtype=np.float64))
            pi = np.asarray(pi, dtype=np.float64)
            if k is None:
                k, m = emit.shape
            if emit.shape != (k, m) or pi.shape != (k,):
                raise ValueError("all grid atoms must share (k, m) shapes")
            if np.any(emit <= 0) or np.any(np.abs(emit.sum(axis=1) - 1.0) > 1e-10):
                raise ValueError("emission rows must be strictly positive simplexes")
            if np.any(pi <= 0) or abs(pi.sum() - 1.0) > 1e-10:
                raise ValueError("pi must be a strictly positive simplex")
            grid.append((emit, pi))
        w = np.asarray(self.prior_weights, dtype=np.float64)
        if w.shape != (len(grid),) or np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("prior_weights must be a strictly positive simplex over the grid")
        obs = np.asarray(self.obs_space)
        if obs.size != m:
            raise ValueError("obs_space must have one label per emission column")
        if not (0 <= self.truth_index < len(grid)):
            raise ValueError("truth_index out of range")
        object.__setattr__(self, "theta_grid", tuple(grid))
        object.__setattr__(self, "prior_weights", w)
        object.__setattr__(self, "obs_space", obs)

    @property
    def k(self) -> int:
        return self.theta_grid[0][0].shape[0]

    @property
    def n_atoms(self) -> int:
        return len(self.theta_grid)

    @property
    def n_obs_values(self) -> int:
        return self.obs_space.size

    def log_lik(self, y: int, emit: np.ndarray, s: int) -> float:
        """Complete-data observation term; y is an index into obs_space."""
        return float(np.log(emit[s, y]))

    def marginal_pmf(self, g: int) -> np.ndarray:
        emit, pi = self.theta_grid[g]
        return pi @ emit

    def sample_data(self, stream: Stream, n: int) -> np.ndarray:
        return stream.categorical(self.marginal_pmf(self.truth_index), size=n)

    def per_obs_divergence(self, alpha: float) -> np.ndarray:
        """Order-alpha Renyi divergence of each atom's observation law from
        the truth's; the iid product divergence is n times this."""
        truth = DiscreteDistribution(self.marginal_pmf(self.truth_index))
        kind = renyi(alpha)
        out = np.zeros(self.n_atoms)
        for g in range(self.n_atoms):
            if g == self.truth_index:
                continue
            out[g] = discrete_divergence(kind, DiscreteDistribution(self.marginal_pmf(g)), truth)
        return out

    def to_model_spec(self) -> ModelSpec:
        def prior_sampler(stream: Stream):
            g = int(stream.categorical(self.prior_weights))
            return self.theta_grid[g]

        return ModelSpec(
            k=self.k,
            log_lik=lambda y, emit, s: self.log_lik(y, emit, s),
            log_latent_prior=lambda s, pi: float(np.log(pi[s])),
            prior_log_density=lambda theta: 0.0,
            prior_sampler=prior_sampler,
        )


@dataclass(frozen=True)
class RiskEstimate:
    """A risk value with its standard error and the sampling provenance;
    the value may dip below zero only within Monte Carlo noise (three
    standard errors)."""

    value: float
    standard_error: float
    divergence: DivergenceKind | None = None
    n_theta_samples: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.standard_error < 0:
            raise ValueError("standard_error must be nonnegative")
        if self.value < -3.0 * self.standard_error:
            raise ValueError("risk estimate is negative beyond three standard errors")


@dataclass(frozen=True)
class KLNeighborhoodSpec:
    """Radii of the prior-mass neighborhoods for the two prior blocks."""

    eps_pi: float
    eps_mu: float

    def __post_init__(self):
        if not (0.0 < self.eps_pi < 1.0) or not (0.0 < self.eps_mu < 1.0):
            raise ValueError("both radii must lie strictly inside (0, 1)")

    @property
    def combined_sq(self) -> float:
        return self.eps_pi**2 + self.eps_mu**2


def exact_variational_risk(tiny: TinyDiscreteModel, theta_weights, alpha: float) -> RiskEstimate:
    """Exact risk of a grid law: the q-average of the per-observation
    order-alpha Renyi divergence from the truth."""
    w = np.asarray(theta_weights, dtype=np.float64)
    if w.shape != (tiny.n_atoms,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
        raise ValueError("theta_weights must be a simplex over the grid")
    return RiskEstimate(
        float(w @ tiny.per_obs_divergence(alpha)), 0.0, divergence=renyi(alpha)
    )


def estimate_variational_risk(
    theta_sampler,
    per_theta_divergence,
    kind: DivergenceKind | None = None,
    n_theta_samples: int = 1000,
    seed: int = 0,
) -> RiskEstimate:
    """Monte Carlo risk of a fitted parameter law.

    Draws theta_1..theta_T via theta_sampler(stream, T), evaluates the
    per-observation divergence from the truth at each draw through
    per_theta_divergence(theta) (closed form or itself Monte Carlo), and
    averages. Divergence evaluation failures propagate to the caller."""
    if n_theta_samples < 2:
        raise ValueError("n_theta_samples must be at least 2")
    draws = theta_sampler(Stream(seed, 66), n_theta_samples)
    values = np.array([float(per_theta_divergence(theta)) for theta in draws])
    if values.shape != (n_theta_samples,):
        raise ValueError("theta_sampler must yield exactly n_theta_samples draws")
    return RiskEstimate(
        value=float(values.mean()),
        standard_error=float(values.std(ddof=1) / np.sqrt(n_theta_samples)),
        divergence=kind,
        n_theta_samples=n_theta_samples,
        seed=seed,
    )


@dataclass(frozen=True)
class RiskCheckRow:
    replication: int
    seed: int
    lhs: float
    rhs: float
    q_index: int
    violated: bool


@dataclass(frozen=True)
class RiskCheckReport:
    rows: tuple
    alpha: float
    n_obs: int
    zeta: float

    @property
    def violation_rate(self) -> float:
        if not self.rows:
            return 0.0
        return sum(r.violated for r in self.rows) / len(self.rows)

    @property
    def slacks(self) -> np.ndarray:
        """Bound minus risk per replication; negative entries are violations."""
        return np.array([r.rhs - r.lhs for r in self.rows])


def write_check_rows(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["replication", "seed", "lhs", "rhs", "q_index", "violated"])
        for r in rows:
            writer.writerow(
                [r.replication, r.seed, f"{r.lhs:.17g}", f"{r.rhs:.17g}", r.q_index, int(r.violated)]
            )


def _default_site_options(k: int) -> np.ndarray:
    if k == 1:
        return np.ones((1, 1))
    if k == 2:
        return np.array([[0.1, 0.9], [0.5, 0.5], [0.9, 0.1]])
    options = [np.full(k, 1.0 / k)]
    for s in range(k):
        row = np.full(k, 0.1 / (k - 1))
        row[s] = 0.9
        options.append(row)
    return np.asarray(options)


def _theta_weight_grid(n_atoms: int, n_points: int) -> np.ndarray:
    if n_atoms == 2:
        w = np.linspace(0.0, 1.0, n_points)
        return np.stack([w, 1.0 - w], axis=1)
    rows = [np.full(n_atoms, 1.0 / n_atoms)]
    for g in range(n_atoms):
        row = np.zeros(n_atoms)
        row[g] = 1.0
        rows.append(row)
    return np.asarray(rows)


def evaluate_bound_at(
    tiny: TinyDiscreteModel,
    alpha: float,
    data: np.ndarray,
    theta_weights,
    site_rows,
    zeta: float,
    psi_inflation: float = 0.0,
):
    """Risk inequality sides for one fixed factorized q on one dataset.

    site_rows is an (n, k) array of per-site latent laws. Returns
    (lhs, rhs, psi) computed by direct per-site summation, independent of
    the vectorized enumeration in check_risk_inequality."""
    if not (0.0 < alpha < 1.0):
        raise ValueError("the risk inequality needs alpha strictly inside (0, 1)")
    data = np.asarray(data, dtype=np.int64)
    w = np.asarray(theta_weights, dtype=np.float64)
    rows = np.atleast_2d(np.asarray(site_rows, dtype=np.float64))
    n_obs = data.size
    if rows.shape != (n_obs, tiny.k):
        raise ValueError("site_rows must hold one latent law per observation")
    fit = 0.0
    for g in range(tiny.n_atoms):
        if w[g] == 0.0:
            continue
        emit, pi = tiny.theta_grid[g]
        total = 0.0
        for i in range(n_obs):
            for s in range(tiny.k):
                qs = rows[i, s]
                if qs > 0.0:
                    total += qs * (
                        tiny.log_lik(int(data[i]), emit, s) + np.log(pi[s]) - np.log(qs)
                    )
        fit += w[g] * total
    kl = 0.0
    for g in range(tiny.n_atoms):
        if w[g] > 0.0:
            kl += w[g] * (np.log(w[g]) - np.log(tiny.prior_weights[g]))
    loglik_truth = float(np.log(tiny.marginal_pmf(tiny.truth_index))[data].sum())
    psi = -fit + loglik_truth + kl / alpha
    lhs = float(w @ tiny.per_obs_divergence(alpha))
    rhs = (
        alpha / (n_obs * (1.0 - alpha)) * (psi + psi_inflation)
        + np.log(1.0 / zeta) / (n_obs * (1.0 - alpha))
    )
    return lhs, float(rhs), float(psi)


def check_risk_inequality(
    tiny: TinyDiscreteModel,
    alpha: float,
    n_obs: int,
    n_replications: int,
    zeta: float = 0.1,
    site_options: np.ndarray | None = None,
    n_theta_weights: int = 5,
    psi_inflation: float = 0.0,
    seed: int = 0,
    csv_path=None,
) -> RiskCheckReport:
    """Replicated check of the finite-sample risk inequality.

    Each replication draws n_obs observations from the truth atom, finds
    the tempered-objective minimizer over the enumerated family, and tests
    the bound there (equivalent to testing it for every family member).
    psi_inflation >= 0 adds a constant to the objective before assembling
    the right side, which exercises the surrogate-objective variant of the
    bound. Rows are written to csv_path when given."""
    if not (0.0 < alpha < 1.0):
        raise ValueError("the risk inequality needs alpha strictly inside (0, 1)")
    if not (0.0 < zeta < 1.0):
        raise ValueError("zeta must lie strictly inside (0, 1)")
    if psi_inflation < 0.0:
        raise ValueError("psi_inflation must be nonnegative")
    if n_obs < 1 or n_replications < 1:
        raise ValueError("n_obs and n_replications must be positive")
    k = tiny.k
    n_atoms = tiny.n_atoms
    if site_options is None:
        site_options = _default_site_options(k)
    site_options = np.atleast_2d(np.asarray(site_options, dtype=np.float64))
    if site_options.shape[1] != k or np.any(site_options < 0):
        raise ValueError("site options must be simplex rows over the latent alphabet")
    n_opt = site_options.shape[0]
    n_conf = n_opt**n_obs
    if n_conf * n_atoms > _SIZE_CAP or n_atoms * k**n_obs > _SIZE_CAP:
        raise ValueError("enumeration would exceed the 1e7 size cap")

    # per-atom complete-data table: joint[g, s, y] = log(emit[s, y] * pi[s])
    n_vals = tiny.n_obs_values
    joint = np.empty((n_atoms, k, n_vals))
    for g, (emit, pi) in enumerate(tiny.theta_grid):
        joint[g] = np.log(emit) + np.log(pi)[:, None]

    # entropy of each site option (0 log 0 = 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        opt_logs = np.where(site_options > 0, np.log(site_options), 0.0)
    opt_entropy = -np.sum(site_options * opt_logs, axis=1)

    # all site-option configurations, site 0 slowest-varying
    conf_idx = np.array(
        np.unravel_index(np.arange(n_conf), (n_opt,) * n_obs)
    ).T  # (n_conf, n_obs)

    weight_grid = _theta_weight_grid(n_atoms, n_theta_weights)
    log_prior = np.log(tiny.prior_weights)
    with np.errstate(divide="ignore"):
        log_wgrid = np.where(weight_grid > 0, np.log(weight_grid), 0.0)
    kl_grid = np.sum(weight_grid * (log_wgrid - log_prior[None, :]), axis=1)
    risk_vector = tiny.per_obs_divergence(alpha)
    truth_log_marg = np.log(tiny.marginal_pmf(tiny.truth_index))

    scale = alpha / (n_obs * (1.0 - alpha))
    tail = np.log(1.0 / zeta) / (n_obs * (1.0 - alpha))
    n_weight_options = weight_grid.shape[0] + 1  # grid rows plus the Gibbs law

    rows = []
    parent = Stream(seed, 61)
    for rep in range(n_replications):
        rep_seed = seed + rep
        data = tiny.sample_data(Stream(rep_seed, 62), n_obs)
        # site_terms[i, o, g]: option o's bound contribution at site i, atom g
        site_ll = joint[:, :, data]  # (G, K, n)
        site_terms = (
            np.einsum("os,gsi->iog", site_options, site_ll) + opt_entropy[None, :, None]
        )
        # table[c, g]: the summed bound for configuration c under atom g
        gathered = site_terms[np.arange(n_obs)[None, :], conf_idx, :]  # (n_conf, n, G)
        table = gathered.sum(axis=1)
        loglik_truth = float(truth_log_marg[data].sum())

        # grid parameter laws: psi[c, w] for every config and weight row
        fit = table @ weight_grid.T  # (n_conf, n_w)
        psi_grid = -fit + loglik_truth + kl_grid[None, :] / alpha
        # Gibbs-optimal parameter law per config (exact coordinate optimum)
        gibbs_logits = log_prior[None, :] + alpha * table
        log_norm = logsumexp(gibbs_logits, axis=1)
        psi_gibbs = loglik_truth - log_norm / alpha  # closed form at the optimum
        gibbs_weights = np.exp(gibbs_logits - log_norm[:, None])

        best_grid_flat = int(np.argmin(psi_grid))
        best_conf_grid, best_w = np.unravel_index(best_grid_flat, psi_grid.shape)
        best_conf_gibbs = int(np.argmin(psi_gibbs))
        if psi_gibbs[best_conf_gibbs] <= psi_grid[best_conf_grid, best_w]:
            psi_min = float(psi_gibbs[best_conf_gibbs])
            q_weights = gibbs_weights[best_conf_gibbs]
            q_index = best_conf_gibbs * n_weight_options + (n_weight_options - 1)
        else:
            psi_min = float(psi_grid[best_conf_grid, best_w])
            q_weights = weight_grid[best_w]
            q_index = int(best_conf_grid) * n_weight_options + int(best_w)

        lhs = float(q_weights @ risk_vector)
        rhs = scale * (psi_min + psi_inflation) + tail
        rows.append(
            RiskCheckRow(
                replication=rep,
                seed=rep_seed,
                lhs=lhs,
                rhs=float(rhs),
                q_index=q_index,
                violated=bool(lhs > rhs),
            )
        )
    report = RiskCheckReport(tuple(rows), alpha, n_obs, zeta)
    if csv_path is not None:
        write_check_rows(csv_path, rows)
    return report


def _wilson_interval(hits: int, n: int, z: float = 1.959963984540054):
    if n == 0:
        return 0.0, 1.0
    p = hits / n
    denom = 1.0 + z**2 / n
    center = (p + z**2 / (2 * n)) / denom
    half = z * np.sqrt(p * (1.0 - p) / n + z**2 / (4 * n**2)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class PriorMassBound:
    """Assembled right side of the prior-mass risk bound, with the Monte
    Carlo evidence behind it."""

    rhs: float
    component_masses: np.ndarray
    mass_ci_low: np.ndarray
    mass_ci_high: np.ndarray
    radius_sq: float
    failure_prob: float
    d_constant: float
    lower_bound_only: bool = False


def prior_mass_bound(
    truth_means: np.ndarray,
    mu0: np.ndarray,
    sigma0_sq: float,
    neigh: KLNeighborhoodSpec,
    alpha: float,
    n_obs: int,
    d_constant: float = 2.0,
    n_mc: int = 200_000,
    seed: int = 0,
) -> PriorMassBound:
    """Assemble the risk bound's right side for the known-weights mixture.

    Per component, the neighborhood constrains both the per-state KL
    (|delta|^2 / 2 <= eps^2) and its second moment (KL^2 + |delta|^2 <=
    eps^2); the binding radius is |delta|^2 <= 2(sqrt(1+eps^2) - 1). Ball
    masses under the N(mu0, sigma0_sq I) prior are estimated per component
    by seeded Monte Carlo (independent blocks multiply; the known-weights
    block has mass one) and reported with 95% Wilson intervals. The bound
    fails with probability at most 5 / ((D-1)^2 n (eps_pi^2 + eps_mu^2)).
    A component with zero hits has no point estimate; its Wilson upper
    limit stands in for the mass and the result is flagged as a lower
    bound on the true right side."""
    if not (0.0 < alpha < 1.0):
        raise ValueError("the bound needs alpha strictly inside (0, 1)")
    if d_constant <= 1.0:
        raise ValueError("d_constant must exceed 1")
    means = np.atleast_2d(np.asarray(truth_means, dtype=np.float64))
    mu0 = np.atleast_1d(np.asarray(mu0, dtype=np.float64))
    k, dim = means.shape
    eps_sq = neigh.eps_mu**2
    radius_sq = 2.0 * (np.sqrt(1.0 + eps_sq) - 1.0)
    masses = np.empty(k)
    lows = np.empty(k)
    highs = np.empty(k)
    masses_for_rhs = np.empty(k)
    lower_bound_only = False
    sd = float(np.sqrt(sigma0_sq))
    for comp in range(k):
        draws = mu0[None, :] + sd * Stream(seed, 63, comp).normal((n_mc, dim))
        hits = int(np.sum(((draws - means[comp]) ** 2).sum(axis=1) <= radius_sq))
        masses[comp] = hits / n_mc
        lows[comp], highs[comp] = _wilson_interval(hits, n_mc)
        if hits == 0:
            lower_bound_only = True
            masses_for_rhs[comp] = highs[comp]
        else:
            masses_for_rhs[comp] = masses[comp]
    combined = neigh.combined_sq
    rhs = (
        d_constant * alpha / (1.0 - alpha) * combined
        - float(np.sum(np.log(masses_for_rhs))) / (n_obs * (1.0 - alpha))
    )
    failure = 5.0 / ((d_constant - 1.0) ** 2 * n_obs * combined)
    return PriorMassBound(
        rhs=float(rhs),
        component_masses=masses,
        mass_ci_low=lows,
        mass_ci_high=highs,
        radius_sq=float(radius_sq),
        failure_prob=float(failure),
        d_constant=float(d_constant),
        lower_bound_only=lower_bound_only,
    )


def gmm_mixture_risk(
    mu_tilde: np.ndarray,
    sigma_tilde_sq: np.ndarray,
    truth_means: np.ndarray,
    pi: np.ndarray,
    alpha: float,
    n_theta_samples: int = 30,
    n_mc: int = 4000,
    seed: int = 0,
) -> RiskEstimate:
    """Monte Carlo risk of a fitted mixture law: draw component means from
    the fitted Gaussian factors, measure the order-alpha Renyi divergence
    of each drawn mixture from the true mixture by importance sampling
    under the truth, and average."""
    mu_tilde = np.atleast_2d(np.asarray(mu_tilde, dtype=np.float64))
    truth_means = np.atleast_2d(np.asarray(truth_means, dtype=np.float64))
    k, dim = truth_means.shape
    pi = np.asarray(pi, dtype=np.float64)
    eye = np.broadcast_to(np.eye(dim), (k, dim, dim))
    truth_set = GaussianComponentSet(pi, truth_means, eye)
    stream = Stream(seed, 64)

    labels = stream.categorical(pi, size=n_mc)
    eps = stream.normal((n_mc, dim))
    draws_from_truth = truth_means[labels] + eps

    log_pstar = mixture_log_density(truth_set, draws_from_truth)
    sig = np.sqrt(np.asarray(sigma_tilde_sq, dtype=np.float64))
    values = np.empty(n_theta_samples)
    for t in range(n_theta_samples):
        noise = stream.child(t).normal((k, dim))
        mu_t = mu_tilde + sig[:, None] * noise
        qset = GaussianComponentSet(pi, mu_t, eye)
        log_p = mixture_log_density(qset, draws_from_truth)
        z = alpha * (log_p - log_pstar)
        zmax = float(z.max())
        values[t] = (zmax + np.log(np.mean(np.exp(z - zmax)))) / (alpha - 1.0)
    value = float(values.mean())
    se = float(values.std(ddof=1) / np.sqrt(n_theta_samples)) if n_theta_samples > 1 else 0.0
    return RiskEstimate(
        value, se, divergence=renyi(alpha), n_theta_samples=n_theta_samples, seed=seed
    )


@dataclass(frozen=True)
class RateFit:
    """Least-squares line through (log n, log risk) with its residuals."""

    slope: float
    intercept: float
    residuals: np.ndarray

    @property
    def max_abs_residual(self) -> float:
        return float(np.max(np.abs(self.residuals)))


def rate_slope(ns, risks) -> RateFit:
    """Least-squares fit of log(risk) against log(n) over a sample-size grid."""
    ns = np.asarray(ns, dtype=np.float64)
    risks = np.asarray(risks, dtype=np.float64)
    if ns.shape != risks.shape or ns.size < 4:
        raise ValueError("need matching arrays with at least four grid points")
    if np.any(ns <= 0) or np.any(risks <= 0):
        raise ValueError("sample sizes and risks must be positive")
    slope, intercept = np.polyfit(np.log(ns), np.log(risks), 1)
    resid = np.log(risks) - (slope * np.log(ns) + intercept)
    return RateFit(float(slope), float(intercept), resid)
