"""Tests for the Gaussian mixture variational family and surrogate bound."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import multivariate_normal

from alphavb.gaussian_vi import (
    GaussianComponentSet,
    ParametricTarget,
    fit_gaussian_vi,
    gaussian_cross_density,
    gaussian_log_pdf,
    mixture_log_density,
    surrogate_elbo,
    surrogate_entropy_term,
    surrogate_gap_exact_j1,
    surrogate_gap_mc,
)
from alphavb.objective import AlphaConfig
from alphavb.rng import Stream

# Frozen by hand: standard normal density at its mean, 1/sqrt(2*pi).
UNIT_GAUSSIAN_AT_MEAN = 0.3989422804014327
# Frozen by hand: overlap of N(0, 1) with itself, N(0; 0, 2) = 1/sqrt(4*pi).
CROSS_DENSITY_SELF = 0.28209479177387814
# Frozen by hand: one-component surrogate slack per dimension, (1 - log 2) / 2.
GAP_J1_PER_DIM = 0.15342640972002733
# Frozen by hand: surrogate bound with target = prior = q = N(0, 1); the true
# bound is 0, so the surrogate sits exactly one J=1 slack below it.
PRIOR_ONLY_SURROGATE = -0.15342640972002733

_LOG_2PI = float(np.log(2.0 * np.pi))


def _random_qset(stream: Stream, n_components: int, dim: int) -> GaussianComponentSet:
    weights = stream.uniform(n_components) + 0.2
    weights /= weights.sum()
    means = 2.0 * stream.normal((n_components, dim))
    covs = np.empty((n_components, dim, dim))
    for j in range(n_components):
        root = stream.normal((dim, dim))
        covs[j] = root @ root.T + 0.5 * np.eye(dim)
    return GaussianComponentSet(weights, means, covs)


def _gaussian_entropy(cov: np.ndarray) -> float:
    dim = cov.shape[0]
    return 0.5 * (dim * (1.0 + _LOG_2PI) + float(np.linalg.slogdet(cov)[1]))


def _entropy_mc(qset: GaussianComponentSet, n_samples: int, seed: int):
    """Independent Monte Carlo estimate of the mixture entropy."""
    stream = Stream(seed, 9)
    means = np.empty(qset.n_components)
    variances = np.empty(qset.n_components)
    for j in range(qset.n_components):
        root = np.linalg.cholesky(qset.covs[j])
        draws = qset.means[j][None, :] + stream.child(j).normal((n_samples, qset.dim)) @ root.T
        vals = mixture_log_density(qset, draws)
        means[j] = vals.mean()
        variances[j] = vals.var(ddof=1)
    entropy = -float(qset.weights @ means)
    se = float(np.sqrt((qset.weights**2) @ variances / n_samples))
    return entropy, se


def _conjugate_target(y, sigma_sq: float, v0: float, with_hooks: bool) -> ParametricTarget:
    """Known-noise Gaussian mean estimation with a centered Gaussian prior."""
    y = np.asarray(y, dtype=np.float64)
    n = y.size

    def prior_log_density(theta):
        th = np.atleast_2d(theta)[:, 0]
        return -0.5 * (_LOG_2PI + np.log(v0)) - th**2 / (2.0 * v0)

    def log_joint(theta):
        th = np.atleast_2d(theta)[:, 0]
        sq = ((y[None, :] - th[:, None]) ** 2).sum(axis=1)
        loglik = -0.5 * n * (_LOG_2PI + np.log(sigma_sq)) - sq / (2.0 * sigma_sq)
        return loglik + prior_log_density(theta)

    if not with_hooks:
        return ParametricTarget(log_joint, prior_log_density, 1)

    def expected_log_lik(mean, cov):
        sq = float(((y - mean[0]) ** 2).sum() + n * cov[0, 0])
        return -0.5 * n * (_LOG_2PI + np.log(sigma_sq)) - sq / (2.0 * sigma_sq)

    def expected_log_prior(mean, cov):
        return -0.5 * (_LOG_2PI + np.log(v0)) - (mean[0] ** 2 + cov[0, 0]) / (2.0 * v0)

    return ParametricTarget(log_joint, prior_log_density, 1, expected_log_lik, expected_log_prior)


def _fractional_posterior(y, sigma_sq: float, v0: float, alpha: float):
    y = np.asarray(y, dtype=np.float64)
    precision = 1.0 / v0 + alpha * y.size / sigma_sq
    mean = alpha * y.sum() / sigma_sq / precision
    return mean, 1.0 / precision


class TestComponentSet:
    def test_properties(self):
        qset = _random_qset(Stream(0), 2, 3)
        assert qset.n_components == 2
        assert qset.dim == 3

    def test_promotes_single_component_shapes(self):
        qset = GaussianComponentSet(np.array([1.0]), np.array([0.5, -0.5]), np.eye(2))
        assert qset.means.shape == (1, 2)
        assert qset.covs.shape == (1, 2, 2)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            GaussianComponentSet(np.array([0.5, 0.5]), np.zeros((2, 2)), np.eye(3)[None].repeat(2, 0))

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            GaussianComponentSet(np.array([0.5, 0.6]), np.zeros((2, 1)), np.ones((2, 1, 1)))

    def test_nonpositive_weight_raises(self):
        with pytest.raises(ValueError):
            GaussianComponentSet(np.array([1.0, 0.0]), np.zeros((2, 1)), np.ones((2, 1, 1)))

    def test_non_positive_definite_cov_raises(self):
        with pytest.raises(np.linalg.LinAlgError):
            GaussianComponentSet(np.array([1.0]), np.zeros((1, 2)), -np.eye(2))


class TestDensities:
    def test_log_pdf_at_mean_frozen(self):
        value = np.exp(gaussian_log_pdf(np.zeros((1, 1)), np.zeros(1), np.eye(1))[0])
        np.testing.assert_allclose(value, UNIT_GAUSSIAN_AT_MEAN, atol=1e-15)

    def test_log_pdf_matches_scipy(self):
        stream = Stream(3)
        root = stream.normal((3, 3))
        cov = root @ root.T + 0.5 * np.eye(3)
        mean = stream.normal(3)
        points = stream.normal((20, 3))
        got = gaussian_log_pdf(points, mean, cov)
        ref = multivariate_normal(mean=mean, cov=cov).logpdf(points)
        np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-10)

    def test_mixture_single_component_matches_gaussian(self):
        qset = _random_qset(Stream(4), 1, 2)
        points = Stream(5).normal((15, 2))
        np.testing.assert_allclose(
            mixture_log_density(qset, points),
            gaussian_log_pdf(points, qset.means[0], qset.covs[0]),
            atol=1e-12,
        )

    def test_mixture_matches_manual_logsumexp(self):
        qset = _random_qset(Stream(6), 3, 2)
        points = Stream(7).normal((10, 2))
        parts = np.stack(
            [
                np.log(qset.weights[j]) + gaussian_log_pdf(points, qset.means[j], qset.covs[j])
                for j in range(3)
            ]
        )
        shift = parts.max(axis=0)
        manual = shift + np.log(np.exp(parts - shift[None, :]).sum(axis=0))
        np.testing.assert_allclose(mixture_log_density(qset, points), manual, atol=1e-12)

    def test_mixture_permutation_invariant(self):
        qset = _random_qset(Stream(8), 3, 1)
        flipped = GaussianComponentSet(qset.weights[::-1], qset.means[::-1], qset.covs[::-1])
        points = Stream(9).normal((12, 1))
        np.testing.assert_allclose(
            mixture_log_density(qset, points), mixture_log_density(flipped, points), atol=1e-12
        )


class TestCrossDensity:
    def test_standard_normal_self_overlap_frozen(self):
        value = gaussian_cross_density(np.zeros(1), np.eye(1), np.zeros(1), np.eye(1))
        np.testing.assert_allclose(value, CROSS_DENSITY_SELF, atol=1e-15)

    def test_symmetric_in_its_arguments(self):
        stream = Stream(11)
        for _ in range(20):
            mean_a, mean_b = stream.normal(2), stream.normal(2)
            ra, rb = stream.normal((2, 2)), stream.normal((2, 2))
            cov_a = ra @ ra.T + 0.3 * np.eye(2)
            cov_b = rb @ rb.T + 0.3 * np.eye(2)
            ab = gaussian_cross_density(mean_a, cov_a, mean_b, cov_b)
            ba = gaussian_cross_density(mean_b, cov_b, mean_a, cov_a)
            np.testing.assert_allclose(ab, ba, rtol=1e-12)

    def test_matches_monte_carlo(self):
        mean_a = np.array([0.3, -0.2])
        mean_b = np.array([-0.5, 0.4])
        cov_a = np.array([[0.8, 0.2], [0.2, 1.1]])
        cov_b = np.array([[1.5, -0.3], [-0.3, 0.9]])
        closed = gaussian_cross_density(mean_a, cov_a, mean_b, cov_b)
        root = np.linalg.cholesky(cov_b)
        draws = mean_b[None, :] + Stream(12).normal((100_000, 2)) @ root.T
        vals = np.exp(gaussian_log_pdf(draws, mean_a, cov_a))
        se = vals.std(ddof=1) / np.sqrt(vals.size)
        assert abs(vals.mean() - closed) <= 3.0 * se

    def test_matches_quadrature_1d(self):
        mean_a, cov_a = np.array([0.7]), np.array([[0.6]])
        mean_b, cov_b = np.array([-0.4]), np.array([[1.3]])

        def integrand(x):
            pt = np.array([[x]])
            return float(
                np.exp(gaussian_log_pdf(pt, mean_a, cov_a)[0])
                * np.exp(gaussian_log_pdf(pt, mean_b, cov_b)[0])
            )

        numeric, _ = quad(integrand, -40.0, 40.0)
        closed = gaussian_cross_density(mean_a, cov_a, mean_b, cov_b)
        np.testing.assert_allclose(closed, numeric, atol=1e-10)


class TestSurrogateEntropy:
    def test_gap_exact_j1_frozen(self):
        np.testing.assert_allclose(surrogate_gap_exact_j1(1), GAP_J1_PER_DIM, atol=1e-15)
        np.testing.assert_allclose(surrogate_gap_exact_j1(2), 2.0 * GAP_J1_PER_DIM, atol=1e-15)
        np.testing.assert_allclose(surrogate_gap_exact_j1(3), 3.0 * GAP_J1_PER_DIM, atol=1e-15)

    def test_single_component_slack_is_constant(self):
        stream = Stream(13)
        for dim in (1, 2, 3):
            qset = _random_qset(stream.child(dim), 1, dim)
            gap = _gaussian_entropy(qset.covs[0]) + surrogate_entropy_term(qset)
            np.testing.assert_allclose(gap, surrogate_gap_exact_j1(dim), atol=1e-10)

    def test_gap_mc_matches_exact_single_component(self):
        qset = _random_qset(Stream(14), 1, 2)
        gap, se = surrogate_gap_mc(qset, n_samples=4000, seed=5)
        assert se > 0.0
        assert abs(gap - surrogate_gap_exact_j1(2)) <= 3.0 * se

    def test_gap_mc_nonnegative_on_random_mixtures(self):
        stream = Stream(15)
        for case in range(10):
            n_components = 2 + case % 2
            dim = 1 + case % 2
            qset = _random_qset(stream.child(case), n_components, dim)
            gap, se = surrogate_gap_mc(qset, n_samples=2000, seed=case)
            assert gap >= -3.0 * se

    def test_far_separated_components_gap_near_slack_constant(self):
        qset = GaussianComponentSet(
            np.array([0.5, 0.5]), np.array([[-8.0], [8.0]]), np.ones((2, 1, 1))
        )
        gap, se = surrogate_gap_mc(qset, n_samples=6000, seed=2)
        assert abs(gap - GAP_J1_PER_DIM) <= 3.0 * se + 1e-4


class TestSurrogateElbo:
    def _prior_only_target(self, with_hooks: bool) -> ParametricTarget:
        def log_joint(theta):
            return gaussian_log_pdf(theta, np.zeros(1), np.eye(1))

        if not with_hooks:
            return ParametricTarget(log_joint, log_joint, 1)

        def expected_log_lik(mean, cov):
            return 0.0

        def expected_log_prior(mean, cov):
            return -0.5 * _LOG_2PI - 0.5 * (mean[0] ** 2 + cov[0, 0])

        return ParametricTarget(log_joint, log_joint, 1, expected_log_lik, expected_log_prior)

    def test_prior_only_exact_frozen(self):
        qset = GaussianComponentSet(np.array([1.0]), np.zeros((1, 1)), np.ones((1, 1, 1)))
        value, se = surrogate_elbo(self._prior_only_target(True), qset)
        np.testing.assert_allclose(value, PRIOR_ONLY_SURROGATE, atol=1e-12)
        assert se == 0.0

    def test_prior_only_mc_matches_frozen(self):
        qset = GaussianComponentSet(np.array([1.0]), np.zeros((1, 1)), np.ones((1, 1, 1)))
        value, se = surrogate_elbo(self._prior_only_target(False), qset, n_samples=4000, seed=1)
        assert se > 0.0
        assert abs(value - PRIOR_ONLY_SURROGATE) <= 3.0 * se

    def test_exact_and_mc_paths_agree(self):
        y = np.array([1.4, -0.3, 0.8, 2.1])
        exact_target = _conjugate_target(y, 1.0, 4.0, with_hooks=True)
        mc_target = _conjugate_target(y, 1.0, 4.0, with_hooks=False)
        qset = _random_qset(Stream(16), 2, 1)
        value_exact, se_exact = surrogate_elbo(exact_target, qset)
        value_mc, se_mc = surrogate_elbo(mc_target, qset, n_samples=4000, seed=3)
        assert se_exact == 0.0
        assert abs(value_exact - value_mc) <= 3.0 * se_mc

    def test_surrogate_never_exceeds_true_bound(self):
        y = np.array([0.5, 1.2, -0.7])
        target = _conjugate_target(y, 1.0, 9.0, with_hooks=True)
        stream = Stream(17)
        for case in range(8):
            qset = _random_qset(stream.child(case), 2, 1)
            value_surr, _ = surrogate_elbo(target, qset)
            fit = float(
                qset.weights
                @ [
                    target.expected_log_lik(qset.means[j], qset.covs[j])
                    + target.expected_log_prior(qset.means[j], qset.covs[j])
                    for j in range(2)
                ]
            )
            entropy, se = _entropy_mc(qset, 3000, seed=case)
            assert value_surr <= fit + entropy + 3.0 * se


class TestFit:
    def test_recovers_exact_posterior_unit_alpha(self):
        y = np.array([1.1, 0.4, 2.3, 1.8, 0.9, 1.5])
        target = _conjugate_target(y, 1.0, 4.0, with_hooks=True)
        qset, trace = fit_gaussian_vi(target, AlphaConfig(alpha=1.0, seed=0))
        mean, var = _fractional_posterior(y, 1.0, 4.0, 1.0)
        np.testing.assert_allclose(qset.means[0, 0], mean, atol=1e-3)
        np.testing.assert_allclose(qset.covs[0, 0, 0], var, atol=1e-3)
        assert trace.values
        assert trace.nondecreasing(1e-8)

    def test_recovers_fractional_posterior(self):
        y = np.array([1.1, 0.4, 2.3, 1.8, 0.9, 1.5])
        target = _conjugate_target(y, 1.0, 4.0, with_hooks=True)
        qset, trace = fit_gaussian_vi(target, AlphaConfig(alpha=0.5, seed=1), restarts=2)
        mean, var = _fractional_posterior(y, 1.0, 4.0, 0.5)
        np.testing.assert_allclose(qset.means[0, 0], mean, atol=1e-3)
        np.testing.assert_allclose(qset.covs[0, 0, 0], var, atol=1e-3)
        assert trace.nondecreasing(1e-8)

    def test_recovers_posterior_multivariate(self):
        stream = Stream(19)
        y = 1.5 + stream.normal((8, 2))
        sigma_sq, v0 = 1.0, 25.0
        n = y.shape[0]

        def prior_log_density(theta):
            th = np.atleast_2d(theta)
            return -_LOG_2PI - np.log(v0) - (th**2).sum(axis=1) / (2.0 * v0)

        def log_joint(theta):
            th = np.atleast_2d(theta)
            sq = ((y[None, :, :] - th[:, None, :]) ** 2).sum(axis=(1, 2))
            return -n * _LOG_2PI - sq / (2.0 * sigma_sq) + prior_log_density(theta)

        def expected_log_lik(mean, cov):
            sq = float(((y - mean[None, :]) ** 2).sum() + n * np.trace(cov))
            return -n * _LOG_2PI - sq / (2.0 * sigma_sq)

        def expected_log_prior(mean, cov):
            return -_LOG_2PI - np.log(v0) - float(mean @ mean + np.trace(cov)) / (2.0 * v0)

        target = ParametricTarget(
            log_joint, prior_log_density, 2, expected_log_lik, expected_log_prior
        )
        qset, _ = fit_gaussian_vi(target, AlphaConfig(alpha=1.0, seed=2))
        precision = 1.0 / v0 + n / sigma_sq
        post_mean = y.sum(axis=0) / sigma_sq / precision
        np.testing.assert_allclose(qset.means[0], post_mean, atol=1e-3)
        np.testing.assert_allclose(qset.covs[0], np.eye(2) / precision, atol=1e-3)

    def test_two_components_find_both_modes(self):
        centers = np.array([-3.0, 3.0])
        mode_var = 0.36

        def log_joint(theta):
            th = np.atleast_2d(theta)[:, 0]
            parts = np.stack(
                [
                    np.log(0.5)
                    - 0.5 * (_LOG_2PI + np.log(mode_var))
                    - (th - c) ** 2 / (2.0 * mode_var)
                    for c in centers
                ]
            )
            shift = parts.max(axis=0)
            return shift + np.log(np.exp(parts - shift[None, :]).sum(axis=0))

        def prior_log_density(theta):
            th = np.atleast_2d(theta)[:, 0]
            return -0.5 * (_LOG_2PI + np.log(100.0)) - th**2 / 200.0

        target = ParametricTarget(log_joint, prior_log_density, 1)
        qset, trace = fit_gaussian_vi(
            target,
            AlphaConfig(alpha=1.0, seed=3),
            n_components=2,
            n_samples=256,
            init_means=np.array([[-2.0], [2.0]]),
        )
        fitted = np.sort(qset.means[:, 0])
        np.testing.assert_allclose(fitted, centers, atol=0.2)
        np.testing.assert_allclose(qset.weights, [0.5, 0.5], atol=0.2)
        assert trace.nondecreasing(1e-8)

    def test_deterministic_given_seed(self):
        y = np.array([0.2, -1.1, 0.9])
        target = _conjugate_target(y, 1.0, 4.0, with_hooks=True)
        cfg = AlphaConfig(alpha=0.7, seed=5)
        first, _ = fit_gaussian_vi(target, cfg)
        second, _ = fit_gaussian_vi(target, cfg)
        assert first.means.tobytes() == second.means.tobytes()
        assert first.covs.tobytes() == second.covs.tobytes()

    def test_validation(self):
        target = _conjugate_target(np.array([1.0]), 1.0, 4.0, with_hooks=True)
        with pytest.raises(ValueError):
            fit_gaussian_vi(target, AlphaConfig(alpha=1.0), n_components=0)
        with pytest.raises(ValueError):
            fit_gaussian_vi(target, AlphaConfig(alpha=1.0), restarts=0)
