"""Tests for the tempered mean-field Gaussian mixture solver."""

import math

import numpy as np
import pytest

from alphavb.datasets import generate
from alphavb.gmm import (
    UPDATE_RULES,
    GmmPrior,
    GmmVariationalState,
    fit_gmm,
    match_means,
    predictive_density,
    tracked_objective,
    update_components,
    update_responsibilities,
)
from alphavb.objective import AlphaConfig
from alphavb.rng import Stream

# Frozen by hand: 1 / sqrt(2 pi), the unit Gaussian density at its mean.
UNIT_GAUSSIAN_AT_MEAN = 0.3989422804014327


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def _two_comp_prior(d=2, sigma0_sq=50.0):
    return GmmPrior(mu0=np.zeros(d), sigma0_sq=sigma0_sq, pi=np.array([0.5, 0.5]))


class TestPriorValidation:
    def test_rejects_nonpositive_variance(self):
        with pytest.raises(ValueError):
            GmmPrior(mu0=np.zeros(2), sigma0_sq=0.0, pi=np.array([0.5, 0.5]))

    def test_rejects_non_simplex_pi(self):
        with pytest.raises(ValueError):
            GmmPrior(mu0=np.zeros(2), sigma0_sq=1.0, pi=np.array([0.5, 0.4]))

    def test_rejects_zero_weight(self):
        with pytest.raises(ValueError):
            GmmPrior(mu0=np.zeros(2), sigma0_sq=1.0, pi=np.array([1.0, 0.0]))


class TestStateValidation:
    def test_rejects_bad_spread(self):
        with pytest.raises(ValueError):
            GmmVariationalState(
                mu_tilde=np.zeros((2, 2)),
                sigma_tilde_sq=np.array([1.0, 0.0]),
                resp=np.full((3, 2), 0.5),
            )

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            GmmVariationalState(
                mu_tilde=np.zeros((2, 2)),
                sigma_tilde_sq=np.array([1.0]),
                resp=np.full((3, 2), 0.5),
            )


class TestResponsibilityUpdate:
    def test_two_component_hand_value_unit_alpha(self):
        """Symmetric means one unit from y give logit difference 2 for both rules."""
        y = np.array([[1.0, 0.0]])
        mu = np.array([[1.0, 0.0], [-1.0, 0.0]])
        sig = np.array([1e-12, 1e-12])
        prior = _two_comp_prior()
        for rule in UPDATE_RULES:
            resp = update_responsibilities(y, mu, sig, prior, alpha=1.0, rule=rule)
            np.testing.assert_allclose(resp[0, 0], _sigmoid(2.0), atol=1e-9)

    def test_rules_differ_below_unit_alpha(self):
        y = np.array([[1.0, 0.0]])
        mu = np.array([[1.0, 0.0], [-1.0, 0.0]])
        sig = np.array([1e-12, 1e-12])
        prior = _two_comp_prior()
        derived = update_responsibilities(y, mu, sig, prior, alpha=0.5, rule="derived")
        paper = update_responsibilities(y, mu, sig, prior, alpha=0.5, rule="paper")
        np.testing.assert_allclose(derived[0, 0], _sigmoid(2.0), atol=1e-9)
        np.testing.assert_allclose(paper[0, 0], _sigmoid(1.0), atol=1e-9)

    def test_single_component_is_ones(self):
        y = Stream(0).normal((6, 2))
        prior = GmmPrior(mu0=np.zeros(2), sigma0_sq=10.0, pi=np.array([1.0]))
        resp = update_responsibilities(
            y, np.zeros((1, 2)), np.array([1.0]), prior, alpha=0.7
        )
        np.testing.assert_allclose(resp, np.ones((6, 1)), atol=1e-15)

    def test_identical_components_split_evenly(self):
        y = Stream(1).normal((5, 2))
        mu = np.zeros((2, 2))
        sig = np.array([1.0, 1.0])
        resp = update_responsibilities(y, mu, sig, _two_comp_prior(), alpha=0.8)
        np.testing.assert_allclose(resp, np.full((5, 2), 0.5), atol=1e-12)

    def test_rows_are_simplex(self):
        y = Stream(2).normal((40, 2)) * 3.0
        mu = Stream(3).normal((2, 2)) * 2.0
        sig = np.array([0.5, 2.0])
        for rule in UPDATE_RULES:
            resp = update_responsibilities(y, mu, sig, _two_comp_prior(), 0.6, rule)
            np.testing.assert_allclose(resp.sum(axis=1), np.ones(40), atol=1e-12)
            assert np.all(resp >= 0)

    def test_label_permutation_equivariance(self):
        y = Stream(4).normal((20, 2)) * 2.0
        mu = np.array([[2.0, 0.0], [-1.0, 1.0], [0.0, -2.0]])
        sig = np.array([0.5, 1.0, 2.0])
        prior = GmmPrior(mu0=np.zeros(2), sigma0_sq=25.0, pi=np.array([0.2, 0.3, 0.5]))
        perm = np.array([2, 0, 1])
        prior_perm = GmmPrior(mu0=np.zeros(2), sigma0_sq=25.0, pi=prior.pi[perm])
        for rule in UPDATE_RULES:
            base = update_responsibilities(y, mu, sig, prior, 0.7, rule)
            permuted = update_responsibilities(
                y, mu[perm], sig[perm], prior_perm, 0.7, rule
            )
            np.testing.assert_allclose(permuted, base[:, perm], atol=1e-12)

    def test_rejects_unknown_rule(self):
        y = np.zeros((2, 2))
        with pytest.raises(ValueError):
            update_responsibilities(
                y, np.zeros((2, 2)), np.ones(2), _two_comp_prior(), 0.5, rule="exact"
            )


class TestComponentUpdate:
    def _single_prior(self):
        return GmmPrior(mu0=np.zeros(1), sigma0_sq=50.0, pi=np.array([1.0]))

    def test_hand_value_unit_alpha(self):
        """Two 1-d points fully assigned: precision 1/50 + 2, mean 2/2.02."""
        y = np.array([[0.0], [2.0]])
        resp = np.ones((2, 1))
        for rule in UPDATE_RULES:
            mu, sig = update_components(y, resp, self._single_prior(), 1.0, rule)
            np.testing.assert_allclose(mu[0, 0], 2.0 / 2.02, atol=1e-12)
            np.testing.assert_allclose(sig[0], 1.0 / 2.02, atol=1e-12)

    def test_derived_tempering_scales_count_and_sum(self):
        y = np.array([[0.0], [2.0]])
        resp = np.ones((2, 1))
        mu, sig = update_components(y, resp, self._single_prior(), 0.5, "derived")
        np.testing.assert_allclose(sig[0], 1.0 / (1.0 / 50.0 + 1.0), atol=1e-12)
        np.testing.assert_allclose(mu[0, 0], 1.0 / 1.02, atol=1e-12)

    def test_paper_tempering_inflates_count(self):
        y = np.array([[0.0], [2.0]])
        resp = np.ones((2, 1))
        mu, sig = update_components(y, resp, self._single_prior(), 0.5, "paper")
        np.testing.assert_allclose(sig[0], 1.0 / (1.0 / 50.0 + 4.0), atol=1e-12)
        np.testing.assert_allclose(mu[0, 0], 2.0 / 4.02, atol=1e-12)

    def test_zero_mass_component_falls_back_to_prior(self):
        y = np.array([[1.0, 0.0], [2.0, 0.0]])
        resp = np.array([[1.0, 0.0], [1.0, 0.0]])
        prior = GmmPrior(mu0=np.array([3.0, -1.0]), sigma0_sq=7.0, pi=np.array([0.5, 0.5]))
        for rule in UPDATE_RULES:
            mu, sig = update_components(y, resp, prior, 0.8, rule)
            np.testing.assert_allclose(mu[1], prior.mu0, atol=1e-12)
            np.testing.assert_allclose(sig[1], prior.sigma0_sq, atol=1e-12)

    def test_flat_prior_limit_recovers_weighted_mean(self):
        y = Stream(5).normal((30, 2)) + np.array([2.0, -1.0])
        resp = np.ones((30, 1))
        prior = GmmPrior(mu0=np.zeros(2), sigma0_sq=1e12, pi=np.array([1.0]))
        mu, _ = update_components(y, resp, prior, 1.0, "derived")
        np.testing.assert_allclose(mu[0], y.mean(axis=0), atol=1e-9)

    def test_rules_coincide_at_unit_alpha(self):
        y = Stream(6).normal((25, 2)) * 2.0
        resp = Stream(7).uniform((25, 3))
        resp = resp / resp.sum(axis=1, keepdims=True)
        prior = GmmPrior(mu0=np.zeros(2), sigma0_sq=9.0, pi=np.full(3, 1.0 / 3.0))
        mu_d, sig_d = update_components(y, resp, prior, 1.0, "derived")
        mu_p, sig_p = update_components(y, resp, prior, 1.0, "paper")
        np.testing.assert_allclose(mu_d, mu_p, atol=1e-12)
        np.testing.assert_allclose(sig_d, sig_p, atol=1e-12)


class TestFitGmm:
    def test_single_component_matches_tempered_conjugate_posterior(self):
        """K = 1 reduces to the closed-form tempered Gaussian mean posterior."""
        rng = Stream(8)
        y = rng.normal((40, 2)) + np.array([1.5, -0.5])
        sigma0_sq = 10.0
        prior = GmmPrior(mu0=np.zeros(2), sigma0_sq=sigma0_sq, pi=np.array([1.0]))
        alpha = 0.5
        state, trace = fit_gmm(y, prior, AlphaConfig(alpha=alpha, max_iters=50))
        n = y.shape[0]
        precision = 1.0 / sigma0_sq + alpha * n
        expected_mu = alpha * y.sum(axis=0) / precision
        np.testing.assert_allclose(state.mu_tilde[0], expected_mu, atol=1e-10)
        np.testing.assert_allclose(state.sigma_tilde_sq[0], 1.0 / precision, atol=1e-12)
        assert trace.converged_at is not None

    def test_rules_coincide_at_unit_alpha_end_to_end(self):
        bundle = generate("gmm_s22", params={"n": 200, "k": 2}, seed=3)
        y = bundle.payload["y"]
        prior = GmmPrior(mu0=np.zeros(2), sigma0_sq=50.0, pi=np.array([0.5, 0.5]))
        cfg = AlphaConfig(alpha=1.0, max_iters=40)
        state_d, _ = fit_gmm(y, prior, cfg, update_rule="derived")
        state_p, _ = fit_gmm(y, prior, cfg, update_rule="paper")
        np.testing.assert_allclose(state_d.mu_tilde, state_p.mu_tilde, atol=1e-10)
        np.testing.assert_allclose(state_d.resp, state_p.resp, atol=1e-10)

    @pytest.mark.parametrize("alpha", [0.5, 0.7, 0.95, 1.0])
    def test_trace_nondecreasing(self, alpha):
        bundle = generate("gmm_s22", params={"n": 150, "k": 3}, seed=4)
        y = bundle.payload["y"]
        prior = GmmPrior(mu0=np.zeros(2), sigma0_sq=50.0, pi=np.full(3, 1.0 / 3.0))
        _, trace = fit_gmm(y, prior, AlphaConfig(alpha=alpha, max_iters=60))
        assert trace.nondecreasing(tol=1e-8)

    def test_recovers_means_single_seed(self):
        bundle = generate("gmm_s22", seed=0)
        y = bundle.payload["y"]
        truth = bundle.truth["means"]
        prior = GmmPrior(mu0=np.zeros(2), sigma0_sq=50.0, pi=np.full(3, 1.0 / 3.0))
        state, trace = fit_gmm(y, prior, AlphaConfig(alpha=0.95, max_iters=60))
        _, err = match_means(state.mu_tilde, truth)
        assert err < 0.3
        assert trace.converged_at is not None

    def test_tracked_objective_matches_recorded_trace(self):
        bundle = generate("gmm_s22", params={"n": 120, "k": 2}, seed=5)
        y = bundle.payload["y"]
        prior = GmmPrior(mu0=np.zeros(2), sigma0_sq=50.0, pi=np.array([0.5, 0.5]))
        state, trace = fit_gmm(y, prior, AlphaConfig(alpha=0.7, max_iters=30))
        np.testing.assert_allclose(
            trace.last(), tracked_objective(y, state, prior, 0.7, "derived"), atol=1e-12
        )

    def test_warm_start_respects_init(self):
        y = Stream(9).normal((20, 2))
        prior = _two_comp_prior()
        init = GmmVariationalState(
            mu_tilde=np.array([[5.0, 5.0], [-5.0, -5.0]]),
            sigma_tilde_sq=np.array([1.0, 1.0]),
            resp=np.full((20, 2), 0.5),
        )
        state, _ = fit_gmm(y, prior, AlphaConfig(alpha=1.0, max_iters=1), init=init)
        resp_expected = update_responsibilities(
            y, init.mu_tilde, init.sigma_tilde_sq, prior, 1.0
        )
        np.testing.assert_allclose(state.resp, resp_expected, atol=1e-12)

    def test_dimension_mismatch_rejected(self):
        y = np.zeros((10, 3))
        with pytest.raises(ValueError):
            fit_gmm(y, _two_comp_prior(d=2), AlphaConfig(alpha=1.0))

    def test_too_few_points_rejected(self):
        y = np.zeros((1, 2))
        with pytest.raises(ValueError):
            fit_gmm(y, _two_comp_prior(), AlphaConfig(alpha=1.0))

    def test_unknown_rule_rejected(self):
        y = np.zeros((5, 2))
        with pytest.raises(ValueError):
            fit_gmm(y, _two_comp_prior(), AlphaConfig(alpha=1.0), update_rule="batch")


class TestPredictiveDensity:
    def test_unit_gaussian_at_mean(self):
        got = predictive_density(np.array([[0.0]]), np.array([[0.0]]), np.array([1.0]))
        np.testing.assert_allclose(got[0], UNIT_GAUSSIAN_AT_MEAN, atol=1e-15)

    def test_mixture_symmetry(self):
        mu = np.array([[1.0, 0.0], [-1.0, 0.0]])
        pi = np.array([0.5, 0.5])
        at_plus = predictive_density(np.array([[0.5, 0.0]]), mu, pi)
        at_minus = predictive_density(np.array([[-0.5, 0.0]]), mu, pi)
        np.testing.assert_allclose(at_plus, at_minus, atol=1e-14)

    def test_integrates_to_one(self):
        mu = np.array([[1.0, 0.5], [-1.5, -0.5]])
        pi = np.array([0.4, 0.6])
        grid = np.arange(-12.0, 12.0, 0.05)
        xx, yy = np.meshgrid(grid, grid)
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        total = predictive_density(pts, mu, pi).sum() * 0.05 * 0.05
        np.testing.assert_allclose(total, 1.0, atol=1e-3)


class TestMatchMeans:
    def test_recovers_permutation(self):
        true = np.array([[0.0, 0.0], [5.0, 5.0], [-5.0, 5.0]])
        fitted = true[[2, 0, 1]] + 0.01
        perm, err = match_means(fitted, true)
        assert [perm[j] for j in range(3)] == [1, 2, 0]
        assert err < 0.02

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            match_means(np.zeros((2, 2)), np.zeros((3, 2)))

    def test_rejects_large_k(self):
        with pytest.raises(ValueError):
            match_means(np.zeros((9, 2)), np.zeros((9, 2)))
