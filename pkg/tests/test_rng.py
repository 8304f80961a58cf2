"""Tests for the counter-based seeded stream helpers."""

import numpy as np
import pytest

from alphavb.rng import Stream, stream


class TestStreamDeterminism:
    def test_same_seed_same_draws(self):
        a = Stream(7).uniform(100)
        b = Stream(7).uniform(100)
        np.testing.assert_array_equal(a, b)

    def test_different_seeds_differ(self):
        a = Stream(7).uniform(100)
        b = Stream(8).uniform(100)
        assert not np.array_equal(a, b)

    def test_path_separates_streams(self):
        root = Stream(3).uniform(64)
        pathed = Stream(3, 5).uniform(64)
        assert not np.array_equal(root, pathed)

    def test_path_order_matters(self):
        a = Stream(3, 1, 2).uniform(64)
        b = Stream(3, 2, 1).uniform(64)
        assert not np.array_equal(a, b)

    def test_child_equals_explicit_path(self):
        direct = Stream(11, 4, 9).normal(32)
        chained = Stream(11).child(4).child(9).normal(32)
        via_multi = Stream(11).child(4, 9).normal(32)
        np.testing.assert_array_equal(direct, chained)
        np.testing.assert_array_equal(direct, via_multi)

    def test_draw_order_independence_across_children(self):
        # Consuming one child stream must not perturb a sibling.
        parent = Stream(2)
        first = parent.child(0).uniform(16)
        parent.child(1).uniform(1000)
        again = Stream(2).child(0).uniform(16)
        np.testing.assert_array_equal(first, again)

    def test_stream_helper_matches_class(self):
        np.testing.assert_array_equal(stream(5, 1).uniform(8), Stream(5, 1).uniform(8))


class TestStreamDraws:
    def test_uniform_open_interval(self):
        u = Stream(0).uniform(200_000)
        assert u.min() > 0.0
        assert u.max() < 1.0
        assert abs(u.mean() - 0.5) < 0.005

    def test_uniform_shape(self):
        assert Stream(0).uniform((3, 4)).shape == (3, 4)

    def test_normal_moments(self):
        z = Stream(1).normal(200_000)
        assert abs(z.mean()) < 0.01
        assert abs(z.std() - 1.0) < 0.01

    def test_normal_shape(self):
        assert Stream(1).normal((2, 5)).shape == (2, 5)

    def test_integers_half_open(self):
        draws = Stream(2).integers(0, 4, size=10_000)
        assert draws.min() == 0
        assert draws.max() == 3
        assert set(np.unique(draws)) == {0, 1, 2, 3}

    def test_categorical_frequencies(self):
        probs = np.array([0.2, 0.5, 0.3])
        draws = Stream(3).categorical(probs, size=100_000)
        freq = np.bincount(draws, minlength=3) / draws.size
        np.testing.assert_allclose(freq, probs, atol=0.01)

    def test_categorical_unnormalized_weights(self):
        draws = Stream(3).categorical(np.array([2.0, 5.0, 3.0]), size=100_000)
        freq = np.bincount(draws, minlength=3) / draws.size
        np.testing.assert_allclose(freq, [0.2, 0.5, 0.3], atol=0.01)

    def test_categorical_point_mass(self):
        draws = Stream(4).categorical(np.array([0.0, 1.0, 0.0]), size=50)
        assert np.all(draws == 1)

    def test_permutation_is_permutation(self):
        perm = Stream(5).permutation(20)
        assert sorted(perm.tolist()) == list(range(20))

    def test_permutation_deterministic(self):
        np.testing.assert_array_equal(Stream(5).permutation(20), Stream(5).permutation(20))


class TestStreamValidation:
    def test_negative_seed_rejected(self):
        with pytest.raises(ValueError):
            Stream(-1)

    def test_non_integer_seed_rejected(self):
        with pytest.raises(TypeError):
            Stream(0.5)
