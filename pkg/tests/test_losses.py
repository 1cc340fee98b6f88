"""Loss shapes, MAD scaling, and the weighted squared-error batch loss."""

import math

import numpy as np
import pytest

from robust_gum.errors import ConfigError, ShapeError
from robust_gum.losses import (
    DEFAULT_TUNING_C,
    MAD_FLOOR,
    LossSpec,
    deepgum_batch_loss,
    loss_and_weight,
    mad,
)
from robust_gum.mixture import Granularity

C = DEFAULT_TUNING_C


class TestMad:
    def test_hand_example_with_one_outlier(self):
        scale = mad(np.array([1.0, 2.0, 3.0, 4.0, 100.0])[:, None])
        assert scale[0] == pytest.approx(1.0)

    def test_zero_spread_hits_floor(self):
        scale = mad(np.full((5, 1), 3.25))
        assert scale[0] == MAD_FLOOR

    def test_symmetric_triple(self):
        scale = mad(np.array([-1.0, 0.0, 1.0])[:, None])
        assert scale[0] == pytest.approx(1.0)

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        deltas = rng.normal(0, 2, (100, 3))
        np.testing.assert_allclose(mad(deltas + 17.0), mad(deltas))

    def test_positive_scaling_is_linear(self):
        rng = np.random.default_rng(1)
        deltas = rng.normal(0, 2, (100, 3))
        np.testing.assert_allclose(mad(3.0 * deltas), 3.0 * mad(deltas))

    def test_per_coordinate_output(self):
        deltas = np.array([[0.0, 10.0], [1.0, 20.0], [2.0, 30.0]])
        scale = mad(deltas)
        assert scale.shape == (2,)
        assert scale[1] == pytest.approx(10.0)


class TestLossShapes:
    def test_l2_value_and_gradient(self):
        loss, grad = loss_and_weight(3.0, LossSpec("l2"))
        assert loss == pytest.approx(9.0)
        assert grad == pytest.approx(6.0)

    def test_huber_gradient_saturates_beyond_threshold(self):
        _, grad = loss_and_weight(10.0, LossSpec("huber"))
        assert grad == pytest.approx(4.6851)
        _, grad = loss_and_weight(-10.0, LossSpec("huber"))
        assert grad == pytest.approx(-4.6851)

    def test_huber_is_quadratic_inside(self):
        loss, grad = loss_and_weight(2.0, LossSpec("huber"))
        assert loss == pytest.approx(2.0)
        assert grad == pytest.approx(2.0)

    def test_huber_continuous_at_threshold(self):
        lo, gl = loss_and_weight(C - 1e-12, LossSpec("huber"))
        hi, gh = loss_and_weight(C + 1e-12, LossSpec("huber"))
        assert lo == pytest.approx(hi, rel=1e-9)
        assert gl == pytest.approx(gh, rel=1e-9)
        assert lo == pytest.approx(C * C / 2.0, rel=1e-9)

    def test_huber_gradient_globally_bounded(self):
        deltas = np.linspace(-50, 50, 1001)
        _, grad = loss_and_weight(deltas, LossSpec("huber"))
        assert np.all(np.abs(grad) <= C + 1e-12)

    def test_biweight_gradient_zero_at_and_beyond_threshold(self):
        for delta in (0.0, C, C + 0.001, 100.0, -C, -27.0):
            _, grad = loss_and_weight(delta, LossSpec("biweight"))
            expected = 0.0 if abs(delta) >= C or delta == 0.0 else None
            if expected is not None:
                assert grad == expected

    def test_biweight_hand_value_inside(self):
        _, grad = loss_and_weight(1.0, LossSpec("biweight"))
        assert grad == pytest.approx((1.0 - (1.0 / C) ** 2) ** 2, rel=1e-9)
        assert grad == pytest.approx(0.91096, abs=5e-6)

    def test_biweight_loss_constant_beyond_threshold(self):
        for delta in (C, 5.0, 50.0, -80.0):
            loss, _ = loss_and_weight(delta, LossSpec("biweight"))
            assert loss == pytest.approx(C * C / 6.0, rel=1e-12)

    def test_biweight_continuous_at_threshold(self):
        lo, gl = loss_and_weight(C - 1e-9, LossSpec("biweight"))
        hi, gh = loss_and_weight(C + 1e-9, LossSpec("biweight"))
        assert lo == pytest.approx(hi, rel=1e-9)
        assert gl == pytest.approx(gh, abs=1e-9)

    def test_weighted_l2_kind_matches_plain_l2_shape(self):
        deltas = np.linspace(-5, 5, 41)
        l2 = loss_and_weight(deltas, LossSpec("l2"))
        dg = loss_and_weight(deltas, LossSpec("deepgum"))
        np.testing.assert_array_equal(l2[0], dg[0])
        np.testing.assert_array_equal(l2[1], dg[1])

    def test_losses_vectorize(self):
        deltas = np.array([[0.5, -3.0], [10.0, 0.0]])
        loss, grad = loss_and_weight(deltas, LossSpec("huber"))
        assert loss.shape == deltas.shape
        assert grad[1, 0] == pytest.approx(C)


class TestLossSpec:
    def test_rejects_unknown_kind(self):
        with pytest.raises(ConfigError):
            LossSpec("cauchy")

    def test_rejects_bad_tuning(self):
        with pytest.raises(ConfigError):
            LossSpec("huber", tuning_c=0.0)
        with pytest.raises(ConfigError):
            LossSpec("huber", tuning_c=float("inf"))

    def test_rejects_unknown_normalization(self):
        with pytest.raises(ConfigError):
            LossSpec("l2", normalization="zscore")


class TestDeepgumBatchLoss:
    def test_all_ones_is_plain_squared_sum(self):
        res = np.array([[3.0, 4.0], [0.0, 0.0]])
        r = np.ones((2, 1))
        assert deepgum_batch_loss(res, r, Granularity.sample_wise()) == 25.0

    def test_all_zero_weights_zero_loss(self):
        res = np.array([[3.0, 4.0], [1.0, 1.0]])
        r = np.zeros((2, 1))
        assert deepgum_batch_loss(res, r, Granularity.sample_wise()) == 0.0

    def test_fractional_weight(self):
        res = np.array([[2.0, 0.0]])
        r = np.array([[0.5]])
        assert deepgum_batch_loss(
            res, r, Granularity.sample_wise()) == pytest.approx(2.0)

    def test_group_weights_multiply_their_blocks(self):
        res = np.array([[1.0, 1.0, 2.0, 2.0]])
        r = np.array([[1.0, 0.25]])
        got = deepgum_batch_loss(res, r, Granularity.group_wise())
        assert got == pytest.approx(1 + 1 + 0.25 * (4 + 4))

    def test_alignment_mismatch_raises(self):
        res = np.ones((3, 4))
        with pytest.raises(ShapeError):
            deepgum_batch_loss(res, np.ones((3, 3)), Granularity.group_wise())

    def test_per_sample_contribution_bounded_by_weight(self):
        rng = np.random.default_rng(2)
        res = rng.normal(0, 5, (50, 2))
        r = rng.random((50, 1))
        weighted = deepgum_batch_loss(res, r, Granularity.sample_wise())
        plain = deepgum_batch_loss(
            res, np.ones((50, 1)), Granularity.sample_wise())
        assert weighted <= plain
