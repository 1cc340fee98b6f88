"""Metric arithmetic and the signed-rank test against independent oracles.

The exact Wilcoxon path is verified against literal enumeration of all 2^n
sign assignments; the normal approximation is verified against the exact
distribution at n=25 and, when scipy is installed, against its
implementation on tie-free data.
"""

import itertools
import math

import numpy as np
import pytest

from robust_gum.errors import ConfigError, ShapeError
from robust_gum.evaluation import (
    MetricReport,
    WilcoxonResult,
    _signed_ranks,
    metrics,
    precision_recall,
    stars_for,
    wilcoxon_signed_rank,
)


def brute_force_two_sided_p(diffs):
    """Literal enumeration over every sign assignment of the ranks."""
    diffs = np.asarray(diffs, dtype=float)
    diffs = diffs[diffs != 0]
    ranks = _signed_ranks(diffs)
    observed = ranks[diffs > 0].sum()
    sums = [sum(r for r, keep in zip(ranks, signs) if keep)
            for signs in itertools.product([False, True], repeat=len(ranks))]
    sums = np.array(sums)
    total = sums.size
    p_low = (sums <= observed + 1e-12).sum() / total
    p_high = (sums >= observed - 1e-12).sum() / total
    return min(1.0, 2.0 * min(p_low, p_high))


class TestMetrics:
    def test_perfect_prediction_is_all_zero(self):
        pred = np.arange(12.0).reshape(3, 4)
        rep = metrics(pred, pred)
        assert rep.mae == 0.0
        assert rep.rmse == 0.0
        assert rep.failure_rate == 0.0

    def test_hand_mae_rmse(self):
        rep = metrics(np.array([[1.0], [0.0]]), np.array([[0.0], [3.0]]))
        assert rep.mae == pytest.approx(2.0)
        assert rep.rmse == pytest.approx(math.sqrt(5.0))

    def test_failure_counting_at_threshold(self):
        # three landmarks with scaled distances 0.03, 0.06, 0.04
        pred = np.array([[0.03, 0.0, 0.06, 0.0, 0.04, 0.0]])
        truth = np.zeros((1, 6))
        rep = metrics(pred, truth, failure_threshold=0.05, scale=1.0)
        assert rep.failure_rate == pytest.approx(1.0 / 3.0)

    def test_scale_divides_distances(self):
        pred = np.array([[3.0, 4.0]])   # distance 5
        truth = np.zeros((1, 2))
        assert metrics(pred, truth, scale=99.0).failure_rate == 1.0
        assert metrics(pred, truth, scale=101.0).failure_rate == 0.0

    def test_per_sample_scale_array(self):
        pred = np.array([[3.0, 4.0], [3.0, 4.0]])
        truth = np.zeros((2, 2))
        rep = metrics(pred, truth, scale=np.array([99.0, 101.0]))
        assert rep.failure_rate == 0.5

    def test_mae_never_exceeds_rmse(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            pred = rng.normal(0, 3, (30, 4))
            truth = rng.normal(0, 3, (30, 4))
            rep = metrics(pred, truth)
            assert rep.mae <= rep.rmse + 1e-12

    def test_per_landmark_breakdown(self):
        pred = np.array([[1.0, 1.0, 0.0, 0.0]])
        truth = np.zeros((1, 4))
        rep = metrics(pred, truth)
        assert rep.per_landmark_mae == [pytest.approx(1.0), 0.0]

    def test_odd_dimension_uses_coordinates(self):
        pred = np.array([[1.0, 0.0, 0.0]])
        truth = np.zeros((1, 3))
        rep = metrics(pred, truth, failure_threshold=0.5)
        assert rep.failure_rate == pytest.approx(1.0 / 3.0)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            metrics(np.zeros((2, 2)), np.zeros((3, 2)))

    def test_bad_threshold_rejected(self):
        with pytest.raises(ConfigError):
            metrics(np.zeros((2, 2)), np.zeros((2, 2)), failure_threshold=0.0)


class TestPrecisionRecall:
    def test_perfect_detection(self):
        labels = np.array([True, False, True])
        assert precision_recall(labels, labels) == (1.0, 1.0)

    def test_nothing_predicted_convention(self):
        truth = np.array([True, True, False])
        predicted = np.zeros(3, dtype=bool)
        assert precision_recall(predicted, truth) == (1.0, 0.0)

    def test_confusion_table_hand_case(self):
        predicted = np.array([True, True, False, False])
        truth = np.array([True, False, True, False])
        assert precision_recall(predicted, truth) == (0.5, 0.5)

    def test_no_true_outliers_recall_convention(self):
        predicted = np.array([True, False])
        truth = np.zeros(2, dtype=bool)
        precision, recall = precision_recall(predicted, truth)
        assert recall == 1.0
        assert precision == 0.0

    def test_permutation_symmetry(self):
        rng = np.random.default_rng(1)
        predicted = rng.random(50) < 0.3
        truth = rng.random(50) < 0.3
        perm = rng.permutation(50)
        assert precision_recall(predicted, truth) == \
            precision_recall(predicted[perm], truth[perm])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            precision_recall(np.zeros(3, dtype=bool), np.zeros(4, dtype=bool))


class TestWilcoxon:
    def test_identical_arrays_give_p_one(self):
        a = np.array([1.0, 2.0, 3.0])
        res = wilcoxon_signed_rank(a, a)
        assert res.p_value == 1.0
        assert res.statistic == 0.0
        assert res.n_effective == 0
        assert res.stars == 0

    def test_pinned_three_pair_case(self):
        res = wilcoxon_signed_rank(
            np.array([1.0, 2.0, 3.0]), np.array([2.0, 3.0, 4.0]))
        assert res.statistic == 0.0
        assert res.p_value == pytest.approx(0.25)
        assert res.n_effective == 3

    def test_exact_matches_brute_force_enumeration(self):
        rng = np.random.default_rng(2)
        for n in (3, 5, 8, 10, 12):
            for _ in range(40):
                a = rng.normal(0, 1, n)
                b = rng.normal(0, 1, n)
                if rng.random() < 0.5:
                    # inject ties in |difference|
                    b[: n // 2] = a[: n // 2] - rng.choice([1.0, -1.0])
                res = wilcoxon_signed_rank(a, b)
                assert res.p_value == pytest.approx(
                    brute_force_two_sided_p(a - b), abs=1e-12)

    def test_exact_and_approx_agree_at_n25(self):
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(50):
            a = rng.normal(0, 1, 25)
            b = rng.normal(0, 1, 25)
            exact = wilcoxon_signed_rank(a, b, method="exact").p_value
            approx = wilcoxon_signed_rank(a, b, method="approx").p_value
            worst = max(worst, abs(exact - approx))
        assert worst < 0.01

    def test_auto_switches_to_exact_at_small_n(self):
        rng = np.random.default_rng(4)
        a = rng.normal(0, 1, 15)
        b = rng.normal(0, 1, 15)
        auto = wilcoxon_signed_rank(a, b)
        exact = wilcoxon_signed_rank(a, b, method="exact")
        assert auto.p_value == exact.p_value

    def test_invariant_to_common_positive_scaling(self):
        rng = np.random.default_rng(5)
        a = rng.normal(0, 1, 30)
        b = rng.normal(0, 1, 30)
        base = wilcoxon_signed_rank(a, b)
        scaled = wilcoxon_signed_rank(7.5 * a, 7.5 * b)
        assert scaled.p_value == pytest.approx(base.p_value, rel=1e-12)
        assert scaled.n_effective == base.n_effective

    def test_strong_one_sided_shift_reaches_three_stars(self):
        a = np.arange(1.0, 14.0)
        res = wilcoxon_signed_rank(a, a + 1.0)
        assert res.p_value == pytest.approx(2.0 / 2 ** 13)
        assert res.stars == 3

    def test_star_thresholds(self):
        assert stars_for(0.0005) == 3
        assert stars_for(0.001) == 2
        assert stars_for(0.005) == 2
        assert stars_for(0.01) == 1
        assert stars_for(0.049) == 1
        assert stars_for(0.05) == 0
        assert stars_for(0.9) == 0

    def test_rejects_mismatched_or_empty(self):
        with pytest.raises(ShapeError):
            wilcoxon_signed_rank(np.zeros(3), np.zeros(4))
        with pytest.raises(ShapeError):
            wilcoxon_signed_rank(np.zeros(0), np.zeros(0))
        with pytest.raises(ConfigError):
            wilcoxon_signed_rank(np.zeros(3), np.ones(3), method="typo")

    def test_matches_scipy_on_tie_free_data(self):
        scipy_stats = pytest.importorskip("scipy.stats")
        rng = np.random.default_rng(6)
        for n, method, mode in ((12, "exact", "exact"),
                                (40, "approx", "approx")):
            for _ in range(20):
                a = rng.normal(0, 1, n)
                b = rng.normal(0, 1, n)
                res = wilcoxon_signed_rank(a, b, method=method)
                ref = scipy_stats.wilcoxon(a, b, mode=mode,
                                           correction=(method == "approx"))
                assert res.p_value == pytest.approx(ref.pvalue, abs=1e-9)
