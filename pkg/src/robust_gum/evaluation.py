"""Error metrics, outlier detection scores, and the signed-rank test.

The Wilcoxon implementation provides an exact two-sided p-value by dynamic
programming over the signed-rank distribution (ranks doubled so tied
average ranks stay integral) and a tie- and continuity-corrected normal
approximation for larger samples.
"""

import math
from dataclasses import dataclass

import numpy as np

from robust_gum.errors import ConfigError, ShapeError
from robust_gum.mixture import Granularity

DEFAULT_FAILURE_THRESHOLD = 0.05
EXACT_LIMIT = 20
STAR_THRESHOLDS = (0.05, 0.01, 0.001)


@dataclass
class MetricReport:
    mae: float
    rmse: float
    failure_rate: float
    per_landmark_mae: list
    n: int
    precision: float = None
    recall: float = None

    def to_dict(self):
        return {"mae": self.mae, "rmse": self.rmse,
                "failure_rate": self.failure_rate,
                "per_landmark_mae": self.per_landmark_mae, "n": self.n,
                "precision": self.precision, "recall": self.recall}


@dataclass
class WilcoxonResult:
    statistic: float
    p_value: float
    n_effective: int
    stars: int

    def to_dict(self):
        return {"statistic": self.statistic, "p_value": self.p_value,
                "n_effective": self.n_effective, "stars": self.stars}


def _unit_structure(dim, gran):
    if gran is not None:
        return gran.unit_ranges(dim)
    if dim % 2 == 0:
        return Granularity.group_wise().unit_ranges(dim)
    return Granularity.coordinate_wise().unit_ranges(dim)


def metrics(pred, truth, failure_threshold=DEFAULT_FAILURE_THRESHOLD,
            scale=1.0, gran=None):
    """MAE/RMSE over coordinates plus a unit-level failure rate.

    A unit fails when its Euclidean error divided by `scale` (scalar or
    per-sample array, the image-width analog) exceeds failure_threshold.
    Units default to coordinate pairs for even dimensions.
    """
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    if pred.shape != truth.shape:
        raise ShapeError(
            f"pred shape {pred.shape} differs from truth {truth.shape}")
    if failure_threshold <= 0:
        raise ConfigError("failure_threshold must be positive")
    scale = np.asarray(scale, dtype=np.float64)
    if scale.ndim == 0:
        scale = np.full(pred.shape[0], float(scale))
    if scale.shape != (pred.shape[0],) or (scale <= 0).any():
        raise ShapeError("scale must be a positive scalar or [N] array")
    err = pred - truth
    mae = float(np.abs(err).mean())
    rmse = float(np.sqrt((err * err).mean()))
    ranges = _unit_structure(pred.shape[1], gran)
    per_unit_mae = []
    failures = 0
    for start, end in ranges:
        block = err[:, start:end]
        per_unit_mae.append(float(np.abs(block).mean()))
        dist = np.linalg.norm(block, axis=1) / scale
        failures += int((dist > failure_threshold).sum())
    failure_rate = failures / (pred.shape[0] * len(ranges))
    return MetricReport(mae, rmse, failure_rate, per_unit_mae,
                        pred.shape[0])


def precision_recall(predicted_outliers, true_outliers):
    """Detection precision and recall over aligned boolean arrays.

    Convention: precision is 1 when nothing is predicted (no false
    positives were produced), and recall is 1 when there are no true
    outliers to find.
    """
    predicted = np.asarray(predicted_outliers, dtype=bool).ravel()
    truth = np.asarray(true_outliers, dtype=bool).ravel()
    if predicted.shape != truth.shape:
        raise ShapeError("prediction and truth lengths differ")
    true_pos = int((predicted & truth).sum())
    n_pred = int(predicted.sum())
    n_true = int(truth.sum())
    precision = true_pos / n_pred if n_pred else 1.0
    recall = true_pos / n_true if n_true else 1.0
    return precision, recall


def _signed_ranks(diffs):
    """Average ranks of |diffs|, ties sharing their mean rank."""
    mags = np.abs(diffs)
    order = np.argsort(mags, kind="stable")
    ranks = np.empty(diffs.size)
    sorted_mags = mags[order]
    i = 0
    while i < diffs.size:
        j = i
        while j + 1 < diffs.size and sorted_mags[j + 1] == sorted_mags[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_two_sided_p(doubled_ranks, doubled_w):
    """Exact P over all 2^n sign assignments via subset-sum counting."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for s in doubled_ranks:
        s = int(s)
        counts[s:] += counts[:counts.size - s].copy()
    n_assignments = counts.sum()
    w = int(round(doubled_w))
    p_low = counts[:w + 1].sum() / n_assignments
    p_high = counts[w:].sum() / n_assignments
    return min(1.0, 2.0 * min(p_low, p_high))


def _approx_two_sided_p(ranks, w_plus, n):
    """Normal approximation with tie and continuity corrections."""
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var -= ((tie_counts ** 3 - tie_counts).sum()) / 48.0
    if var <= 0:
        return 1.0
    shift = w_plus - mean
    corrected = shift - 0.5 * np.sign(shift) if shift != 0 else 0.0
    z = corrected / math.sqrt(var)
    return min(1.0, 2.0 * 0.5 * math.erfc(abs(z) / math.sqrt(2.0)))


def stars_for(p_value):
    """0-3 stars at the 0.05 / 0.01 / 0.001 two-sided levels."""
    if p_value < STAR_THRESHOLDS[2]:
        return 3
    if p_value < STAR_THRESHOLDS[1]:
        return 2
    if p_value < STAR_THRESHOLDS[0]:
        return 1
    return 0


def wilcoxon_signed_rank(errors_a, errors_b, method="auto"):
    """Two-sided paired signed-rank test on errors_a - errors_b.

    Zero differences are dropped; ties receive average ranks. The exact
    distribution is used for n_effective <= 20 (or always under
    method="exact"); beyond that the corrected normal approximation
    applies. The statistic is the positive-rank sum W+.
    """
    a = np.asarray(errors_a, dtype=np.float64).ravel()
    b = np.asarray(errors_b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError("paired arrays must have equal length")
    if a.size < 1:
        raise ShapeError("need at least one pair")
    if method not in ("auto", "exact", "approx"):
        raise ConfigError(f"unknown method {method!r}")
    diffs = a - b
    diffs = diffs[diffs != 0.0]
    n = diffs.size
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, 0)
    ranks = _signed_ranks(diffs)
    w_plus = float(ranks[diffs > 0].sum())
    use_exact = method == "exact" or (method == "auto" and n <= EXACT_LIMIT)
    if use_exact:
        p = _exact_two_sided_p(np.round(2.0 * ranks), 2.0 * w_plus)
    else:
        p = _approx_two_sided_p(ranks, w_plus, n)
    return WilcoxonResult(w_plus, p, n, stars_for(p))
