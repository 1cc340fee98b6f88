"""Training losses: plain L2, Huber, Tukey's biweight, and weighted L2.

Every loss exposes its value and its gradient with respect to the (already
normalized) residual, applied coordinate-wise. Convention note: L2 is the
plain squared error (gradient 2*delta), while Huber and Biweight follow the
standard M-estimator rho/psi forms whose gradient equals delta on the
quadratic part. The factor of two between the two families is a constant
that only rescales the learning rate; it is kept so that the Huber gradient
saturates exactly at the tuning constant and the biweight psi matches its
textbook shape.
"""

from dataclasses import dataclass

import numpy as np

from robust_gum.errors import ConfigError, ShapeError

LOSS_KINDS = ("l2", "huber", "biweight", "deepgum")
NORMALIZATIONS = ("mad", "none")
DEFAULT_TUNING_C = 4.6851
MAD_FLOOR = 1e-6


@dataclass(frozen=True)
class LossSpec:
    """Which loss to train with and how residuals are scaled first.

    tuning_c is the Huber/Biweight threshold; the weighted-L2 loss ignores
    it (its downweighting comes from per-sample responsibilities instead).
    """

    kind: str = "l2"
    tuning_c: float = DEFAULT_TUNING_C
    normalization: str = "mad"

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(
                f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(
                f"normalization must be one of {NORMALIZATIONS}, "
                f"got {self.normalization!r}")
        if not (self.tuning_c > 0 and np.isfinite(self.tuning_c)):
            raise ConfigError("tuning_c must be a positive finite real")


def mad(residuals):
    """Per-coordinate median absolute deviation, floored at MAD_FLOOR.

    Computed about the per-coordinate median, so it is unchanged by adding
    a constant to every residual and scales linearly under positive
    scaling.
    """
    deltas = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
    if deltas.shape[0] < 1:
        raise ShapeError("mad needs at least one residual row")
    centered = np.abs(deltas - np.median(deltas, axis=0))
    return np.maximum(np.median(centered, axis=0), MAD_FLOOR)


def loss_and_weight(delta, spec):
    """Loss value and d(loss)/d(delta) for a normalized residual.

    Accepts scalars or arrays (evaluated elementwise). The weighted-L2 kind
    reduces to plain L2 here; its responsibility weight multiplies the
    per-sample contribution in the trainer, not the residual shape.
    """
    delta = np.asarray(delta, dtype=np.float64)
    c = spec.tuning_c
    if spec.kind in ("l2", "deepgum"):
        return delta * delta, 2.0 * delta
    if spec.kind == "huber":
        small = np.abs(delta) <= c
        loss = np.where(small, 0.5 * delta * delta,
                        c * np.abs(delta) - 0.5 * c * c)
        grad = np.clip(delta, -c, c)
        return loss, grad
    # biweight: quadratic-ish core, exactly flat beyond the threshold
    small = np.abs(delta) <= c
    core = 1.0 - (delta / c) ** 2
    loss = np.where(small, (c * c / 6.0) * (1.0 - core ** 3), c * c / 6.0)
    grad = np.where(small, delta * core ** 2, 0.0)
    return loss, grad


def deepgum_batch_loss(residuals, resp, gran):
    """Responsibility-weighted sum of squared residuals.

    resp has one column per granularity unit; each weight multiplies its
    unit's squared-residual block. With all weights 1 this is the plain sum
    of squared residuals.
    """
    deltas = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
    resp = np.asarray(resp, dtype=np.float64)
    if resp.ndim == 1:
        resp = resp[:, None]
    n, dim = deltas.shape
    n_units = gran.n_units(dim)
    if resp.shape != (n, n_units):
        raise ShapeError(
            f"responsibilities shape {resp.shape}, expected {(n, n_units)}")
    expanded = gran.expand(resp, dim)
    return float((expanded * deltas * deltas).sum())
