"""Alternating mixture fitting and responsibility-weighted SGD training.

The flow: plain squared-error training with early stopping first (a few
unconditional warmup epochs, then patience tracking), after which the
outer loop repeats { fit the residual mixture on the training set, carry
its responsibilities to the validation set, retrain with weighted SGD }
until the weighted validation loss stops improving. Ground-truth outlier
labels are never read here; detection quality is measured elsewhere.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from robust_gum.errors import AllOutlierError, ConfigError, NumericError
from robust_gum.losses import LossSpec, deepgum_batch_loss, loss_and_weight, mad
from robust_gum.mixture import (
    Granularity,
    MixtureParams,
    e_step,
    em_fit,
    init_params,
)
from robust_gum.net import (
    SgdConfig,
    backprop,
    backward_weighted,
    predict,
    sgd_step,
)

logger = logging.getLogger("robust_gum.training")

PHASE_WARMUP = "L2-warmup"
PHASE_EM = "EM"
PHASE_SGD = "SGD"

DEFAULT_PATIENCE = 5
DEFAULT_WARMUP_EPOCHS = 3
DEFAULT_OUTER_EPSILON = 1e-5
DEFAULT_MAX_OUTER_ITERS = 50
DEFAULT_OUTLIER_THRESHOLD = 0.5


@dataclass
class TrainConfig:
    loss: LossSpec = field(default_factory=lambda: LossSpec("deepgum"))
    granularity: Granularity = field(default_factory=Granularity.group_wise)
    sgd: SgdConfig = field(default_factory=SgdConfig)
    patience: int = DEFAULT_PATIENCE
    warmup_epochs: int = DEFAULT_WARMUP_EPOCHS
    outer_epsilon: float = DEFAULT_OUTER_EPSILON
    em_tol: float = 1e-4
    em_max_iters: int = 100
    max_outer_iters: int = DEFAULT_MAX_OUTER_ITERS
    outlier_threshold: float = DEFAULT_OUTLIER_THRESHOLD
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be >= 0")
        if self.outer_epsilon <= 0:
            raise ConfigError("outer_epsilon must be positive")
        if self.max_outer_iters < 1:
            raise ConfigError("max_outer_iters must be >= 1")
        if not 0.0 <= self.outlier_threshold <= 1.0:
            raise ConfigError("outlier_threshold must lie in [0, 1]")


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    train_loss: float
    val_loss: float
    pi_mean: float = None
    outlier_fraction: float = None

    def to_dict(self):
        return {"epoch": self.epoch, "phase": self.phase,
                "train_loss": self.train_loss, "val_loss": self.val_loss,
                "pi_mean": self.pi_mean,
                "outlier_fraction": self.outlier_fraction}


@dataclass
class TrainState:
    net: object
    epoch: int = 0
    history: list = field(default_factory=list)
    best_val: float = math.inf
    params: MixtureParams = None
    resp_train: np.ndarray = None
    resp_val: np.ndarray = None
    outer_iteration: int = 0
    em_traces: list = field(default_factory=list)
    stop_reason: str = None


def classify_outliers(resp, threshold=DEFAULT_OUTLIER_THRESHOLD):
    """A unit is an outlier when its inlier responsibility drops below
    the threshold; threshold 0 therefore classifies everything inlier."""
    return np.asarray(resp, dtype=np.float64) < threshold


def _record(state, phase, train_loss, val_loss, pi_mean=None,
            outlier_fraction=None):
    entry = EpochRecord(state.epoch, phase, float(train_loss),
                        float(val_loss),
                        None if pi_mean is None else float(pi_mean),
                        None if outlier_fraction is None
                        else float(outlier_fraction))
    state.history.append(entry)
    logger.info(
        "epoch %d phase=%s train_loss=%.6g val_loss=%.6g pi=%s outliers=%s",
        entry.epoch, phase, entry.train_loss, entry.val_loss,
        "-" if entry.pi_mean is None else f"{entry.pi_mean:.4f}",
        "-" if entry.outlier_fraction is None
        else f"{entry.outlier_fraction:.4f}")


def _mad_scale(net, data, loss_spec):
    """Per-coordinate residual scale, recomputed on the full training set."""
    if loss_spec.normalization != "mad":
        return np.ones(data.y.shape[1])
    return mad(data.y - predict(net, data.x))


def _check_finite(value, what):
    if not math.isfinite(value):
        raise NumericError(f"{what} became non-finite")
    return value


def _train_epoch(net, data, resp_coords, loss_spec, scale, cfg, epoch_index):
    """One pass of mini-batch SGD; returns the updated network.

    resp_coords is already coordinate-expanded [N x D] (or None for
    uniform weights).
    """
    n = data.n_samples
    order = np.random.default_rng([cfg.seed, 5, epoch_index]).permutation(n)
    batch = cfg.sgd.batch_size
    for start in range(0, n, batch):
        idx = order[start:start + batch]
        xb, yb = data.x[idx], data.y[idx]
        if loss_spec.kind in ("l2", "deepgum"):
            rb = (resp_coords[idx] if resp_coords is not None
                  else np.ones(idx.size))
            tape = backward_weighted(net, xb, yb, rb, scale)
        else:
            delta = (predict(net, xb) - yb) / scale
            _, psi = loss_and_weight(delta, loss_spec)
            tape = backprop(net, xb, np.ascontiguousarray(psi / scale))
        net = sgd_step(net, tape, cfg.sgd)
    return net


def _criterion(net, data, resp, loss_spec, scale, gran):
    """Loss value used both for epoch reporting and early stopping.

    Plain and weighted squared errors are compared unnormalized so the
    criterion stays comparable across epochs while the residual scale
    changes; the M-estimator losses use their own robust value. resp is
    per-unit [N x U] or None for uniform weights.
    """
    residuals = data.y - predict(net, data.x)
    if loss_spec.kind == "deepgum":
        if resp is None:
            n_units = len(gran.unit_ranges(residuals.shape[1]))
            resp = np.ones((data.n_samples, n_units))
        return deepgum_batch_loss(residuals, resp, gran) / data.n_samples
    if loss_spec.kind == "l2":
        return float((residuals * residuals).mean())
    value, _ = loss_and_weight(residuals / scale, loss_spec)
    return float(value.mean())


def _sgd_until_stalled(state, train, val, cfg, loss_spec, resp_train,
                       resp_val):
    """Mini-batch SGD with strict-improvement patience on validation loss.

    The entering network counts as the first snapshot, so the result is
    never worse than the starting point under the same criterion. Returns
    the best network and its validation value.
    """
    gran = cfg.granularity
    net = state.net
    scale = _mad_scale(net, train, loss_spec)
    best_val = _check_finite(
        _criterion(net, val, resp_val, loss_spec, scale, gran),
        "validation loss")
    best_net = net
    stale = 0
    resp_coords = (None if resp_train is None
                   else gran.expand(resp_train, train.y.shape[1]))
    for _ in range(cfg.sgd.max_epochs):
        state.epoch += 1
        scale = _mad_scale(net, train, loss_spec)
        net = _train_epoch(net, train, resp_coords, loss_spec, scale, cfg,
                           state.epoch)
        train_loss = _check_finite(
            _criterion(net, train, resp_train, loss_spec, scale, gran),
            "training loss")
        val_loss = _check_finite(
            _criterion(net, val, resp_val, loss_spec, scale, gran),
            "validation loss")
        pi_mean = (None if state.params is None
                   else float(np.mean(state.params.pis)))
        frac = (None if resp_train is None
                else float(classify_outliers(
                    resp_train, cfg.outlier_threshold).mean()))
        _record(state, PHASE_SGD, train_loss, val_loss, pi_mean, frac)
        if val_loss < best_val:
            best_val = val_loss
            best_net = net
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    state.net = best_net
    state.best_val = best_val
    return best_net, best_val


def train_initial(net, train, val, cfg):
    """Plain squared-error training: unconditional warmup epochs, then
    patience-tracked epochs, returning the best-on-validation snapshot."""
    if train.n_samples < 1 or val.n_samples < 1:
        raise ConfigError("training and validation sets must be nonempty")
    l2 = LossSpec("l2", normalization=cfg.loss.normalization)
    state = TrainState(net=net)
    _warmup_epochs(state, train, val, cfg, l2)
    _sgd_until_stalled(state, train, val, cfg, l2, None, None)
    return state


def _warmup_epochs(state, train, val, cfg, l2):
    gran = cfg.granularity
    for _ in range(cfg.warmup_epochs):
        state.epoch += 1
        scale = _mad_scale(state.net, train, l2)
        state.net = _train_epoch(state.net, train, None, l2, scale, cfg,
                                 state.epoch)
        train_loss = _criterion(state.net, train, None, l2, scale, gran)
        val_loss = _criterion(state.net, val, None, l2, scale, gran)
        _record(state, PHASE_WARMUP, train_loss, val_loss)


def _warm_start(params, residuals, gran):
    """Carry pi and Sigma forward, refresh gamma from current residuals."""
    fresh = init_params(residuals, gran)
    return MixtureParams(params.pis.copy(),
                         [s.copy() for s in params.sigmas], fresh.gammas)


def train_deepgum(state, train, val, cfg):
    """Alternate residual-mixture fitting with weighted SGD (the outer loop).

    Each outer iteration fits the mixture to training residuals, evaluates
    validation responsibilities under the fitted parameters, and retrains
    with weighted SGD. Both sides of the stop test use the current
    responsibilities: the entering network's weighted validation loss
    against the retrained one's. Growth beyond outer_epsilon returns the
    entering snapshot; failure to improve by at least the same relative
    margin stops with the retrained network (otherwise a fixed point would
    loop forever). If the mixture calls everything an outlier, the entering
    network is returned unchanged (trivial-solution guard).
    """
    gran = cfg.granularity
    loss_spec = LossSpec("deepgum", normalization=cfg.loss.normalization)
    params = None
    for outer in range(1, cfg.max_outer_iters + 1):
        state.outer_iteration = outer
        net_before = state.net
        residuals_train = train.y - predict(net_before, train.x)
        init = None if params is None else _warm_start(
            params, residuals_train, gran)
        try:
            em = em_fit(residuals_train, gran, init=init, tol=cfg.em_tol,
                        max_iters=cfg.em_max_iters)
        except AllOutlierError:
            state.stop_reason = "trivial-solution"
            logger.info("outer %d: mixture lost all inlier mass, "
                        "returning entering model", outer)
            return state.net, params, _deepgum_report(state)
        params = em.params
        state.params = params
        state.resp_train = em.responsibilities
        state.em_traces.append([entry.to_dict() for entry in em.trace])
        if classify_outliers(state.resp_train, cfg.outlier_threshold).all():
            state.stop_reason = "trivial-solution"
            logger.info("outer %d: every unit classified outlier, "
                        "returning entering model", outer)
            return state.net, params, _deepgum_report(state)
        residuals_val = val.y - predict(net_before, val.x)
        state.resp_val = e_step(residuals_val, params, gran)
        loss_before = deepgum_batch_loss(
            residuals_val, state.resp_val, gran) / val.n_samples
        frac = float(classify_outliers(
            state.resp_train, cfg.outlier_threshold).mean())
        _record(state, PHASE_EM,
                deepgum_batch_loss(residuals_train, state.resp_train,
                                   gran) / train.n_samples,
                loss_before, float(np.mean(params.pis)), frac)
        _, loss_after = _sgd_until_stalled(
            state, train, val, cfg, loss_spec, state.resp_train,
            state.resp_val)
        if loss_after > loss_before * (1.0 + cfg.outer_epsilon):
            state.net = net_before
            state.stop_reason = "validation-loss-grew"
            break
        if loss_after >= loss_before * (1.0 - cfg.outer_epsilon):
            state.stop_reason = "converged"
            break
    else:
        state.stop_reason = "max-outer-iterations"
    return state.net, params, _deepgum_report(state)


def _deepgum_report(state):
    return {
        "history": [entry.to_dict() for entry in state.history],
        "em_traces": state.em_traces,
        "outer_iterations": state.outer_iteration,
        "stop_reason": state.stop_reason,
        "final_params": (None if state.params is None
                         else state.params.to_dict()),
    }


def train_mestimator(net, train, val, cfg):
    """Baseline trainer: L2 warmup epochs, then the configured robust loss
    with patience-tracked early stopping."""
    if cfg.loss.kind not in ("huber", "biweight"):
        raise ConfigError(
            f"train_mestimator needs huber or biweight, got {cfg.loss.kind!r}")
    if train.n_samples < 1 or val.n_samples < 1:
        raise ConfigError("training and validation sets must be nonempty")
    l2 = LossSpec("l2", normalization=cfg.loss.normalization)
    state = TrainState(net=net)
    _warmup_epochs(state, train, val, cfg, l2)
    _sgd_until_stalled(state, train, val, cfg, cfg.loss, None, None)
    return state
