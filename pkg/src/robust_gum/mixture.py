"""Gaussian-uniform mixture over regression residuals, fitted by EM.

Residuals delta = y - net(x) are modeled per outlier unit as

    p(delta) = pi * N(delta; 0, Sigma) + (1 - pi) * gamma,

where gamma is the density of a uniform outlier component whose support is
re-estimated from the data at every M-step. Units come in three
granularities: one unit over the whole residual vector, one per contiguous
coordinate group (2-D landmarks by default), or one per scalar coordinate.

All densities are evaluated in the log domain; Sigma eigenvalues are floored
so the Gaussian never degenerates. The uniform's per-dimension variance is
floored at the same level: a uniform can never out-peak a Gaussian of equal
variance, so equal floors resolve the zero-spread race in favor of the
inlier component instead of collapsing to an all-outlier labeling.
"""

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from robust_gum.errors import (AllOutlierError, ConfigError,
                               DegenerateCovarianceError, ShapeError)

SIGMA_FLOOR = 1e-6
VAR_FLOOR = 1e-6
GAMMA_MIN = 1e-12
GAMMA_MAX = 1e12
DEFAULT_PI0 = 0.9
LOG_2PI = np.log(2.0 * np.pi)

GRANULARITY_MODES = ("sample", "group", "coordinate")


@dataclass(frozen=True)
class Granularity:
    """Partition of the D residual coordinates into outlier units.

    mode "sample": one unit spanning all D coordinates.
    mode "group": one unit per contiguous coordinate range; groups default
        to consecutive pairs (the 2-D landmark convention).
    mode "coordinate": D scalar units.
    """

    mode: str = "sample"
    groups: tuple = None

    def __post_init__(self):
        if self.mode not in GRANULARITY_MODES:
            raise ConfigError(f"unknown granularity mode {self.mode!r}")
        if self.groups is not None:
            if self.mode != "group":
                raise ConfigError("explicit groups require mode='group'")
            object.__setattr__(
                self, "groups",
                tuple((int(a), int(b)) for a, b in self.groups))

    @classmethod
    def sample_wise(cls):
        return cls("sample")

    @classmethod
    def group_wise(cls, groups=None):
        return cls("group", tuple(groups) if groups is not None else None)

    @classmethod
    def coordinate_wise(cls):
        return cls("coordinate")

    def unit_ranges(self, dim):
        """Contiguous [start, end) index ranges, one per unit."""
        if dim < 1:
            raise ShapeError("residual dimension must be >= 1")
        if self.mode == "sample":
            return [(0, dim)]
        if self.mode == "coordinate":
            return [(d, d + 1) for d in range(dim)]
        if self.groups is None:
            if dim % 2:
                raise ConfigError(
                    "default pairwise grouping needs an even dimension; "
                    "pass explicit groups")
            return [(d, d + 2) for d in range(0, dim, 2)]
        ranges = sorted(self.groups)
        cursor = 0
        for start, end in ranges:
            if start != cursor or end <= start:
                raise ConfigError(
                    f"groups must partition 0..{dim} contiguously, got {ranges}")
            cursor = end
        if cursor != dim:
            raise ConfigError(
                f"groups cover 0..{cursor} but residual dim is {dim}")
        return ranges

    def n_units(self, dim):
        return len(self.unit_ranges(dim))

    def expand(self, resp, dim):
        """Spread per-unit responsibilities [N x U] to coordinates [N x D]."""
        resp = np.asarray(resp, dtype=np.float64)
        ranges = self.unit_ranges(dim)
        if resp.ndim != 2 or resp.shape[1] != len(ranges):
            raise ShapeError(
                f"responsibilities shape {resp.shape} does not match "
                f"{len(ranges)} units")
        out = np.empty((resp.shape[0], dim))
        for u, (start, end) in enumerate(ranges):
            out[:, start:end] = resp[:, u:u + 1]
        return out

    def to_dict(self):
        d = {"mode": self.mode}
        if self.groups is not None:
            d["groups"] = [list(g) for g in self.groups]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["mode"], tuple(tuple(g) for g in d["groups"])
                   if d.get("groups") else None)


class GumUnit(NamedTuple):
    """Parameters of a single outlier unit."""

    pi: float
    sigma: np.ndarray
    gamma: float


@dataclass
class MixtureParams:
    """Per-unit mixture parameters: inlier prior, covariance, uniform density."""

    pis: np.ndarray
    sigmas: list
    gammas: np.ndarray

    def __post_init__(self):
        self.pis = np.asarray(self.pis, dtype=np.float64)
        self.gammas = np.asarray(self.gammas, dtype=np.float64)
        self.sigmas = [np.asarray(s, dtype=np.float64) for s in self.sigmas]
        self.validate()

    @property
    def n_units(self):
        return len(self.sigmas)

    def unit(self, u):
        return GumUnit(float(self.pis[u]), self.sigmas[u], float(self.gammas[u]))

    def validate(self):
        if not (len(self.pis) == len(self.sigmas) == len(self.gammas)):
            raise ShapeError("mixture parameter arrays must align")
        if ((self.pis < 0) | (self.pis > 1)).any():
            raise ShapeError("pi must lie in [0, 1]")
        if (self.gammas <= 0).any() or not np.isfinite(self.gammas).all():
            raise ShapeError("gamma must be positive and finite")
        for u, s in enumerate(self.sigmas):
            if s.ndim != 2 or s.shape[0] != s.shape[1]:
                raise ShapeError(f"sigma of unit {u} is not square")
            if not np.isfinite(s).all():
                raise DegenerateCovarianceError(f"non-finite sigma in unit {u}")
            if not np.allclose(s, s.T, rtol=1e-10, atol=1e-12):
                raise ShapeError(f"sigma of unit {u} is not symmetric")

    def copy(self):
        return MixtureParams(self.pis.copy(),
                             [s.copy() for s in self.sigmas],
                             self.gammas.copy())

    def max_relative_change(self, other):
        """Largest |new - old| / (|old| + tiny) over all parameter entries."""
        def rel(a, b):
            return float(np.max(np.abs(a - b) / (np.abs(b) + 1e-12), initial=0.0))

        parts = [rel(self.pis, other.pis), rel(self.gammas, other.gammas)]
        parts += [rel(a, b) for a, b in zip(self.sigmas, other.sigmas)]
        return max(parts)

    def to_dict(self):
        return {"units": [{"pi": float(p), "sigma": s.tolist(),
                           "gamma": float(g)}
                          for p, s, g in zip(self.pis, self.sigmas, self.gammas)]}

    @classmethod
    def from_dict(cls, d):
        units = d["units"]
        return cls(np.array([u["pi"] for u in units]),
                   [np.array(u["sigma"]) for u in units],
                   np.array([u["gamma"] for u in units]))


@dataclass
class EmTraceEntry:
    iteration: int
    log_likelihood: float
    pis: list
    det_sigmas: list
    gammas: list

    def to_dict(self):
        return {"iteration": self.iteration,
                "log_likelihood": self.log_likelihood,
                "pi": self.pis, "det_sigma": self.det_sigmas,
                "gamma": self.gammas}


@dataclass
class EmResult:
    params: MixtureParams
    responsibilities: np.ndarray
    trace: list = field(default_factory=list)


def _floor_spd(sigma, floor=SIGMA_FLOOR):
    """Symmetrize and raise eigenvalues to at least `floor`."""
    sym = 0.5 * (sigma + sigma.T)
    if not np.isfinite(sym).all():
        raise DegenerateCovarianceError("covariance has non-finite entries")
    try:
        vals, vecs = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise DegenerateCovarianceError("eigendecomposition failed") from exc
    vals = np.maximum(vals, floor)
    return (vecs * vals) @ vecs.T


def _log_gauss(deltas, sigma):
    """log N(delta; 0, sigma) for rows of deltas [N x d]."""
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise DegenerateCovarianceError(
            "covariance not positive definite after flooring") from exc
    solved = np.linalg.solve(chol, deltas.T)
    maha = np.sum(solved * solved, axis=0)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    d = deltas.shape[1]
    return -0.5 * (d * LOG_2PI + log_det + maha)


def _residual_matrix(residuals):
    arr = np.asarray(residuals, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ShapeError("residuals must be an [N x D] matrix")
    if not np.isfinite(arr).all():
        raise ShapeError("residuals contain non-finite entries")
    return arr


def gum_density(delta, unit):
    """Evaluate both mixture terms at one residual vector.

    Returns (pi * N(delta; 0, Sigma), (1 - pi) * gamma). Internals run in
    the log domain so the inlier term underflows gracefully to 0.0 instead
    of misbehaving.
    """
    delta = np.asarray(delta, dtype=np.float64).reshape(1, -1)
    sigma = np.atleast_2d(np.asarray(unit.sigma, dtype=np.float64))
    if sigma.shape[0] != delta.shape[1]:
        raise ShapeError("delta and sigma dimensions differ")
    log_n = _log_gauss(delta, sigma)[0]
    inlier = 0.0 if unit.pi == 0.0 else np.exp(np.log(unit.pi) + log_n)
    outlier = (1.0 - unit.pi) * unit.gamma
    return float(inlier), float(outlier)


def _unit_log_terms(deltas, unit):
    """Per-sample (log inlier term, log outlier term) for one unit."""
    log_n = _log_gauss(deltas, unit.sigma)
    with np.errstate(divide="ignore"):
        log_in = np.log(unit.pi) + log_n
        log_out = np.full(deltas.shape[0],
                          np.log1p(-unit.pi) + np.log(unit.gamma))
    return log_in, log_out


def e_step(residuals, params, gran):
    """Posterior inlier responsibilities, one column per outlier unit."""
    deltas = _residual_matrix(residuals)
    ranges = gran.unit_ranges(deltas.shape[1])
    if params.n_units != len(ranges):
        raise ShapeError(
            f"params have {params.n_units} units, granularity defines "
            f"{len(ranges)}")
    resp = np.empty((deltas.shape[0], len(ranges)))
    for u, (start, end) in enumerate(ranges):
        unit = params.unit(u)
        if unit.pi == 0.0:
            resp[:, u] = 0.0
        elif unit.pi == 1.0:
            resp[:, u] = 1.0
        else:
            log_in, log_out = _unit_log_terms(deltas[:, start:end], unit)
            resp[:, u] = np.exp(log_in - np.logaddexp(log_in, log_out))
    return resp


def m_step(residuals, resp, gran, prev=None, gamma_update="moments"):
    """Update all mixture parameters from the current responsibilities.

    pi is the mean responsibility and Sigma the responsibility-weighted
    second moment (normalized by the total inlier weight). The uniform
    density follows `gamma_update`:

    - "moments": 1/gamma is the product over the unit's dimensions of the
      outlier-weighted uniform widths 2*sqrt(3*(C2 - C1^2)), matching the
      uniform whose moments agree with the outlier-weighted residuals. If a
      unit has no outlier mass at all its gamma is held at `prev` (or the
      bounding-box value when prev is None).
    - "hold": gamma is carried over from `prev` unchanged (prev required).
      Used by em_fit, which estimates the uniform support once per fit; see
      its docstring for why that keeps every iteration an ascent step.
    """
    deltas = _residual_matrix(residuals)
    n = deltas.shape[0]
    ranges = gran.unit_ranges(deltas.shape[1])
    resp = np.asarray(resp, dtype=np.float64)
    if resp.shape != (n, len(ranges)):
        raise ShapeError(
            f"responsibilities shape {resp.shape}, expected {(n, len(ranges))}")
    if gamma_update not in ("moments", "hold"):
        raise ConfigError(f"unknown gamma_update {gamma_update!r}")
    if gamma_update == "hold" and prev is None:
        raise ConfigError("gamma_update='hold' needs prev params")
    pis = np.empty(len(ranges))
    gammas = np.empty(len(ranges))
    sigmas = []
    for u, (start, end) in enumerate(ranges):
        r = resp[:, u]
        block = deltas[:, start:end]
        total_in = r.sum()
        if total_in <= 0.0:
            raise AllOutlierError(u)
        pis[u] = total_in / n
        sigma = (block * r[:, None]).T @ block / total_in
        sigmas.append(_floor_spd(sigma))
        total_out = n - total_in
        if gamma_update == "hold":
            gammas[u] = prev.gammas[u]
        elif total_out <= 0.0:
            if prev is not None:
                gammas[u] = prev.gammas[u]
            else:
                gammas[u] = _bbox_gamma(block)
        else:
            w = (1.0 - r) / total_out
            c1 = w @ block
            c2 = w @ (block * block)
            var = np.maximum(c2 - c1 * c1, VAR_FLOOR)
            inv_gamma = np.prod(2.0 * np.sqrt(3.0 * var))
            gammas[u] = np.clip(1.0 / inv_gamma, GAMMA_MIN, GAMMA_MAX)
    return MixtureParams(pis, sigmas, gammas)


def _bbox_gamma(block):
    """Reciprocal volume of the residuals' axis-aligned bounding box.

    Degenerate widths are floored at the narrowest uniform the M-step can
    produce, keeping init and updates on the same scale.
    """
    widths = block.max(axis=0) - block.min(axis=0)
    widths = np.maximum(widths, 2.0 * np.sqrt(3.0 * VAR_FLOOR))
    return float(np.clip(1.0 / np.prod(widths), GAMMA_MIN, GAMMA_MAX))


def init_params(residuals, gran, pi0=DEFAULT_PI0):
    """Default first-EM initialization: pi0, unweighted moments, bbox gamma."""
    deltas = _residual_matrix(residuals)
    ranges = gran.unit_ranges(deltas.shape[1])
    pis, gammas, sigmas = [], [], []
    for start, end in ranges:
        block = deltas[:, start:end]
        pis.append(pi0)
        sigmas.append(_floor_spd(block.T @ block / deltas.shape[0]))
        gammas.append(_bbox_gamma(block))
    return MixtureParams(np.array(pis), sigmas, np.array(gammas))


def log_likelihood(residuals, params, gran):
    """Observed-data log-likelihood, summed over samples and units."""
    deltas = _residual_matrix(residuals)
    ranges = gran.unit_ranges(deltas.shape[1])
    total = 0.0
    for u, (start, end) in enumerate(ranges):
        log_in, log_out = _unit_log_terms(deltas[:, start:end], params.unit(u))
        total += float(np.logaddexp(log_in, log_out).sum())
    return total


def _trace_entry(iteration, ll, params):
    return EmTraceEntry(
        iteration, ll, [float(p) for p in params.pis],
        [float(np.linalg.det(s)) for s in params.sigmas],
        [float(g) for g in params.gammas])


def em_fit(residuals, gran, init=None, tol=1e-4, max_iters=100):
    """Alternate E and M steps until parameters are stable.

    The uniform component is treated as a density with an unknown support
    box: the likelihood-maximizing support given any soft assignment is the
    bounding box of the residuals, which does not depend on the
    responsibilities. gamma is therefore estimated once per fit (from `init`
    when given, else from the residual bounding box) and held fixed across
    iterations, while pi and Sigma take their exact weighted-maximum-
    likelihood updates. Every iteration is then an ascent step on the
    observed-data log-likelihood, so the returned trace is non-decreasing;
    re-estimating gamma from outlier-weighted moments inside the loop (the
    "moments" mode of m_step) has no such guarantee and can cycle without
    converging. Callers that want a moment-matched gamma can apply m_step
    directly to the returned responsibilities.

    Returns an EmResult whose responsibilities are consistent with the final
    parameters and whose trace holds one entry per completed iteration.
    """
    if tol <= 0 or max_iters < 1:
        raise ConfigError("tol must be positive and max_iters >= 1")
    deltas = _residual_matrix(residuals)
    if deltas.shape[0] < 2:
        raise ShapeError("EM needs at least two residual rows")
    params = init.copy() if init is not None else init_params(deltas, gran)
    trace = []
    for iteration in range(1, max_iters + 1):
        resp = e_step(deltas, params, gran)
        new_params = m_step(deltas, resp, gran, prev=params,
                            gamma_update="hold")
        ll = log_likelihood(deltas, new_params, gran)
        trace.append(_trace_entry(iteration, ll, new_params))
        change = new_params.max_relative_change(params)
        params = new_params
        if change < tol:
            break
    resp = e_step(deltas, params, gran)
    return EmResult(params, resp, trace)


def write_em_trace(trace, path):
    """Export one JSON record per EM iteration for plotting."""
    with open(path, "w", encoding="ascii") as fh:
        for entry in trace:
            fh.write(json.dumps(entry.to_dict()))
            fh.write("\n")
