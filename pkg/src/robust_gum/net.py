"""Minimal dense feedforward regressor with responsibility-weighted SGD.

The regressor is a plain stack of dense layers. Batch forward/backward work
is delegated to the selected kernel backend (compiled or numpy); everything
here is float64. Parameters are treated as immutable: sgd_step returns a new
Regressor rather than mutating in place, which makes snapshotting free.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from robust_gum._kernels import ACTIVATION_CODES, kernels
from robust_gum.errors import DataFormatError, NumericError, ShapeError

MODEL_FORMAT = "robust-gum-model"
MODEL_VERSION = 1


@dataclass
class Regressor:
    """Dense feedforward network mapping R^M -> R^D.

    weights[i] has shape [out_i, in_i]; consecutive layers must chain
    (out_i == in_{i+1}). The final activation is identity so the output
    stays unbounded.
    """

    weights: list
    biases: list
    activations: list

    def __post_init__(self):
        self.validate()

    @property
    def input_dim(self):
        return self.weights[0].shape[1]

    @property
    def output_dim(self):
        return self.weights[-1].shape[0]

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def act_codes(self):
        return np.array([ACTIVATION_CODES[a] for a in self.activations],
                        dtype=np.int32)

    def validate(self):
        if not self.weights:
            raise ShapeError("regressor needs at least one layer")
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ShapeError("weights, biases, activations must align")
        for i, (w, b, a) in enumerate(
                zip(self.weights, self.biases, self.activations)):
            if a not in ACTIVATION_CODES:
                raise ShapeError(f"unknown activation {a!r} at layer {i}")
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ShapeError(f"inconsistent parameter shapes at layer {i}")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(
                    f"layer {i} input dim {w.shape[1]} != layer {i-1} "
                    f"output dim {self.weights[i-1].shape[0]}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NumericError(f"non-finite parameters at layer {i}")
        if self.activations[-1] != "identity":
            raise ShapeError("final layer activation must be identity")

    def copy(self):
        return Regressor([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases],
                         list(self.activations))

    def params_equal(self, other):
        return (self.activations == other.activations
                and all(np.array_equal(a, b)
                        for a, b in zip(self.weights, other.weights))
                and all(np.array_equal(a, b)
                        for a, b in zip(self.biases, other.biases)))


@dataclass
class GradientTape:
    """Per-parameter gradient sums for one mini-batch."""

    d_weights: list
    d_biases: list
    sample_count: int

    @classmethod
    def zeros_like(cls, net):
        return cls([np.zeros_like(w) for w in net.weights],
                   [np.zeros_like(b) for b in net.biases], 0)

    def max_abs(self):
        parts = [np.abs(g).max(initial=0.0)
                 for g in self.d_weights + self.d_biases]
        return max(parts)


@dataclass
class SgdConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ShapeError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ShapeError("batch_size and max_epochs must be >= 1")


def init_regressor(layer_dims, hidden_activation="rectifier", seed=0):
    """Build a regressor with uniform +/- sqrt(6/(fan_in+fan_out)) weights.

    layer_dims is [input_dim, hidden..., output_dim]; hidden layers get
    hidden_activation, the output layer is identity. Biases start at zero.
    """
    if len(layer_dims) < 2:
        raise ShapeError("layer_dims needs at least input and output dims")
    rng = np.random.default_rng(seed)
    weights, biases, acts = [], [], []
    for i in range(len(layer_dims) - 1):
        fan_in, fan_out = layer_dims[i], layer_dims[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(np.ascontiguousarray(
            rng.uniform(-limit, limit, size=(fan_out, fan_in))))
        biases.append(np.zeros(fan_out))
        last = i == len(layer_dims) - 2
        acts.append("identity" if last else hidden_activation)
    return Regressor(weights, biases, acts)


def _as_batch(x, dim, what):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ShapeError(f"{what} must have {dim} columns, got shape {arr.shape}")
    return arr


def forward(net, x):
    """Evaluate the network on a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise ShapeError(
            f"input must be a vector of length {net.input_dim}, got {x.shape}")
    if not np.isfinite(x).all():
        raise NumericError("non-finite input")
    return predict(net, x[None, :])[0]


def predict(net, x):
    """Evaluate the network on a batch [N x M] -> [N x D]."""
    x = _as_batch(x, net.input_dim, "input")
    return kernels.forward_cache(net.weights, net.biases, net.act_codes, x)[-1]


def forward_cache(net, x):
    x = _as_batch(x, net.input_dim, "input")
    return kernels.forward_cache(net.weights, net.biases, net.act_codes, x)


def backprop(net, x, grad_out, cache=None):
    """Accumulate parameter gradients of any loss given d(loss)/d(output).

    grad_out is [N x D]. Returns a GradientTape with batch-summed gradients.
    """
    x = _as_batch(x, net.input_dim, "input")
    grad_out = _as_batch(grad_out, net.output_dim, "grad_out")
    if grad_out.shape[0] != x.shape[0]:
        raise ShapeError("grad_out and input batch sizes differ")
    if cache is None:
        cache = kernels.forward_cache(net.weights, net.biases, net.act_codes, x)
    for i, a in enumerate(cache):
        if not np.isfinite(a).all():
            raise NumericError(f"non-finite activations at layer {i}")
    dw, db = kernels.backward_sum(net.weights, cache, net.act_codes, grad_out)
    return GradientTape(dw, db, x.shape[0])


def backward_weighted(net, x, y, resp, normalizer):
    """Gradient of sum_n r_n * ||(y_n - net(x_n)) / normalizer||^2.

    resp may be per-sample [N] or per-coordinate [N x D] (group/coordinate
    outlier units expand to the latter). A sample with resp 0 contributes
    exactly zero to every accumulator.
    """
    x = _as_batch(x, net.input_dim, "input")
    y = _as_batch(y, net.output_dim, "target")
    if y.shape[0] != x.shape[0]:
        raise ShapeError("input and target batch sizes differ")
    resp = np.asarray(resp, dtype=np.float64)
    if resp.ndim == 1:
        resp = resp[:, None]
    if resp.shape[0] != x.shape[0] or resp.shape[1] not in (1, net.output_dim):
        raise ShapeError(f"responsibility shape {resp.shape} does not match batch")
    normalizer = np.asarray(normalizer, dtype=np.float64)
    if normalizer.shape != (net.output_dim,) or (normalizer <= 0).any():
        raise ShapeError("normalizer must be a positive vector of output dim")
    cache = kernels.forward_cache(net.weights, net.biases, net.act_codes, x)
    grad_out = np.ascontiguousarray(
        resp * 2.0 * (cache[-1] - y) / normalizer ** 2)
    return backprop(net, x, grad_out, cache=cache)


def sgd_step(net, tape, cfg):
    """w <- w - lr * (batch gradient sum / batch size); returns a new net."""
    if len(tape.d_weights) != net.n_layers:
        raise ShapeError("tape does not match network layout")
    count = max(tape.sample_count, 1)
    scale = cfg.learning_rate / count
    weights = [w - scale * dw for w, dw in zip(net.weights, tape.d_weights)]
    biases = [b - scale * db for b, db in zip(net.biases, tape.d_biases)]
    return Regressor(weights, biases, list(net.activations))


def save_model(net, path):
    """Write a versioned model file: one JSON header line + f8 payload."""
    header = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "layer_dims": [list(w.shape) for w in net.weights],
        "activations": list(net.activations),
        "dtype": "<f8",
        "layout": "row-major, per layer: weight then bias",
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii"))
        fh.write(b"\n")
        for w, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("ascii"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"unreadable model header in {path}") from exc
        if header.get("format") != MODEL_FORMAT:
            raise DataFormatError(f"{path} is not a {MODEL_FORMAT} file")
        if header.get("version") != MODEL_VERSION:
            raise DataFormatError(
                f"unsupported model version {header.get('version')}")
        weights, biases = [], []
        for out_dim, in_dim in header["layer_dims"]:
            w_bytes = fh.read(8 * out_dim * in_dim)
            b_bytes = fh.read(8 * out_dim)
            if len(w_bytes) != 8 * out_dim * in_dim or len(b_bytes) != 8 * out_dim:
                raise DataFormatError(f"truncated model payload in {path}")
            weights.append(np.frombuffer(w_bytes, dtype="<f8")
                           .reshape(out_dim, in_dim).copy())
            biases.append(np.frombuffer(b_bytes, dtype="<f8").copy())
        if fh.read(1):
            raise DataFormatError(f"trailing bytes in model file {path}")
    return Regressor(weights, biases, list(header["activations"]))
