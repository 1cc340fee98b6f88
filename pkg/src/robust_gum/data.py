"""Synthetic landmark-style datasets and controlled outlier injection.

A fixed random teacher network maps unit-cube inputs to landmark targets
inside a pixel box; three corruption schemes then displace a chosen
fraction of the targets while recording exact contamination labels:

- "ngo": each selected landmark moves a near-constant distance (Gaussian
  around ngo_mean) in a uniform random direction, clipped to the box.
- "lugo": each selected landmark is resampled uniformly over the box,
  which matches a uniform displacement distance plus clipping but is
  cleaner to reason about.
- "gugo": a fraction of whole samples have every landmark resampled
  uniformly, so the natural label unit is the sample.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from robust_gum.errors import ConfigError, DataFormatError, ShapeError
from robust_gum.mixture import Granularity
from robust_gum.net import Regressor, predict

CORRUPTION_SCHEMES = ("ngo", "lugo", "gugo")
DEFAULT_BOX = (224.0, 224.0)
DEFAULT_NGO_MEAN = 25.0
DEFAULT_NGO_STD = 2.0


@dataclass(frozen=True)
class CorruptionSpec:
    scheme: str
    fraction: float
    ngo_mean: float = DEFAULT_NGO_MEAN
    ngo_std: float = DEFAULT_NGO_STD
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in CORRUPTION_SCHEMES:
            raise ConfigError(
                f"scheme must be one of {CORRUPTION_SCHEMES}, "
                f"got {self.scheme!r}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ConfigError("fraction must lie in [0, 1]")
        if self.ngo_mean <= 0 or self.ngo_std < 0:
            raise ConfigError("ngo_mean must be > 0 and ngo_std >= 0")

    def to_dict(self):
        return {"scheme": self.scheme, "fraction": self.fraction,
                "ngo_mean": self.ngo_mean, "ngo_std": self.ngo_std,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Dataset:
    """Inputs, targets, and optional exact outlier labels.

    outlier_labels, when present, carry one boolean column per unit of
    `label_granularity` (landmark pairs for the landmark-wise schemes, one
    column for the sample-wise scheme).
    """

    x: np.ndarray
    y: np.ndarray
    box: tuple = None
    outlier_labels: np.ndarray = None
    label_granularity: Granularity = None
    seed: int = None
    corruption: CorruptionSpec = field(default=None)

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.float64)
        if self.x.ndim != 2 or self.y.ndim != 2:
            raise ShapeError("x and y must be 2-D arrays")
        if self.x.shape[0] != self.y.shape[0]:
            raise ShapeError("x and y row counts differ")
        if not (np.isfinite(self.x).all() and np.isfinite(self.y).all()):
            raise ShapeError("dataset contains non-finite values")
        if self.outlier_labels is not None:
            self.outlier_labels = np.ascontiguousarray(
                self.outlier_labels, dtype=bool)
            if self.label_granularity is None:
                raise ShapeError("labels need a label_granularity")
            units = self.label_granularity.n_units(self.y.shape[1])
            if self.outlier_labels.shape != (self.x.shape[0], units):
                raise ShapeError(
                    f"labels shape {self.outlier_labels.shape}, expected "
                    f"{(self.x.shape[0], units)}")

    @property
    def n_samples(self):
        return self.x.shape[0]

    @property
    def input_dim(self):
        return self.x.shape[1]

    @property
    def output_dim(self):
        return self.y.shape[1]

    @property
    def n_landmarks(self):
        if self.output_dim % 2:
            raise ShapeError("landmark view needs an even target dimension")
        return self.output_dim // 2

    def subset(self, indices):
        labels = (None if self.outlier_labels is None
                  else self.outlier_labels[indices])
        return Dataset(self.x[indices], self.y[indices], box=self.box,
                       outlier_labels=labels,
                       label_granularity=self.label_granularity,
                       seed=self.seed, corruption=self.corruption)


def teacher_network(input_dim, n_landmarks, seed):
    """The fixed random network behind a dataset, plus its box squash.

    Returns (net, to_targets) where to_targets maps raw net outputs into
    the box via a sigmoid, coordinate pairs scaling to (width, height).
    """
    rng = np.random.default_rng([seed, 1])
    dim_out = 2 * n_landmarks
    hidden = 16
    weights = [
        np.ascontiguousarray(rng.normal(0.0, 1.0, (hidden, input_dim))),
        np.ascontiguousarray(
            rng.normal(0.0, 1.0 / math.sqrt(hidden), (dim_out, hidden))),
    ]
    biases = [rng.normal(0.0, 0.5, hidden), rng.normal(0.0, 0.5, dim_out)]
    net = Regressor(weights, biases, ["tanh", "identity"])

    def to_targets(raw, box):
        scale = np.tile([box[0], box[1]], n_landmarks)
        return scale / (1.0 + np.exp(-raw))

    return net, to_targets


def teacher_targets(x, input_dim, n_landmarks, seed, box=DEFAULT_BOX):
    """Noise-free targets of the seed's teacher on the given inputs."""
    net, to_targets = teacher_network(input_dim, n_landmarks, seed)
    return to_targets(predict(net, x), box)


def make_teacher_dataset(n, input_dim, n_landmarks, inlier_noise_std, seed,
                         box=DEFAULT_BOX):
    """Sample inputs in the unit cube and targets from a random teacher.

    Targets live inside [0, width] x [0, height] per landmark; Gaussian
    inlier noise is added after the box scaling so its standard deviation
    is in pixel units.
    """
    if n < 1 or input_dim < 1 or n_landmarks < 1:
        raise ConfigError("n, input_dim, n_landmarks must all be >= 1")
    if inlier_noise_std < 0:
        raise ConfigError("inlier_noise_std must be >= 0")
    x = np.random.default_rng([seed, 0]).random((n, input_dim))
    y = teacher_targets(x, input_dim, n_landmarks, seed, box)
    if inlier_noise_std > 0:
        y = y + np.random.default_rng([seed, 2]).normal(
            0.0, inlier_noise_std, y.shape)
    labels = np.zeros((n, n_landmarks), dtype=bool)
    return Dataset(x, y, box=tuple(float(b) for b in box),
                   outlier_labels=labels,
                   label_granularity=Granularity.group_wise(),
                   seed=seed)


def _draw_displacements(rng, count, spec):
    """Distances ~ N(mean, std) with negative draws rejected, plus angles."""
    d = rng.normal(spec.ngo_mean, spec.ngo_std, count)
    while True:
        bad = d < 0
        if not bad.any():
            break
        d[bad] = rng.normal(spec.ngo_mean, spec.ngo_std, int(bad.sum()))
    theta = rng.uniform(0.0, 2.0 * math.pi, count)
    return d, theta


def corrupt(data, spec, seed=None):
    """Displace a fraction of landmark targets and label exactly what moved.

    Landmark-wise schemes ("ngo", "lugo") pick units across the whole
    dataset regardless of which sample they belong to; the sample-wise
    scheme ("gugo") picks samples and corrupts all their landmarks. The
    returned dataset is new; unselected entries are bitwise unchanged.
    """
    if seed is not None:
        spec = replace(spec, seed=seed)
    n = data.n_samples
    n_land = data.n_landmarks
    if spec.fraction > 0 and data.box is None:
        raise ConfigError("corruption needs box metadata on the dataset")
    y = data.y.copy()
    width, height = (data.box if data.box is not None else (1.0, 1.0))
    rng = np.random.default_rng([spec.seed, 3])

    if spec.scheme == "gugo":
        n_pick = int(round(spec.fraction * n))
        picked = rng.choice(n, size=n_pick, replace=False)
        for i in picked:
            y[i, 0::2] = rng.uniform(0.0, width, n_land)
            y[i, 1::2] = rng.uniform(0.0, height, n_land)
        gran = Granularity.sample_wise()
    else:
        total_units = n * n_land
        n_pick = int(round(spec.fraction * total_units))
        picked = rng.choice(total_units, size=n_pick, replace=False)
        rows, lands = picked // n_land, picked % n_land
        if spec.scheme == "ngo":
            d, theta = _draw_displacements(rng, n_pick, spec)
            dx, dy = d * np.cos(theta), d * np.sin(theta)
            y[rows, 2 * lands] = np.clip(
                y[rows, 2 * lands] + dx, 0.0, width)
            y[rows, 2 * lands + 1] = np.clip(
                y[rows, 2 * lands + 1] + dy, 0.0, height)
        else:
            y[rows, 2 * lands] = rng.uniform(0.0, width, n_pick)
            y[rows, 2 * lands + 1] = rng.uniform(0.0, height, n_pick)
        gran = Granularity.group_wise()
    # exact labels: a unit is an outlier iff its value actually moved
    if spec.scheme == "gugo":
        labels = (y != data.y).any(axis=1, keepdims=True)
    else:
        labels = (y != data.y).reshape(n, n_land, 2).any(axis=2)
    return Dataset(data.x, y, box=data.box, outlier_labels=labels,
                   label_granularity=gran, seed=data.seed, corruption=spec)


def split_dataset(data, fractions, seed):
    """Shuffle and split into len(fractions)+1 parts; the last gets the rest."""
    if any(f <= 0 for f in fractions) or sum(fractions) >= 1.0:
        raise ConfigError("split fractions must be positive and sum below 1")
    order = np.random.default_rng([seed, 4]).permutation(data.n_samples)
    parts = []
    start = 0
    for f in fractions:
        count = int(round(f * data.n_samples))
        parts.append(data.subset(order[start:start + count]))
        start += count
    parts.append(data.subset(order[start:]))
    return tuple(parts)


def save_dataset(data, path):
    """One JSON record per sample plus a sidecar header next to the file."""
    path = str(path)
    with open(path, "w", encoding="ascii") as fh:
        for i in range(data.n_samples):
            record = {"x": data.x[i].tolist(), "y": data.y[i].tolist()}
            if data.outlier_labels is not None:
                record["outlier_mask"] = [
                    bool(v) for v in data.outlier_labels[i]]
            fh.write(json.dumps(record))
            fh.write("\n")
    header = {
        "n": data.n_samples,
        "input_dim": data.input_dim,
        "output_dim": data.output_dim,
        "box": list(data.box) if data.box is not None else None,
        "seed": data.seed,
        "label_granularity": (data.label_granularity.to_dict()
                              if data.label_granularity is not None else None),
        "corruption": (data.corruption.to_dict()
                       if data.corruption is not None else None),
    }
    with open(_header_path(path), "w", encoding="ascii") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _header_path(path):
    path = str(path)
    stem = path[:path.rfind(".")] if "." in path.rsplit("/", 1)[-1] else path
    return stem + ".header.json"


def load_dataset(path):
    """Inverse of save_dataset; exact float round trip via JSON repr."""
    path = str(path)
    try:
        with open(_header_path(path), "r", encoding="ascii") as fh:
            header = json.load(fh)
    except FileNotFoundError:
        raise DataFormatError(f"missing sidecar header for {path}")
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"bad header for {path}: {exc}")
    xs, ys, masks = [], [], []
    with open(path, "r", encoding="ascii") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{line_no}: bad record: {exc}")
            if "x" not in record or "y" not in record:
                raise DataFormatError(f"{path}:{line_no}: missing x or y")
            xs.append(record["x"])
            ys.append(record["y"])
            if "outlier_mask" in record:
                masks.append(record["outlier_mask"])
    if len(xs) != header["n"]:
        raise DataFormatError(
            f"{path}: header says {header['n']} samples, found {len(xs)}")
    if masks and len(masks) != len(xs):
        raise DataFormatError(f"{path}: outlier_mask on only some records")
    x = np.array(xs, dtype=np.float64)
    y = np.array(ys, dtype=np.float64)
    if x.shape[1] != header["input_dim"] or y.shape[1] != header["output_dim"]:
        raise DataFormatError(f"{path}: dims disagree with header")
    gran = (Granularity.from_dict(header["label_granularity"])
            if header.get("label_granularity") else None)
    corruption = (CorruptionSpec.from_dict(header["corruption"])
                  if header.get("corruption") else None)
    return Dataset(
        x, y,
        box=tuple(header["box"]) if header.get("box") else None,
        outlier_labels=np.array(masks, dtype=bool) if masks else None,
        label_granularity=gran,
        seed=header.get("seed"),
        corruption=corruption)
