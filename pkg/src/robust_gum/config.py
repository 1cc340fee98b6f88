"""Run configuration: one structured text file describing a whole run.

The schema is strict: unknown keys anywhere in the tree are rejected so a
misspelled option fails loudly instead of silently using a default. The
resolved form round-trips losslessly through to_dict/from_dict, which is
what makes a persisted run manifest re-runnable.
"""

import json
import os
from dataclasses import dataclass, field

import yaml

from robust_gum._kernels import ACTIVATION_CODES
from robust_gum.data import CORRUPTION_SCHEMES, CorruptionSpec, DEFAULT_BOX
from robust_gum.errors import ConfigError, DataFormatError
from robust_gum.losses import DEFAULT_TUNING_C, LOSS_KINDS, LossSpec, NORMALIZATIONS
from robust_gum.mixture import Granularity
from robust_gum.net import SgdConfig
from robust_gum.training import TrainConfig

DEFAULT_FAILURE_THRESHOLD = 0.05


def _require_mapping(value, where):
    if not isinstance(value, dict):
        raise ConfigError(f"{where} must be a mapping, got {type(value).__name__}")
    return value


def _check_keys(d, allowed, where):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(
            f"unknown key(s) {sorted(unknown)} in {where}; "
            f"allowed: {sorted(allowed)}")


def _get_number(d, key, default, where, minimum=None):
    value = d.get(key, default)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"{where}.{key} must be a number")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{where}.{key} must be >= {minimum}")
    return value


def _get_int(d, key, default, where, minimum=None):
    value = d.get(key, default)
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(f"{where}.{key} must be an integer")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{where}.{key} must be >= {minimum}")
    return value


@dataclass(frozen=True)
class ModelConfig:
    hidden_dims: tuple = (16,)
    hidden_activation: str = "tanh"

    def to_dict(self):
        return {"hidden_dims": list(self.hidden_dims),
                "hidden_activation": self.hidden_activation}


@dataclass(frozen=True)
class EvalConfig:
    failure_threshold: float = DEFAULT_FAILURE_THRESHOLD
    scale: float = None

    def to_dict(self):
        return {"failure_threshold": self.failure_threshold,
                "scale": self.scale}


@dataclass(frozen=True)
class GenerateTask:
    n: int = 5000
    input_dim: int = 16
    n_landmarks: int = 4
    inlier_noise_std: float = 2.0
    box: tuple = DEFAULT_BOX
    train_fraction: float = 0.7
    val_fraction: float = 0.15

    def to_dict(self):
        return {"generate": {
            "n": self.n, "input_dim": self.input_dim,
            "n_landmarks": self.n_landmarks,
            "inlier_noise_std": self.inlier_noise_std,
            "box": list(self.box),
            "train_fraction": self.train_fraction,
            "val_fraction": self.val_fraction}}


@dataclass(frozen=True)
class DatasetTask:
    train_path: str
    val_path: str
    test_path: str = None

    def to_dict(self):
        d = {"train": self.train_path, "val": self.val_path}
        if self.test_path is not None:
            d["test"] = self.test_path
        return {"dataset": d}


@dataclass
class RunConfig:
    seed: int
    task: object = field(default_factory=GenerateTask)
    corruption: CorruptionSpec = None
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = None
    eval: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str = "runs"

    def __post_init__(self):
        if self.train is None:
            self.train = TrainConfig(seed=self.seed)

    def to_dict(self):
        cfg = self.train
        d = {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "task": self.task.to_dict(),
            "corruption": (None if self.corruption is None
                           else self.corruption.to_dict()),
            "model": self.model.to_dict(),
            "train": {
                "loss": {"kind": cfg.loss.kind,
                         "tuning_c": cfg.loss.tuning_c,
                         "normalization": cfg.loss.normalization},
                "granularity": cfg.granularity.to_dict(),
                "sgd": {"learning_rate": cfg.sgd.learning_rate,
                        "batch_size": cfg.sgd.batch_size,
                        "max_epochs": cfg.sgd.max_epochs},
                "patience": cfg.patience,
                "warmup_epochs": cfg.warmup_epochs,
                "outer_epsilon": cfg.outer_epsilon,
                "em_tol": cfg.em_tol,
                "em_max_iters": cfg.em_max_iters,
                "max_outer_iters": cfg.max_outer_iters,
                "outlier_threshold": cfg.outlier_threshold,
            },
            "eval": self.eval.to_dict(),
        }
        return d

    @classmethod
    def from_dict(cls, d, base_dir="."):
        d = _require_mapping(d, "config")
        _check_keys(d, ("seed", "output_dir", "task", "corruption", "model",
                        "train", "eval"), "config")
        if "seed" not in d:
            raise ConfigError("config requires an explicit seed")
        seed = d["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError("seed must be an integer")
        task = _parse_task(d.get("task"), base_dir)
        corruption = _parse_corruption(d.get("corruption"), seed)
        model = _parse_model(d.get("model"))
        train = _parse_train(d.get("train"), seed)
        eval_cfg = _parse_eval(d.get("eval"))
        output_dir = d.get("output_dir", "runs")
        if not isinstance(output_dir, str):
            raise ConfigError("output_dir must be a string")
        return cls(seed=seed, task=task, corruption=corruption, model=model,
                   train=train, eval=eval_cfg, output_dir=output_dir)


def _parse_task(block, base_dir):
    if block is None:
        return GenerateTask()
    block = _require_mapping(block, "task")
    _check_keys(block, ("generate", "dataset"), "task")
    if ("generate" in block) == ("dataset" in block):
        raise ConfigError("task needs exactly one of 'generate' or 'dataset'")
    if "generate" in block:
        g = _require_mapping(block["generate"], "task.generate")
        _check_keys(g, ("n", "input_dim", "n_landmarks", "inlier_noise_std",
                        "box", "train_fraction", "val_fraction"),
                    "task.generate")
        box = g.get("box", list(DEFAULT_BOX))
        if (not isinstance(box, (list, tuple)) or len(box) != 2
                or not all(isinstance(v, (int, float)) and v > 0 for v in box)):
            raise ConfigError("task.generate.box must be two positive numbers")
        return GenerateTask(
            n=_get_int(g, "n", 5000, "task.generate", minimum=4),
            input_dim=_get_int(g, "input_dim", 16, "task.generate", minimum=1),
            n_landmarks=_get_int(g, "n_landmarks", 4, "task.generate",
                                 minimum=1),
            inlier_noise_std=_get_number(g, "inlier_noise_std", 2.0,
                                         "task.generate", minimum=0.0),
            box=tuple(float(v) for v in box),
            train_fraction=_get_number(g, "train_fraction", 0.7,
                                       "task.generate", minimum=0.0),
            val_fraction=_get_number(g, "val_fraction", 0.15,
                                     "task.generate", minimum=0.0))
    ds = _require_mapping(block["dataset"], "task.dataset")
    _check_keys(ds, ("train", "val", "test"), "task.dataset")
    for key in ("train", "val"):
        if key not in ds:
            raise ConfigError(f"task.dataset requires '{key}'")
    paths = {}
    for key in ("train", "val", "test"):
        if key not in ds:
            continue
        if not isinstance(ds[key], str):
            raise ConfigError(f"task.dataset.{key} must be a path string")
        path = os.path.join(base_dir, ds[key]) if not os.path.isabs(
            ds[key]) else ds[key]
        if not os.path.exists(path):
            raise ConfigError(f"task.dataset.{key}: no such file: {path}")
        paths[key] = path
    return DatasetTask(train_path=paths["train"], val_path=paths["val"],
                       test_path=paths.get("test"))


def _parse_corruption(block, seed):
    if block is None:
        return None
    block = _require_mapping(block, "corruption")
    _check_keys(block, ("scheme", "fraction", "ngo_mean", "ngo_std", "seed"),
                "corruption")
    scheme = block.get("scheme")
    if scheme not in CORRUPTION_SCHEMES:
        raise ConfigError(
            f"corruption.scheme must be one of {CORRUPTION_SCHEMES}")
    return CorruptionSpec(
        scheme=scheme,
        fraction=_get_number(block, "fraction", 0.0, "corruption",
                             minimum=0.0),
        ngo_mean=_get_number(block, "ngo_mean", 25.0, "corruption"),
        ngo_std=_get_number(block, "ngo_std", 2.0, "corruption", minimum=0.0),
        seed=_get_int(block, "seed", seed, "corruption"))


def _parse_model(block):
    if block is None:
        return ModelConfig()
    block = _require_mapping(block, "model")
    _check_keys(block, ("hidden_dims", "hidden_activation"), "model")
    dims = block.get("hidden_dims", [16])
    if (not isinstance(dims, (list, tuple))
            or not all(isinstance(v, int) and not isinstance(v, bool)
                       and v >= 1 for v in dims)):
        raise ConfigError("model.hidden_dims must be a list of positive ints")
    act = block.get("hidden_activation", "tanh")
    if act not in ACTIVATION_CODES:
        raise ConfigError(
            f"model.hidden_activation must be one of {sorted(ACTIVATION_CODES)}")
    return ModelConfig(hidden_dims=tuple(dims), hidden_activation=act)


def _parse_train(block, seed):
    if block is None:
        return TrainConfig(sgd=SgdConfig(seed=seed), seed=seed)
    block = _require_mapping(block, "train")
    _check_keys(block, ("loss", "granularity", "sgd", "patience",
                        "warmup_epochs", "outer_epsilon", "em_tol",
                        "em_max_iters", "max_outer_iters",
                        "outlier_threshold"), "train")
    loss_block = _require_mapping(block.get("loss", {}), "train.loss")
    _check_keys(loss_block, ("kind", "tuning_c", "normalization"),
                "train.loss")
    kind = loss_block.get("kind", "deepgum")
    if kind not in LOSS_KINDS:
        raise ConfigError(f"train.loss.kind must be one of {LOSS_KINDS}")
    normalization = loss_block.get("normalization", "mad")
    if normalization not in NORMALIZATIONS:
        raise ConfigError(
            f"train.loss.normalization must be one of {NORMALIZATIONS}")
    loss = LossSpec(kind=kind,
                    tuning_c=_get_number(loss_block, "tuning_c",
                                         DEFAULT_TUNING_C, "train.loss"),
                    normalization=normalization)
    gran_block = block.get("granularity")
    if gran_block is None:
        gran = Granularity.group_wise()
    else:
        gran = Granularity.from_dict(_require_mapping(gran_block,
                                                      "train.granularity"))
    sgd_block = _require_mapping(block.get("sgd", {}), "train.sgd")
    _check_keys(sgd_block, ("learning_rate", "batch_size", "max_epochs"),
                "train.sgd")
    sgd = SgdConfig(
        learning_rate=_get_number(sgd_block, "learning_rate", 1e-3,
                                  "train.sgd"),
        batch_size=_get_int(sgd_block, "batch_size", 128, "train.sgd"),
        max_epochs=_get_int(sgd_block, "max_epochs", 200, "train.sgd"),
        seed=seed)
    return TrainConfig(
        loss=loss, granularity=gran, sgd=sgd,
        patience=_get_int(block, "patience", 5, "train", minimum=1),
        warmup_epochs=_get_int(block, "warmup_epochs", 3, "train", minimum=0),
        outer_epsilon=_get_number(block, "outer_epsilon", 1e-5, "train"),
        em_tol=_get_number(block, "em_tol", 1e-4, "train"),
        em_max_iters=_get_int(block, "em_max_iters", 100, "train", minimum=1),
        max_outer_iters=_get_int(block, "max_outer_iters", 50, "train",
                                 minimum=1),
        outlier_threshold=_get_number(block, "outlier_threshold", 0.5,
                                      "train"),
        seed=seed)


def _parse_eval(block):
    if block is None:
        return EvalConfig()
    block = _require_mapping(block, "eval")
    _check_keys(block, ("failure_threshold", "scale"), "eval")
    scale = block.get("scale")
    if scale is not None:
        if not isinstance(scale, (int, float)) or scale <= 0:
            raise ConfigError("eval.scale must be a positive number")
        scale = float(scale)
    return EvalConfig(
        failure_threshold=_get_number(block, "failure_threshold",
                                      DEFAULT_FAILURE_THRESHOLD, "eval",
                                      minimum=0.0),
        scale=scale)


def load_config(path):
    """Parse a YAML or JSON run configuration.

    JSON is tried first so persisted manifests round-trip exactly; the
    YAML 1.1 resolver would otherwise read exponent floats like 1e-05
    back as strings.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataFormatError(f"cannot read config: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError:
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config file {path}: {exc}") from exc
    if raw is None:
        raise ConfigError(f"config file {path} is empty")
    return RunConfig.from_dict(raw, base_dir=os.path.dirname(
        os.path.abspath(path)))


def save_config(config, path):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)
