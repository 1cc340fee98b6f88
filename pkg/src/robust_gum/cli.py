"""Command-line interface.

Subcommands: generate, train, eval, sweep, em-fit. Every command is
deterministic given its config and seed. Exit codes: 0 success, 2 config
error, 3 numeric failure, 4 I/O failure. ROBUST_GUM_LOG sets verbosity
(debug | info | warning | error); progress lines go to stderr, result
paths to stdout.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np
import yaml

from robust_gum import __version__
from robust_gum.config import RunConfig
from robust_gum.data import load_dataset, save_dataset
from robust_gum.errors import (
    AllOutlierError,
    ConfigError,
    DataFormatError,
    NumericError,
    ShapeError,
)
from robust_gum.evaluation import metrics
from robust_gum.mixture import Granularity, em_fit, write_em_trace
from robust_gum.net import load_model, predict, save_model
from robust_gum.report import save_report
from robust_gum.runner import prepare_datasets, run_training
from robust_gum.sweep import breakdown_sweep, save_sweep_csv

logger = logging.getLogger("robust_gum.cli")

GRANULARITY_MODES = {
    "sample": Granularity.sample_wise,
    "group": Granularity.group_wise,
    "coordinate": Granularity.coordinate_wise,
}


def _setup_logging():
    level_name = os.environ.get("ROBUST_GUM_LOG", "info").lower()
    levels = {"debug": logging.DEBUG, "info": logging.INFO,
              "warning": logging.WARNING, "error": logging.ERROR}
    if level_name not in levels:
        raise ConfigError(
            f"ROBUST_GUM_LOG must be one of {sorted(levels)}, "
            f"got {level_name!r}")
    logging.basicConfig(stream=sys.stderr, level=levels[level_name],
                        format="%(levelname)s %(name)s: %(message)s")


def _parse_config_text(text, path):
    """JSON first (exact float handling for persisted manifests), then YAML."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError:
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
    if raw is None:
        raise ConfigError(f"config file {path} is empty")
    return raw


def _load_raw_config(args):
    if args.config is None:
        raise ConfigError("this command requires --config")
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataFormatError(f"cannot read config: {exc}") from exc
    raw = _parse_config_text(text, args.config)
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    if args.seed is not None:
        raw["seed"] = args.seed
    return raw, os.path.dirname(os.path.abspath(args.config))


def _resolve_config(args):
    raw, base_dir = _load_raw_config(args)
    return RunConfig.from_dict(raw, base_dir=base_dir)


def _out_dir(args, config=None):
    out = args.out
    if out is None:
        out = config.output_dir if config is not None else "."
    os.makedirs(out, exist_ok=True)
    return out


def cmd_generate(args):
    config = _resolve_config(args)
    train, val, test = prepare_datasets(config)
    out = _out_dir(args, config)
    paths = []
    for name, data in (("train", train), ("val", val), ("test", test)):
        if data is None:
            continue
        path = os.path.join(out, f"{name}.jsonl")
        save_dataset(data, path)
        paths.append(path)
    print("\n".join(paths))
    return 0


def cmd_train(args):
    config = _resolve_config(args)
    net, report, _ = run_training(config)
    out = _out_dir(args, config)
    model_path = os.path.join(out, "model.bin")
    report_path = os.path.join(out, "report.json")
    save_model(net, model_path)
    save_report(report, report_path)
    test_metrics = report.metrics.get("test")
    if test_metrics is not None:
        logger.info("test mae=%.4f rmse=%.4f failure_rate=%.4f",
                    test_metrics["mae"], test_metrics["rmse"],
                    test_metrics["failure_rate"])
    print(model_path)
    print(report_path)
    return 0


def cmd_eval(args):
    net = load_model(args.model)
    data = load_dataset(args.data)
    if data.input_dim != net.input_dim:
        raise ShapeError(
            f"model expects input dim {net.input_dim}, "
            f"dataset has {data.input_dim}")
    failure_threshold = 0.05
    scale = None
    if args.config is not None:
        config = _resolve_config(args)
        failure_threshold = config.eval.failure_threshold
        scale = config.eval.scale
    if scale is None:
        scale = data.box[0] if data.box is not None else 1.0
    report = metrics(predict(net, data.x), data.y,
                     failure_threshold=failure_threshold, scale=scale)
    out = _out_dir(args)
    path = os.path.join(out, "metrics.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(path)
    return 0


def cmd_sweep(args):
    raw, base_dir = _load_raw_config(args)
    sweep_block = raw.pop("sweep", None)
    if sweep_block is None:
        raise ConfigError("sweep command needs a 'sweep' block in the config")
    if not isinstance(sweep_block, dict):
        raise ConfigError("'sweep' block must be a mapping")
    unknown = set(sweep_block) - {"fractions", "losses", "seeds", "scheme"}
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in sweep block")
    base = RunConfig.from_dict(raw, base_dir=base_dir)
    rows = breakdown_sweep(
        base,
        fractions=sweep_block.get("fractions", [0.0]),
        losses=sweep_block.get("losses", ["l2", "deepgum"]),
        seeds=sweep_block.get("seeds", [base.seed]),
        scheme=sweep_block.get("scheme"),
        threads=args.threads)
    out = _out_dir(args, base)
    path = os.path.join(out, "sweep.csv")
    save_sweep_csv(rows, path)
    print(path)
    return 0


def cmd_em_fit(args):
    try:
        residuals = np.loadtxt(args.residuals, ndmin=2)
    except OSError as exc:
        raise DataFormatError(f"cannot read residuals: {exc}") from exc
    except ValueError as exc:
        raise DataFormatError(f"malformed residual file: {exc}") from exc
    gran = GRANULARITY_MODES[args.granularity]()
    result = em_fit(residuals, gran, tol=args.tol, max_iters=args.max_iters)
    out = _out_dir(args)
    params_path = os.path.join(out, "gum_params.json")
    trace_path = os.path.join(out, "em_trace.jsonl")
    with open(params_path, "w", encoding="utf-8") as fh:
        json.dump(result.params.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_em_trace(result.trace, trace_path)
    print(params_path)
    print(trace_path)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="robust-gum",
        description="Robust regression with a Gaussian-uniform residual "
                    "mixture, M-estimator baselines, and evaluation tools.")
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="run configuration file (YAML)")
    common.add_argument("--seed", type=int, metavar="N",
                        help="override the config seed")
    common.add_argument("--threads", type=int, metavar="N",
                        default=os.cpu_count() or 1,
                        help="worker processes for sweep cells "
                             "(other commands are single-threaded)")
    common.add_argument("--out", metavar="DIR",
                        help="output directory (default: config output_dir)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common],
                       help="synthesize datasets and write them to disk")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common],
                       help="train a model per the config; writes model "
                            "and run report")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common],
                       help="evaluate a saved model on a dataset file")
    p.add_argument("--model", required=True, metavar="PATH")
    p.add_argument("--data", required=True, metavar="PATH")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common],
                       help="run a corruption-fraction breakdown grid")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("em-fit", parents=[common],
                       help="fit the residual mixture to a whitespace-"
                            "delimited residual matrix file")
    p.add_argument("--residuals", required=True, metavar="PATH")
    p.add_argument("--granularity", choices=sorted(GRANULARITY_MODES),
                   default="sample")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iters", type=int, default=100)
    p.set_defaults(func=cmd_em_fit)
    return parser


def main(argv=None):
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (ConfigError, ShapeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, AllOutlierError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DataFormatError, OSError) as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
