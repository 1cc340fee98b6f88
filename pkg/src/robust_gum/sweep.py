"""Breakdown sweeps: a grid of corruption fractions, losses, and seeds.

Each cell is an isolated fully-seeded run; one failing cell is recorded in
its row and the rest of the grid still completes. Per-sample test errors
from matching (fraction, seed) cells pair a robust loss against the plain
squared-error baseline, pooled across seeds, for a signed-rank comparison.
"""

import csv
import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from robust_gum.config import RunConfig
from robust_gum.errors import ConfigError, RobustGumError
from robust_gum.evaluation import wilcoxon_signed_rank
from robust_gum.losses import LOSS_KINDS
from robust_gum.runner import per_sample_errors, run_training

logger = logging.getLogger("robust_gum.sweep")

CSV_COLUMNS = ("fraction", "scheme", "loss", "seed", "mae", "rmse",
               "failure_rate", "precision", "recall", "p_value_vs_l2",
               "stars", "error")


def _cell_config(base_dict, scheme, fraction, loss, seed):
    d = {key: value for key, value in base_dict.items()}
    d["seed"] = seed
    if fraction > 0:
        d["corruption"] = dict(base_dict.get("corruption") or {})
        d["corruption"].update(
            {"scheme": scheme, "fraction": fraction, "seed": seed})
    else:
        d["corruption"] = None
    train_block = {k: v for k, v in (base_dict.get("train") or {}).items()}
    loss_block = dict(train_block.get("loss") or {})
    loss_block["kind"] = loss
    train_block["loss"] = loss_block
    d["train"] = train_block
    return RunConfig.from_dict(d)


def _run_cell(base_dict, scheme, fraction, loss, seed):
    """One grid cell; returns (row, per-sample test errors or None)."""
    row = {"fraction": fraction, "scheme": scheme, "loss": loss,
           "seed": seed, "mae": None, "rmse": None, "failure_rate": None,
           "precision": None, "recall": None, "p_value_vs_l2": None,
           "stars": None, "error": None}
    try:
        config = _cell_config(base_dict, scheme, fraction, loss, seed)
        net, report, (_, _, test) = run_training(config)
        if test is None:
            raise ConfigError("sweep needs a test split")
        test_metrics = report.metrics["test"]
        row["mae"] = test_metrics["mae"]
        row["rmse"] = test_metrics["rmse"]
        row["failure_rate"] = test_metrics["failure_rate"]
        summary = report.outlier_summary
        if summary is not None:
            row["precision"] = summary.get("precision")
            row["recall"] = summary.get("recall")
        return row, per_sample_errors(net, test).tolist()
    except RobustGumError as exc:
        logger.warning("cell (%s, %.2f, %s, seed %d) failed: %s",
                       scheme, fraction, loss, seed, exc)
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row, None


def breakdown_sweep(base_config, fractions, losses, seeds, scheme=None,
                    threads=1):
    """Run the grid, attach pooled signed-rank p-values, return the rows.

    Row count is exactly len(fractions) * len(losses) * len(seeds); rows
    for failed cells carry an error string instead of metrics.
    """
    for loss in losses:
        if loss not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {loss!r} in sweep")
    if not fractions or not losses or not seeds:
        raise ConfigError("sweep needs nonempty fractions, losses, and seeds")
    if scheme is None:
        scheme = (base_config.corruption.scheme
                  if base_config.corruption is not None else "lugo")
    base_dict = base_config.to_dict()
    cells = [(fraction, loss, seed) for fraction in fractions
             for loss in losses for seed in seeds]
    results = {}
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = {cell: pool.submit(_run_cell, base_dict, scheme, *cell)
                       for cell in cells}
            for cell, future in futures.items():
                results[cell] = future.result()
    else:
        for cell in cells:
            results[cell] = _run_cell(base_dict, scheme, *cell)
    _attach_rank_tests(results, fractions, losses, seeds)
    return [results[cell][0] for cell in cells]


def _attach_rank_tests(results, fractions, losses, seeds):
    """Pool per-sample errors across seeds and compare each loss to l2."""
    if "l2" not in losses:
        return
    for fraction in fractions:
        baselines = {seed: results[(fraction, "l2", seed)][1]
                     for seed in seeds}
        for loss in losses:
            if loss == "l2":
                continue
            pooled_loss, pooled_base = [], []
            for seed in seeds:
                errors = results[(fraction, loss, seed)][1]
                if errors is None or baselines[seed] is None:
                    continue
                pooled_loss.extend(errors)
                pooled_base.extend(baselines[seed])
            if not pooled_loss:
                continue
            outcome = wilcoxon_signed_rank(np.array(pooled_loss),
                                           np.array(pooled_base))
            for seed in seeds:
                row = results[(fraction, loss, seed)][0]
                if row["error"] is None:
                    row["p_value_vs_l2"] = outcome.p_value
                    row["stars"] = outcome.stars


def save_sweep_csv(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: ("" if row.get(key) is None
                                   else row[key]) for key in CSV_COLUMNS})


def load_sweep_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return [dict(row) for row in csv.DictReader(fh)]
