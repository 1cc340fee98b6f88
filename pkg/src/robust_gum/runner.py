"""Config-driven execution: datasets in, trained model and run manifest out.

The corruption block applies to the train and validation splits only; the
test split always stays clean so reported test metrics measure regression
quality, not noise memorization. Dataset-file tasks are taken as-is (the
generate command already baked corruption into the files it wrote).
"""

import time

import numpy as np

from robust_gum import __version__
from robust_gum.config import DatasetTask, GenerateTask
from robust_gum.data import corrupt, load_dataset, make_teacher_dataset, split_dataset
from robust_gum.evaluation import metrics, precision_recall
from robust_gum.net import init_regressor, predict
from robust_gum.report import RunReport
from robust_gum.training import (
    classify_outliers,
    train_deepgum,
    train_initial,
    train_mestimator,
)


def prepare_datasets(config):
    """Returns (train, val, test); test may be None for two-way file tasks."""
    task = config.task
    if isinstance(task, GenerateTask):
        data = make_teacher_dataset(
            n=task.n, input_dim=task.input_dim, n_landmarks=task.n_landmarks,
            inlier_noise_std=task.inlier_noise_std, seed=config.seed,
            box=task.box)
        train, val, test = split_dataset(
            data, (task.train_fraction, task.val_fraction), seed=config.seed)
        if config.corruption is not None and config.corruption.fraction > 0:
            spec = config.corruption
            train = corrupt(train, spec)
            val = corrupt(val, spec, seed=spec.seed + 1)
        return train, val, test
    if isinstance(task, DatasetTask):
        train = load_dataset(task.train_path)
        val = load_dataset(task.val_path)
        test = (load_dataset(task.test_path)
                if task.test_path is not None else None)
        return train, val, test
    raise TypeError(f"unknown task type {type(task).__name__}")


def _split_metrics(net, data, eval_cfg):
    if data is None:
        return None
    scale = eval_cfg.scale
    if scale is None:
        scale = data.box[0] if data.box is not None else 1.0
    report = metrics(predict(net, data.x), data.y,
                     failure_threshold=eval_cfg.failure_threshold,
                     scale=scale)
    return report.to_dict()


def _outlier_summary(state, train, threshold):
    if state.resp_train is None:
        return None
    detected = classify_outliers(state.resp_train, threshold)
    summary = {"threshold": threshold,
               "detected_fraction": float(detected.mean()),
               "n_units": int(detected.size)}
    labels = train.outlier_labels
    if labels is not None and labels.shape == detected.shape:
        prec, rec = precision_recall(detected, labels)
        summary["precision"] = prec
        summary["recall"] = rec
    return summary


def run_training(config, datasets=None):
    """Train per the config; returns (net, RunReport, (train, val, test))."""
    t_start = time.perf_counter()
    train, val, test = (prepare_datasets(config) if datasets is None
                        else datasets)
    cfg = config.train
    net = init_regressor(
        [train.input_dim, *config.model.hidden_dims, train.output_dim],
        hidden_activation=config.model.hidden_activation, seed=config.seed)
    t_train = time.perf_counter()
    kind = cfg.loss.kind
    if kind in ("l2", "deepgum"):
        state = train_initial(net, train, val, cfg)
        if kind == "deepgum":
            final_net, params, _ = train_deepgum(state, train, val, cfg)
        else:
            final_net, params = state.net, None
    else:
        state = train_mestimator(net, train, val, cfg)
        final_net, params = state.net, None
    train_seconds = time.perf_counter() - t_train
    report = RunReport(
        config=config.to_dict(),
        history=[rec.to_dict() for rec in state.history],
        em_traces=state.em_traces,
        final_params=None if params is None else params.to_dict(),
        metrics={
            "train": _split_metrics(final_net, train, config.eval),
            "val": _split_metrics(final_net, val, config.eval),
            "test": _split_metrics(final_net, test, config.eval),
        },
        outlier_summary=_outlier_summary(state, train,
                                         cfg.outlier_threshold),
        stop_reason=state.stop_reason,
        outer_iterations=state.outer_iteration,
        timings={"total_seconds": time.perf_counter() - t_start,
                 "train_seconds": train_seconds},
        version=__version__,
    )
    return final_net, report, (train, val, test)


def per_sample_errors(net, data):
    """Mean absolute error per sample, the paired unit for rank tests."""
    return np.abs(predict(net, data.x) - data.y).mean(axis=1)
