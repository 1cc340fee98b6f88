"""Breakdown sweep grid: cell isolation, pooling, persistence."""

import numpy as np
import pytest

from robust_gum import sweep as sweep_mod
from robust_gum.config import RunConfig
from robust_gum.errors import ConfigError, NumericError
from robust_gum.evaluation import wilcoxon_signed_rank
from robust_gum.runner import per_sample_errors, run_training
from robust_gum.sweep import breakdown_sweep, load_sweep_csv, save_sweep_csv


def base_config(seed=3, n=600):
    return RunConfig.from_dict({
        "seed": seed,
        "task": {"generate": {"n": n, "input_dim": 6, "n_landmarks": 2,
                              "inlier_noise_std": 2.0,
                              "train_fraction": 0.7, "val_fraction": 0.15}},
        "model": {"hidden_dims": [8], "hidden_activation": "tanh"},
        "train": {"sgd": {"learning_rate": 0.01, "batch_size": 64,
                          "max_epochs": 15},
                  "max_outer_iters": 3},
    })


def test_row_count_and_order():
    rows = breakdown_sweep(base_config(), fractions=[0.0, 0.3],
                           losses=["l2", "deepgum"], seeds=[3])
    assert len(rows) == 2 * 2 * 1
    assert [(r["fraction"], r["loss"]) for r in rows] == [
        (0.0, "l2"), (0.0, "deepgum"), (0.3, "l2"), (0.3, "deepgum")]
    for row in rows:
        assert row["error"] is None
        assert row["mae"] > 0
        assert row["scheme"] == "lugo"


def test_failing_cell_is_isolated():
    original = sweep_mod.run_training

    def exploding(config, datasets=None):
        if config.train.loss.kind == "huber":
            raise NumericError("injected failure")
        return original(config, datasets)

    sweep_mod.run_training = exploding
    try:
        rows = breakdown_sweep(base_config(), fractions=[0.2],
                               losses=["l2", "huber", "deepgum"], seeds=[3])
    finally:
        sweep_mod.run_training = original
    assert len(rows) == 3
    by_loss = {row["loss"]: row for row in rows}
    assert "injected failure" in by_loss["huber"]["error"]
    assert by_loss["huber"]["mae"] is None
    assert by_loss["l2"]["error"] is None
    assert by_loss["deepgum"]["error"] is None
    assert by_loss["deepgum"]["p_value_vs_l2"] is not None


def test_pooled_rank_test_matches_manual_computation():
    cfg = base_config()
    rows = breakdown_sweep(cfg, fractions=[0.3], losses=["l2", "deepgum"],
                           seeds=[3, 4])
    pooled = {"l2": [], "deepgum": []}
    for seed in (3, 4):
        for loss in ("l2", "deepgum"):
            d = cfg.to_dict()
            d["seed"] = seed
            d["corruption"] = {"scheme": "lugo", "fraction": 0.3,
                               "seed": seed}
            d["train"]["loss"]["kind"] = loss
            net, _, (_, _, test) = run_training(RunConfig.from_dict(d))
            pooled[loss].extend(per_sample_errors(net, test).tolist())
    expected = wilcoxon_signed_rank(np.array(pooled["deepgum"]),
                                    np.array(pooled["l2"]))
    dg_rows = [r for r in rows if r["loss"] == "deepgum"]
    assert len(dg_rows) == 2
    for row in dg_rows:
        assert row["p_value_vs_l2"] == pytest.approx(expected.p_value,
                                                     abs=1e-12)
        assert row["stars"] == expected.stars
    for row in rows:
        if row["loss"] == "l2":
            assert row["p_value_vs_l2"] is None


def test_fraction_zero_cell_runs_uncorrupted():
    rows = breakdown_sweep(base_config(), fractions=[0.0], losses=["l2"],
                           seeds=[3])
    assert rows[0]["error"] is None
    # without a corruption block there are no labels, hence no detection
    assert rows[0]["precision"] is None


def test_input_validation():
    with pytest.raises(ConfigError, match="unknown loss"):
        breakdown_sweep(base_config(), fractions=[0.1], losses=["l3"],
                        seeds=[1])
    with pytest.raises(ConfigError, match="nonempty"):
        breakdown_sweep(base_config(), fractions=[], losses=["l2"], seeds=[1])


def test_csv_round_trip(tmp_path):
    rows = breakdown_sweep(base_config(), fractions=[0.2],
                           losses=["l2", "deepgum"], seeds=[3])
    path = tmp_path / "sweep.csv"
    save_sweep_csv(rows, str(path))
    loaded = load_sweep_csv(str(path))
    assert len(loaded) == len(rows)
    assert float(loaded[0]["mae"]) == pytest.approx(rows[0]["mae"])
    assert loaded[0]["loss"] == "l2"
    # empty cells round-trip as empty strings
    assert loaded[0]["p_value_vs_l2"] == ""


def test_parallel_equals_serial():
    cfg = base_config(n=400)
    serial = breakdown_sweep(cfg, fractions=[0.0, 0.2],
                             losses=["l2", "deepgum"], seeds=[3])
    parallel = breakdown_sweep(cfg, fractions=[0.0, 0.2],
                               losses=["l2", "deepgum"], seeds=[3],
                               threads=4)
    assert serial == parallel
