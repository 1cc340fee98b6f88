"""Tests for the MLP regressor: forward values, gradients, SGD, storage.

The gradient tests compare backprop against central finite differences on
smooth activations; a hand-computed linear case pins the exact values.
"""

import json
import math

import numpy as np
import pytest

from robust_gum.errors import DataFormatError, NumericError, ShapeError
from robust_gum.net import (
    GradientTape,
    Regressor,
    SgdConfig,
    backprop,
    backward_weighted,
    forward,
    init_regressor,
    load_model,
    predict,
    save_model,
    sgd_step,
)


def fd_gradient(net, x, y, resp, normalizer, h=1e-5):
    """Central finite differences of the weighted squared-error sum."""
    def loss(candidate):
        pred = predict(candidate, x)
        scaled = (y - pred) / normalizer
        per = (scaled * scaled)
        r = np.asarray(resp, dtype=float)
        if r.ndim == 1:
            r = r[:, None]
        return float((r * per).sum())

    dw = [np.zeros_like(w) for w in net.weights]
    db = [np.zeros_like(b) for b in net.biases]
    for li in range(net.n_layers):
        w = net.weights[li]
        for idx in np.ndindex(w.shape):
            probe = net.copy()
            probe.weights[li][idx] += h
            up = loss(probe)
            probe.weights[li][idx] -= 2 * h
            down = loss(probe)
            dw[li][idx] = (up - down) / (2 * h)
        b = net.biases[li]
        for idx in np.ndindex(b.shape):
            probe = net.copy()
            probe.biases[li][idx] += h
            up = loss(probe)
            probe.biases[li][idx] -= 2 * h
            down = loss(probe)
            db[li][idx] = (up - down) / (2 * h)
    return dw, db


def max_rel_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.abs(a), np.maximum(np.abs(n), 1e-8))
        worst = max(worst, float((np.abs(a - n) / denom).max(initial=0.0)))
    return worst


class TestInit:
    def test_layer_shapes_and_activations(self):
        net = init_regressor([3, 32, 32, 4], seed=0)
        assert [w.shape for w in net.weights] == [(32, 3), (32, 32), (4, 32)]
        assert net.activations == ["rectifier", "rectifier", "identity"]
        assert all(np.all(b == 0) for b in net.biases)

    def test_weights_respect_uniform_bound(self):
        net = init_regressor([10, 20, 5], seed=1)
        for w in net.weights:
            fan_out, fan_in = w.shape
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            assert np.abs(w).max() <= limit

    def test_same_seed_same_weights(self):
        a = init_regressor([4, 8, 2], seed=7)
        b = init_regressor([4, 8, 2], seed=7)
        assert a.params_equal(b)
        c = init_regressor([4, 8, 2], seed=8)
        assert not a.params_equal(c)

    def test_rejects_single_dim(self):
        with pytest.raises(ShapeError):
            init_regressor([4])

    def test_final_layer_must_be_identity(self):
        net = init_regressor([2, 4, 1], seed=0)
        with pytest.raises(ShapeError):
            Regressor(net.weights, net.biases,
                      ["rectifier", "rectifier"])


class TestForward:
    def test_single_linear_layer_hand_values(self):
        net = Regressor([np.array([[2.0, 0.0], [0.0, 3.0]])],
                        [np.array([1.0, -1.0])], ["identity"])
        np.testing.assert_allclose(
            forward(net, np.array([1.0, 1.0])), [3.0, 2.0])

    def test_tanh_hidden_hand_values(self):
        # 1 -> 2 -> 1: z1 = (1, -1), a1 = tanh(z1), out = a1[0] - a1[1] + 0.5
        net = Regressor(
            [np.array([[1.0], [-1.0]]), np.array([[1.0, -1.0]])],
            [np.zeros(2), np.array([0.5])],
            ["tanh", "identity"])
        expected = math.tanh(1.0) - math.tanh(-1.0) + 0.5
        assert forward(net, np.array([1.0]))[0] == pytest.approx(expected)

    def test_predict_matches_row_wise_forward(self):
        net = init_regressor([3, 8, 2], hidden_activation="tanh", seed=3)
        rng = np.random.default_rng(0)
        x = rng.normal(0, 1, (10, 3))
        batch = predict(net, x)
        rows = np.stack([forward(net, row) for row in x])
        np.testing.assert_allclose(batch, rows, rtol=1e-12)

    def test_non_finite_input_rejected(self):
        net = init_regressor([2, 2], seed=0)
        with pytest.raises(NumericError):
            forward(net, np.array([np.nan, 0.0]))

    def test_wrong_width_rejected(self):
        net = init_regressor([2, 2], seed=0)
        with pytest.raises(ShapeError):
            predict(net, np.zeros((4, 3)))


class TestGradients:
    def test_linear_least_squares_gradient_exact(self):
        # Single linear layer, r=1, norm=1: d/dW sum (Wx+b-y)^2 = 2 e x^T
        net = Regressor([np.array([[1.0, 2.0]])], [np.array([0.5])],
                        ["identity"])
        x = np.array([[1.0, -1.0], [2.0, 0.0]])
        y = np.array([[0.0], [1.0]])
        pred = x @ net.weights[0].T + net.biases[0]
        err = pred - y
        tape = backward_weighted(net, x, y, np.ones(2), np.ones(1))
        np.testing.assert_allclose(tape.d_weights[0], 2.0 * err.T @ x)
        np.testing.assert_allclose(tape.d_biases[0], 2.0 * err.sum(axis=0))

    def test_matches_finite_differences_smooth_net(self):
        rng = np.random.default_rng(11)
        for acts in ("tanh", "sigmoid"):
            net = init_regressor([4, 12, 12, 3],
                                 hidden_activation=acts, seed=13)
            x = rng.normal(0, 1, (6, 4))
            y = rng.normal(0, 1, (6, 3))
            resp = rng.random(6)
            norm = rng.uniform(0.5, 2.0, 3)
            tape = backward_weighted(net, x, y, resp, norm)
            dw, db = fd_gradient(net, x, y, resp, norm)
            assert max_rel_error(tape.d_weights, dw) < 1e-4
            assert max_rel_error(tape.d_biases, db) < 1e-4

    def test_rectifier_matches_fd_away_from_kinks(self):
        rng = np.random.default_rng(17)
        net = init_regressor([3, 10, 2], seed=19)
        x = rng.normal(0, 1, (5, 3))
        y = rng.normal(0, 1, (5, 2))
        # keep every pre-activation well away from 0 so the finite
        # difference probe cannot cross the kink
        pre = x @ net.weights[0].T + net.biases[0]
        assert np.abs(pre).min() > 1e-3
        tape = backward_weighted(net, x, y, np.ones(5), np.ones(2))
        dw, db = fd_gradient(net, x, y, np.ones(5), np.ones(2))
        assert max_rel_error(tape.d_weights, dw) < 1e-4

    def test_zero_responsibility_contributes_nothing(self):
        net = init_regressor([2, 6, 2], hidden_activation="tanh", seed=23)
        rng = np.random.default_rng(3)
        x = rng.normal(0, 1, (8, 2))
        y = rng.normal(0, 1, (8, 2))
        resp = np.zeros(8)
        tape = backward_weighted(net, x, y, resp, np.ones(2))
        assert tape.max_abs() == 0.0

    def test_gradient_scales_linearly_with_responsibility(self):
        net = init_regressor([2, 6, 1], hidden_activation="tanh", seed=29)
        rng = np.random.default_rng(4)
        x = rng.normal(0, 1, (5, 2))
        y = rng.normal(0, 1, (5, 1))
        resp = rng.random(5)
        t1 = backward_weighted(net, x, y, resp, np.ones(1))
        t2 = backward_weighted(net, x, y, 2.0 * resp, np.ones(1))
        for a, b in zip(t1.d_weights, t2.d_weights):
            np.testing.assert_allclose(b, 2.0 * a, rtol=1e-12)

    def test_normalizer_scales_inverse_square(self):
        net = init_regressor([2, 6, 1], hidden_activation="tanh", seed=31)
        rng = np.random.default_rng(5)
        x = rng.normal(0, 1, (5, 2))
        y = rng.normal(0, 1, (5, 1))
        t1 = backward_weighted(net, x, y, np.ones(5), np.ones(1))
        t2 = backward_weighted(net, x, y, np.ones(5), 2.0 * np.ones(1))
        for a, b in zip(t1.d_weights, t2.d_weights):
            np.testing.assert_allclose(b, 0.25 * a, rtol=1e-12)

    def test_per_coordinate_responsibilities_accepted(self):
        net = init_regressor([2, 4, 2], hidden_activation="tanh", seed=37)
        rng = np.random.default_rng(6)
        x = rng.normal(0, 1, (4, 2))
        y = rng.normal(0, 1, (4, 2))
        resp = rng.random((4, 2))
        tape = backward_weighted(net, x, y, resp, np.ones(2))
        dw, db = fd_gradient(net, x, y, resp, np.ones(2))
        assert max_rel_error(tape.d_weights, dw) < 1e-4

    def test_overflowing_activations_raise(self):
        net = Regressor([np.array([[1e300]]), np.array([[1e300]])],
                        [np.zeros(1), np.zeros(1)],
                        ["identity", "identity"])
        with pytest.raises(NumericError):
            backprop(net, np.array([[1e300]]), np.array([[1.0]]))


class TestSgd:
    def test_step_applies_averaged_gradient(self):
        net = Regressor([np.array([[1.0]])], [np.array([0.0])], ["identity"])
        tape = GradientTape([np.array([[4.0]])], [np.array([2.0])], 4)
        cfg = SgdConfig(learning_rate=0.1, seed=0)
        stepped = sgd_step(net, tape, cfg)
        assert stepped.weights[0][0, 0] == pytest.approx(1.0 - 0.1 * 1.0)
        assert stepped.biases[0][0] == pytest.approx(-0.1 * 0.5)
        # original untouched
        assert net.weights[0][0, 0] == 1.0

    def test_perfect_fit_is_a_fixed_point(self):
        net = init_regressor([2, 5, 1], hidden_activation="tanh", seed=41)
        rng = np.random.default_rng(7)
        x = rng.normal(0, 1, (6, 2))
        y = predict(net, x)
        tape = backward_weighted(net, x, y, np.ones(6), np.ones(1))
        assert tape.max_abs() == 0.0
        stepped = sgd_step(net, tape, SgdConfig(seed=0))
        assert stepped.params_equal(net)

    def test_config_validation(self):
        with pytest.raises(ShapeError):
            SgdConfig(learning_rate=0.0)
        with pytest.raises(ShapeError):
            SgdConfig(batch_size=0)


class TestStorage:
    def test_round_trip_is_bit_exact(self, tmp_path):
        net = init_regressor([3, 16, 16, 2], seed=43)
        # exercise non-trivial mantissas
        net.weights[0] *= math.pi
        path = tmp_path / "model.rgm"
        save_model(net, path)
        loaded = load_model(path)
        assert loaded.activations == net.activations
        for a, b in zip(loaded.weights, net.weights):
            assert np.array_equal(a, b)
        for a, b in zip(loaded.biases, net.biases):
            assert np.array_equal(a, b)

    def test_header_is_readable_json_line(self, tmp_path):
        net = init_regressor([2, 4, 1], seed=0)
        path = tmp_path / "model.rgm"
        save_model(net, path)
        with open(path, "rb") as fh:
            header = json.loads(fh.readline())
        assert header["format"] == "robust-gum-model"
        assert header["activations"] == ["rectifier", "identity"]

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "bogus.rgm"
        path.write_bytes(b'{"format": "something-else"}\n')
        with pytest.raises(DataFormatError):
            load_model(path)

    def test_rejects_truncated_payload(self, tmp_path):
        net = init_regressor([2, 4, 1], seed=0)
        path = tmp_path / "model.rgm"
        save_model(net, path)
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(DataFormatError):
            load_model(path)

    def test_rejects_trailing_bytes(self, tmp_path):
        net = init_regressor([2, 4, 1], seed=0)
        path = tmp_path / "model.rgm"
        save_model(net, path)
        with open(path, "ab") as fh:
            fh.write(b"\x00" * 8)
        with pytest.raises(DataFormatError):
            load_model(path)
