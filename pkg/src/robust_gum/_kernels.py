"""Backend selection for the dense-layer batch kernels.

Two interchangeable implementations exist: a compiled Cython extension
(robust_gum._speedups) and a vectorized numpy fallback. The compiled one is
picked when it imports cleanly; ROBUST_GUM_BACKEND=python|cython forces a
choice. Both expose the same two functions:

forward_cache(weights, biases, act_codes, x)
    Batch forward pass; returns the list [x, a_1, ..., a_L] of layer
    activations (post-activation values).

backward_sum(weights, cache, act_codes, grad_out)
    Backpropagation of d(loss)/d(output), summed over the batch; returns
    (d_weights, d_biases) aligned 1:1 with (weights, biases).

Activation codes: 0 identity, 1 rectifier, 2 sigmoid, 3 tanh.
"""

import os

import numpy as np

ACTIVATION_CODES = {"identity": 0, "rectifier": 1, "sigmoid": 2, "tanh": 3}


def _act(z, code):
    if code == 1:
        return np.maximum(z, 0.0)
    if code == 2:
        return 1.0 / (1.0 + np.exp(-z))
    if code == 3:
        return np.tanh(z)
    if code == 0:
        return z
    raise ValueError(f"unknown activation code {code}")


def _act_deriv_from_output(a, code):
    # Every supported activation has a derivative expressible through its
    # own output, so pre-activations never need caching.
    if code == 1:
        return (a > 0.0).astype(np.float64)
    if code == 2:
        return a * (1.0 - a)
    if code == 3:
        return 1.0 - a * a
    if code == 0:
        return np.ones_like(a)
    raise ValueError(f"unknown activation code {code}")


class _NumpyKernels:
    name = "python"

    @staticmethod
    def forward_cache(weights, biases, act_codes, x):
        cache = [x]
        a = x
        for w, b, code in zip(weights, biases, act_codes):
            a = _act(a @ w.T + b, code)
            cache.append(a)
        return cache

    @staticmethod
    def backward_sum(weights, cache, act_codes, grad_out):
        n_layers = len(weights)
        d_weights = [None] * n_layers
        d_biases = [None] * n_layers
        g = grad_out
        for layer in range(n_layers - 1, -1, -1):
            a_in = cache[layer]
            d_weights[layer] = g.T @ a_in
            d_biases[layer] = g.sum(axis=0)
            if layer > 0:
                g = (g @ weights[layer]) * _act_deriv_from_output(
                    a_in, act_codes[layer - 1])
        return d_weights, d_biases


class _CythonKernels:
    name = "cython"

    def __init__(self, module):
        self._mod = module

    def forward_cache(self, weights, biases, act_codes, x):
        return self._mod.forward_cache(weights, biases, act_codes, x)

    def backward_sum(self, weights, cache, act_codes, grad_out):
        return self._mod.backward_sum(weights, cache, act_codes, grad_out)


def _load_backend():
    choice = os.environ.get("ROBUST_GUM_BACKEND", "auto").lower()
    if choice not in ("auto", "cython", "python"):
        raise ValueError(f"unknown ROBUST_GUM_BACKEND value: {choice!r}")
    if choice == "python":
        return _NumpyKernels()
    try:
        from robust_gum import _speedups
    except ImportError:
        if choice == "cython":
            raise ImportError(
                "ROBUST_GUM_BACKEND=cython but robust_gum._speedups is not "
                "built; reinstall with a C compiler available")
        return _NumpyKernels()
    return _CythonKernels(_speedups)


kernels = _load_backend()
BACKEND = kernels.name
