"""Timing comparison of the compiled and numpy dense-layer kernels.

Runs the batch forward/backward pair on a few representative layer stacks
and batch sizes, checks that both backends produce the same numbers, and
prints the per-call wall time of each along with the speedup factor.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from robust_gum._kernels import ACTIVATION_CODES, _NumpyKernels

try:
    from robust_gum import _speedups
    from robust_gum._kernels import _CythonKernels
    COMPILED = _CythonKernels(_speedups)
except ImportError:
    COMPILED = None

CASES = [
    # (layer dims, activation, batch size)
    ([16, 64, 8], "tanh", 128),
    ([16, 64, 8], "tanh", 3500),
    ([16, 16, 16, 16, 8], "rectifier", 512),
    ([64, 256, 256, 32], "sigmoid", 1024),
]


def build(dims, activation, batch, seed):
    rng = np.random.default_rng(seed)
    weights = [rng.normal(0.0, 0.3, (dims[i + 1], dims[i]))
               for i in range(len(dims) - 1)]
    biases = [rng.normal(0.0, 0.1, d) for d in dims[1:]]
    codes = np.array([ACTIVATION_CODES[activation]] * (len(dims) - 2)
                     + [ACTIVATION_CODES["identity"]], dtype=np.int64)
    x = rng.normal(0.0, 1.0, (batch, dims[0]))
    grad_out = rng.normal(0.0, 1.0, (batch, dims[-1]))
    return weights, biases, codes, x, grad_out


def one_pass(backend, weights, biases, codes, x, grad_out):
    cache = backend.forward_cache(weights, biases, codes, x)
    return cache, backend.backward_sum(weights, cache, codes, grad_out)


def time_backend(backend, args, repeats):
    one_pass(backend, *args)  # warm caches before timing
    start = time.perf_counter()
    for _ in range(repeats):
        one_pass(backend, *args)
    return (time.perf_counter() - start) / repeats


def check_agreement(args):
    cache_a, (dw_a, db_a) = one_pass(_NumpyKernels(), *args)
    cache_b, (dw_b, db_b) = one_pass(COMPILED, *args)
    worst = 0.0
    for a, b in zip(cache_a, cache_b):
        worst = max(worst, float(np.abs(a - b).max()))
    for a, b in zip(dw_a + db_a, dw_b + db_b):
        worst = max(worst, float(np.abs(a - b).max()))
    return worst


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=50,
                        help="timed iterations per case (default 50)")
    opts = parser.parse_args()

    if COMPILED is None:
        print("compiled backend not available; build the extension first "
              "(pip install -e . --no-build-isolation)")
        return

    numpy_backend = _NumpyKernels()
    header = (f"{'layers':<22} {'act':<10} {'batch':>6} "
              f"{'python ms':>10} {'cython ms':>10} {'speedup':>8} {'max diff':>10}")
    print(header)
    print("-" * len(header))
    for dims, activation, batch in CASES:
        args = build(dims, activation, batch, seed=7)
        diff = check_agreement(args)
        t_py = time_backend(numpy_backend, args, opts.repeats)
        t_cy = time_backend(COMPILED, args, opts.repeats)
        print(f"{'x'.join(map(str, dims)):<22} {activation:<10} {batch:>6} "
              f"{t_py * 1e3:>10.3f} {t_cy * 1e3:>10.3f} "
              f"{t_py / t_cy:>8.2f} {diff:>10.2e}")


if __name__ == "__main__":
    main()
