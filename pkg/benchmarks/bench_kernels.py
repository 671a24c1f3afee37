"""Benchmark the jitted kernels against the pure-numpy fallback.

Usage:
    python benchmarks/bench_kernels.py

Runs both implementations in one process (the fallback functions stay
importable regardless of the POLYUQ_NO_NUMBA flag) and prints a timing
table.  With POLYUQ_NO_NUMBA=1 both rows measure the numpy path.
"""

import timeit

import numpy as np

from polyuq import _kernels


def _setup(n_points=200_000, n_rows=18, dim=12, chain_steps=20_000):
    rng = np.random.default_rng(0)
    A = rng.normal(size=(n_rows, dim))
    A /= np.linalg.norm(A, axis=1)[:, None]
    c = rng.normal(size=dim)
    b = A @ c + 1.0
    X = c + rng.normal(size=(n_points, dim)) * 0.5
    axes = rng.normal(size=(n_points, 3))
    axes /= np.linalg.norm(axes, axis=1)[:, None]
    angles = rng.uniform(0, np.pi, n_points)
    dirs = rng.normal(size=(chain_steps, dim))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    unifs = rng.uniform(size=chain_steps)
    return A, b, c, X, axes, angles, dirs, unifs


def main():
    A, b, c, X, axes, angles, dirs, unifs = _setup()
    np_mask, np_rodrigues, np_chain = _kernels.numpy_reference()
    n_out = 1000
    cases = {
        "satisfy_mask (200k x 18x12)": (
            lambda: _kernels.satisfy_mask(A, b, X, 1e-9),
            lambda: np_mask(A, b, X, 1e-9),
        ),
        "rodrigues_batch (200k)": (
            lambda: _kernels.rodrigues_batch(axes, angles),
            lambda: np_rodrigues(axes, angles),
        ),
        "hit_and_run_chain (20k steps)": (
            lambda: _kernels.hit_and_run_chain(A, b, c, dirs, unifs, 100, 5, n_out),
            lambda: np_chain(A, b, c, dirs, unifs, 100, 5, n_out),
        ),
    }
    path = "numba" if _kernels.USE_NUMBA else "numpy (flag set)"
    print(f"active fast path: {path}")
    print(f"{'kernel':36s} {'fast':>10s} {'numpy':>10s} {'speedup':>8s}")
    for name, (fast, ref) in cases.items():
        fast()  # JIT warmup / cache load
        t_fast = min(timeit.repeat(fast, number=3, repeat=3)) / 3
        t_ref = min(timeit.repeat(ref, number=3, repeat=3)) / 3
        print(f"{name:36s} {t_fast*1e3:9.2f}ms {t_ref*1e3:9.2f}ms {t_ref/t_fast:7.1f}x")


if __name__ == "__main__":
    main()
