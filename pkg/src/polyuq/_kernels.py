"""Hot numeric kernels: numba-jitted fast path with a pure-numpy fallback.

The batch membership test, batched Rodrigues map, and the hit-and-run chain
dominate the non-solver runtime of the samplers and conservatism drivers.
Set ``POLYUQ_NO_NUMBA=1`` in the environment to force the numpy fallback
(identical results, slower chains).  ``benchmarks/bench_kernels.py`` times
both paths.
"""

from __future__ import annotations

import os

import numpy as np

USE_NUMBA = os.environ.get("POLYUQ_NO_NUMBA", "").strip() not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False


def _satisfy_mask_np(A, b, X, tol):
    return (X @ A.T <= b + tol).all(axis=1)


def _rodrigues_batch_np(axes, angles):
    n = axes.shape[0]
    out = np.empty((n, 3, 3))
    ct = np.cos(angles)
    st = np.sin(angles)
    one_ct = 1.0 - ct
    x, y, z = axes[:, 0], axes[:, 1], axes[:, 2]
    out[:, 0, 0] = ct + x * x * one_ct
    out[:, 0, 1] = x * y * one_ct - z * st
    out[:, 0, 2] = x * z * one_ct + y * st
    out[:, 1, 0] = y * x * one_ct + z * st
    out[:, 1, 1] = ct + y * y * one_ct
    out[:, 1, 2] = y * z * one_ct - x * st
    out[:, 2, 0] = z * x * one_ct - y * st
    out[:, 2, 1] = z * y * one_ct + x * st
    out[:, 2, 2] = ct + z * z * one_ct
    return out


def _hit_and_run_np(A, b, x0, dirs, unifs, burn_in, thin, n_out):
    x = x0.copy()
    out = np.empty((n_out, x0.shape[0]))
    k = 0
    step = 0
    for i in range(dirs.shape[0]):
        u = dirs[i]
        den = A @ u
        slack = b - A @ x
        lo, hi = -np.inf, np.inf
        for m in range(den.shape[0]):
            d = den[m]
            if d > 1e-12:
                hi = min(hi, slack[m] / d)
            elif d < -1e-12:
                lo = max(lo, slack[m] / d)
        if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
            continue
        x = x + (lo + unifs[i] * (hi - lo)) * u
        step += 1
        if step > burn_in and (step - burn_in) % thin == 0:
            out[k] = x
            k += 1
            if k == n_out:
                break
    for j in range(k, n_out):
        out[j] = x
    return out


if USE_NUMBA:

    @njit(cache=True)
    def _satisfy_mask_jit(A, b, X, tol):
        n, M = X.shape[0], A.shape[0]
        out = np.ones(n, dtype=np.bool_)
        for i in range(n):
            for m in range(M):
                acc = 0.0
                for j in range(A.shape[1]):
                    acc += A[m, j] * X[i, j]
                if acc > b[m] + tol:
                    out[i] = False
                    break
        return out

    satisfy_mask = _satisfy_mask_jit
    rodrigues_batch = njit(cache=True)(_rodrigues_batch_np)
    hit_and_run_chain = njit(cache=True)(_hit_and_run_np)
else:
    satisfy_mask = _satisfy_mask_np
    rodrigues_batch = _rodrigues_batch_np
    hit_and_run_chain = _hit_and_run_np


def numpy_reference():
    """The always-numpy implementations (for fallback tests and benchmarks)."""
    return _satisfy_mask_np, _rodrigues_batch_np, _hit_and_run_np
