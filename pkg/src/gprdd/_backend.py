"""Kernel-matrix fill routines: numba-jitted hot path, pure-numpy fallback.

The jitted path is active when numba imports cleanly and the environment
variable ``GPRDD_DISABLE_NUMBA`` is not set to a truthy value.  Both
implementations are always importable so the benchmark suite (and the parity
tests) can time and compare them side by side.

Dense Cholesky / triangular solves are deliberately *not* reimplemented here;
they stay on the LAPACK routines that scipy wraps.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "ACTIVE_BACKEND",
    "HAVE_NUMBA",
    "se_dense",
    "se_dense_numpy",
    "se_sym",
    "se_sym_numpy",
    "same_group_dense",
    "same_group_dense_numpy",
]


def se_dense_numpy(xs: np.ndarray, ys: np.ndarray, variance: float, inv_sq_lengthscale: float) -> np.ndarray:
    """Squared-exponential matrix K[i, j] = variance * exp(-0.5 * inv * (xs_i - ys_j)^2)."""
    d = xs[:, None] - ys[None, :]
    return variance * np.exp(-0.5 * inv_sq_lengthscale * d * d)


def se_sym_numpy(xs: np.ndarray, variance: float, inv_sq_lengthscale: float) -> np.ndarray:
    """Symmetric SE matrix on a single grid; diagonal is exactly ``variance``."""
    out = se_dense_numpy(xs, xs, variance, inv_sq_lengthscale)
    out[np.diag_indices_from(out)] = variance
    return out


def same_group_dense_numpy(
    xs: np.ndarray, groups: np.ndarray, variance: float, inv_sq_lengthscale: float
) -> np.ndarray:
    """SE matrix zeroed wherever rows belong to different groups."""
    out = se_sym_numpy(xs, variance, inv_sq_lengthscale)
    out[groups[:, None] != groups[None, :]] = 0.0
    return out


def _env_disabled() -> bool:
    return os.environ.get("GPRDD_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


HAVE_NUMBA = False
if not _env_disabled():
    try:
        from numba import njit

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        HAVE_NUMBA = False

if HAVE_NUMBA:

    @njit(cache=True)
    def _se_dense_nb(xs, ys, variance, inv_sq_lengthscale):
        n = xs.shape[0]
        m = ys.shape[0]
        out = np.empty((n, m))
        for i in range(n):
            for j in range(m):
                d = xs[i] - ys[j]
                out[i, j] = variance * np.exp(-0.5 * inv_sq_lengthscale * d * d)
        return out

    @njit(cache=True)
    def _se_sym_nb(xs, variance, inv_sq_lengthscale):
        n = xs.shape[0]
        out = np.empty((n, n))
        for i in range(n):
            out[i, i] = variance
            for j in range(i + 1, n):
                d = xs[i] - xs[j]
                v = variance * np.exp(-0.5 * inv_sq_lengthscale * d * d)
                out[i, j] = v
                out[j, i] = v
        return out

    @njit(cache=True)
    def _same_group_nb(xs, groups, variance, inv_sq_lengthscale):
        n = xs.shape[0]
        out = np.zeros((n, n))
        for i in range(n):
            out[i, i] = variance
            gi = groups[i]
            for j in range(i + 1, n):
                if groups[j] == gi:
                    d = xs[i] - xs[j]
                    v = variance * np.exp(-0.5 * inv_sq_lengthscale * d * d)
                    out[i, j] = v
                    out[j, i] = v
        return out

    se_dense = _se_dense_nb
    se_sym = _se_sym_nb
    same_group_dense = _same_group_nb
    ACTIVE_BACKEND = "numba"
else:
    se_dense = se_dense_numpy
    se_sym = se_sym_numpy
    same_group_dense = same_group_dense_numpy
    ACTIVE_BACKEND = "numpy"
