"""Dense SPD factorization helpers sharing one jitter-escalation policy.

Every factorization in the package goes through :func:`jittered_cholesky`:
a diagonal jitter of ``1e-8 * max(diag)`` is added before the first attempt,
and on failure it is escalated tenfold up to three times before giving up.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import get_lapack_funcs, solve_triangular

BASE_JITTER = 1e-8
MAX_ESCALATIONS = 3

LOG_2PI = float(np.log(2.0 * np.pi))

_POTRF = get_lapack_funcs(("potrf",), (np.empty((1, 1), dtype=float),))[0]


class FactorizationError(RuntimeError):
    """Cholesky factorization failed even after jitter escalation."""


def jittered_cholesky(
    a: np.ndarray, base_jitter: float = BASE_JITTER, clean: bool = True
) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``a`` plus escalating diagonal jitter.

    Parameters
    ----------
    a : ndarray
        Square symmetric matrix.
    base_jitter : float
        Relative jitter; scaled by the largest diagonal entry of ``a``
        (falls back to an absolute scale of 1 when the diagonal is
        non-positive, e.g. for an all-zero matrix).
    clean : bool
        When False, skip zeroing the strict upper triangle of the returned
        factor (hot-path use where only the lower triangle is read).

    Returns
    -------
    (L, jitter) : lower-triangular factor and the absolute jitter used.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = float(np.max(np.diagonal(a))) if n else 1.0
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    jitter = base_jitter * scale
    for _ in range(MAX_ESCALATIONS + 1):
        work = np.array(a, order="F", copy=True)
        work.flat[:: n + 1] += jitter
        lower, info = _POTRF(work, lower=True, overwrite_a=True, clean=clean)
        if info == 0:
            return lower, jitter
        if info < 0:
            raise ValueError(f"illegal value in argument {-info} of the factorization")
        jitter *= 10.0
    raise FactorizationError(
        f"Cholesky failed after escalating jitter to {jitter / 10.0:.3e} (n={n})"
    )


def chol_logdet(lower: np.ndarray) -> float:
    """log det(A) from a lower Cholesky factor of A."""
    return 2.0 * float(np.sum(np.log(np.diagonal(lower))))


def chol_forward(lower: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve L x = b for lower-triangular L."""
    return solve_triangular(lower, b, lower=True, check_finite=False)


def chol_solve(lower: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve (L L^T) x = b for lower-triangular L."""
    y = solve_triangular(lower, b, lower=True, check_finite=False)
    return solve_triangular(lower, y, lower=True, trans="T", check_finite=False)


def gaussian_logpdf_from_factor(resid_white: np.ndarray, logdet: float) -> float:
    """Multivariate normal log density given the whitened residual L^{-1}(x - mu)."""
    n = resid_white.shape[0]
    return -0.5 * (n * LOG_2PI + logdet + float(resid_white @ resid_white))
