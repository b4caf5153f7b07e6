"""Squared-exponential kernels and the structural matrices of the joint model.

Builds, for a canonical dataset, every covariance block the joint Gaussian
over (treatment effects, outcomes) is assembled from: the shared-level
matrix ``Kg``, the within-group deviation matrix ``D``, the effect
covariance ``Kdelta`` over group indices, the treated-row indicator ``H``,
and the per-row noise variances ``Sigma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._backend import same_group_dense, se_dense, se_sym
from .data import GroupedDataset

__all__ = [
    "KDELTA_SE",
    "KDELTA_DIAG",
    "SEParams",
    "JointComponents",
    "se_eval",
    "se_matrix",
    "kdelta_matrix",
    "build_components",
]

KDELTA_SE = "se_over_index"
KDELTA_DIAG = "diagonal"
_KDELTA_MODES = (KDELTA_SE, KDELTA_DIAG)


@dataclass(frozen=True)
class SEParams:
    """Squared-exponential kernel parameters.

    ``variance`` is the amplitude (the kernel value at zero distance);
    ``inv_sq_lengthscale`` is the inverse squared lengthscale.  Both must be
    strictly positive and finite.
    """

    variance: float
    inv_sq_lengthscale: float

    def __post_init__(self):
        for name in ("variance", "inv_sq_lengthscale"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ValueError(f"SEParams.{name} must be strictly positive and finite, got {v}")


@dataclass
class JointComponents:
    """Structural matrices for one (dataset, hyperparameter) pair.

    ``Sigma`` is stored as the N-vector of per-row noise variances (the
    diagonal of the full noise matrix).
    """

    Kg: np.ndarray
    D: np.ndarray
    Kdelta: np.ndarray
    H: np.ndarray
    Sigma: np.ndarray


def se_eval(x: float, y: float, p: SEParams) -> float:
    """Scalar SE kernel value; exactly ``p.variance`` at x == y."""
    d = x - y
    return p.variance * math.exp(-0.5 * p.inv_sq_lengthscale * d * d)


def se_matrix(xs, ys, p: SEParams) -> np.ndarray:
    """SE kernel matrix between two point sets (symmetric fast path when xs is ys)."""
    xs = np.ascontiguousarray(xs, dtype=float)
    if ys is xs:
        return se_sym(xs, p.variance, p.inv_sq_lengthscale)
    ys = np.ascontiguousarray(ys, dtype=float)
    return se_dense(xs, ys, p.variance, p.inv_sq_lengthscale)


def kdelta_matrix(J: int, p: SEParams, mode: str = KDELTA_SE) -> np.ndarray:
    """Effect covariance over groups: SE on the index grid 1..J, or variance * I."""
    if mode not in _KDELTA_MODES:
        raise ValueError(f"unknown kdelta mode {mode!r}; expected one of {_KDELTA_MODES}")
    if mode == KDELTA_DIAG:
        return p.variance * np.eye(J)
    idx = np.arange(1, J + 1, dtype=float)
    return se_matrix(idx, idx, p)


def noise_vector(data: GroupedDataset, sigma_minus_sq: np.ndarray, sigma_plus_sq: np.ndarray) -> np.ndarray:
    """Per-row noise variances in canonical order."""
    sig = np.where(
        data.treated,
        np.asarray(sigma_plus_sq, dtype=float)[data.group_index],
        np.asarray(sigma_minus_sq, dtype=float)[data.group_index],
    )
    if np.any(sig <= 0.0):
        raise ValueError("noise variances must be strictly positive")
    return sig


def indicator_matrix(data: GroupedDataset) -> np.ndarray:
    """Treated-row group indicator H (N_plus x J), one 1 per row."""
    tg = data.treated_group_index
    H = np.zeros((tg.shape[0], data.J))
    H[np.arange(tg.shape[0]), tg] = 1.0
    return H


def build_components(data: GroupedDataset, theta, kdelta_mode: str = KDELTA_SE) -> JointComponents:
    """Assemble all structural matrices for a canonical dataset.

    ``theta`` is a :class:`~gprdd.model.Theta`.  The within-group matrix ``D``
    shares one set of kernel parameters across all groups; entries pairing
    rows from different groups are exactly zero.
    """
    data.validate()
    theta.validate()
    z = np.ascontiguousarray(data.z, dtype=float)
    groups = np.ascontiguousarray(data.group_index, dtype=np.int64)
    Kg = se_matrix(z, z, theta.g_kernel)
    D = same_group_dense(z, groups, theta.f_kernel.variance, theta.f_kernel.inv_sq_lengthscale)
    Kdelta = kdelta_matrix(data.J, theta.delta_kernel, kdelta_mode)
    H = indicator_matrix(data)
    Sigma = noise_vector(data, theta.sigma_minus_sq, theta.sigma_plus_sq)
    return JointComponents(Kg=Kg, D=D, Kdelta=Kdelta, H=H, Sigma=Sigma)
