"""Window preprocessing: restrict data to an interval around the cutoff,
optionally doubling the window on one side when treated/control counts are
badly imbalanced after the symmetric cut."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import GroupedDataset

__all__ = ["WindowPolicy", "apply_cut", "resolve_window", "rule_of_thumb_half_width"]

SKEW_MODES = ("none", "auto", "force_right", "force_left")


@dataclass(frozen=True)
class WindowPolicy:
    """Half-width plus the skew-handling rule.

    ``auto`` doubles the window on the treated side when, after the symmetric
    cut, treated rows number fewer than controls divided by
    ``imbalance_ratio`` (and mirrored for the control side).
    """

    half_width: float
    skew_mode: str = "none"
    imbalance_ratio: float = 2.0

    def __post_init__(self):
        if not (math.isfinite(self.half_width) and self.half_width > 0):
            raise ValueError("half_width must be positive and finite")
        if self.skew_mode not in SKEW_MODES:
            raise ValueError(f"skew_mode must be one of {SKEW_MODES}")
        if not self.imbalance_ratio > 1.0:
            raise ValueError("imbalance_ratio must exceed 1")


def resolve_window(data: GroupedDataset, policy: WindowPolicy) -> tuple[float, float]:
    """Concrete interval [lo, hi] after skew resolution."""
    h = policy.half_width
    if policy.skew_mode == "force_right":
        return -h, 2.0 * h
    if policy.skew_mode == "force_left":
        return -2.0 * h, h
    if policy.skew_mode == "auto":
        inside = (data.z >= -h) & (data.z <= h)
        n_treated = int(np.sum(inside & data.treated))
        n_control = int(np.sum(inside & ~data.treated))
        if n_treated * policy.imbalance_ratio < n_control:
            return -h, 2.0 * h
        if n_control * policy.imbalance_ratio < n_treated:
            return -2.0 * h, h
    return -h, h


def apply_cut(data: GroupedDataset, policy: WindowPolicy) -> GroupedDataset:
    """Keep rows with z inside the resolved window; errors if any group loses
    all of its treated or all of its control rows (its effect would be
    unidentifiable in-window)."""
    data.validate()
    lo, hi = resolve_window(data, policy)
    mask = (data.z >= lo) & (data.z <= hi)

    bad = []
    for j in range(data.J):
        in_group = mask & (data.group_index == j)
        n_plus = int(np.sum(in_group & data.treated))
        n_minus = int(np.sum(in_group & ~data.treated))
        if n_plus == 0 or n_minus == 0:
            bad.append(data.labels[j])
    if bad:
        raise ValueError(
            f"window [{lo:g}, {hi:g}] leaves group(s) {bad} without treated or control rows"
        )
    return data.subset(mask)


def rule_of_thumb_half_width(z: np.ndarray) -> float:
    """Crude scale-based half-width 1.06 * sd(z) * N^(-1/5).

    This is a plain bandwidth rule of thumb, not a mean-squared-error-optimal
    selector; it exists only as a labelled fallback when no half-width is
    supplied.
    """
    z = np.asarray(z, dtype=float)
    n = z.shape[0]
    if n < 2:
        raise ValueError("need at least two observations")
    return 1.06 * float(np.std(z, ddof=1)) * n ** (-0.2)
