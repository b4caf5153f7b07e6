"""Canonical representation of grouped sharp-design data.

Observations carry an outcome ``y``, a running variable ``z`` (cutoff fixed
at 0), a treatment flag, and a sub-population label.  The canonical layout
used by every downstream matrix builder is: all control rows first (grouped
by sub-population index, input order preserved within a group), then all
treated rows in the same group order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

__all__ = ["Observation", "GroupedDataset", "canonicalize", "canonical_order"]


@dataclass(frozen=True)
class Observation:
    """One (outcome, running variable, treatment, group) record."""

    y: float
    z: float
    treated: bool
    group: Hashable


@dataclass
class GroupedDataset:
    """Observations in canonical order plus group bookkeeping.

    ``group_index`` is 0-based internally; the public ``label_map`` uses the
    1-based indices that the effect-kernel index grid is built on.
    """

    y: np.ndarray
    z: np.ndarray
    treated: np.ndarray
    group_index: np.ndarray
    n_minus: np.ndarray
    n_plus: np.ndarray
    labels: tuple = field(default_factory=tuple)

    @property
    def J(self) -> int:
        return int(self.n_minus.shape[0])

    @property
    def N(self) -> int:
        return int(self.y.shape[0])

    @property
    def N_minus(self) -> int:
        return int(self.n_minus.sum())

    @property
    def N_plus(self) -> int:
        return int(self.n_plus.sum())

    @property
    def label_map(self) -> dict:
        """Original label -> 1-based group index."""
        return {lab: j + 1 for j, lab in enumerate(self.labels)}

    @property
    def treated_group_index(self) -> np.ndarray:
        """0-based group index of each treated row, in canonical order."""
        return self.group_index[self.N_minus :]

    def observations(self) -> list[Observation]:
        return [
            Observation(float(self.y[i]), float(self.z[i]), bool(self.treated[i]), self.labels[self.group_index[i]])
            for i in range(self.N)
        ]

    def validate(self) -> None:
        """Raise ValueError unless the canonical-order invariants hold."""
        n = self.N
        if n == 0:
            raise ValueError("empty dataset")
        if not (self.z.shape == self.treated.shape == self.group_index.shape == (n,)):
            raise ValueError("field length mismatch")
        if self.n_minus.shape != self.n_plus.shape:
            raise ValueError("group size vectors disagree")
        if np.any(self.n_minus + self.n_plus < 1):
            raise ValueError("every group needs at least one observation")
        if self.N_minus + self.N_plus != n:
            raise ValueError("group sizes do not sum to N")
        expected_treated = np.concatenate(
            [np.zeros(self.N_minus, dtype=bool), np.ones(self.N_plus, dtype=bool)]
        )
        if not np.array_equal(self.treated, expected_treated):
            raise ValueError("rows are not ordered control-block-then-treated-block")
        if not np.array_equal(self.treated, self.z >= 0.0):
            raise ValueError("treatment flags disagree with the sharp rule z >= 0")
        for block, sizes in ((self.group_index[: self.N_minus], self.n_minus), (self.group_index[self.N_minus :], self.n_plus)):
            expected = np.repeat(np.arange(self.J), sizes)
            if not np.array_equal(block, expected):
                raise ValueError("group indices are not contiguous ascending within a block")

    def subset(self, mask: np.ndarray) -> "GroupedDataset":
        """Row subset (mask in canonical order); group count and labels are kept."""
        mask = np.asarray(mask, dtype=bool)
        gi = self.group_index[mask]
        tr = self.treated[mask]
        n_minus = np.bincount(gi[~tr], minlength=self.J)
        n_plus = np.bincount(gi[tr], minlength=self.J)
        out = GroupedDataset(
            y=self.y[mask].copy(),
            z=self.z[mask].copy(),
            treated=tr.copy(),
            group_index=gi.copy(),
            n_minus=n_minus,
            n_plus=n_plus,
            labels=self.labels,
        )
        out.validate()
        return out


def canonical_order(treated: np.ndarray, group_index: np.ndarray) -> np.ndarray:
    """Stable permutation to canonical order: controls by group, then treated by group."""
    n = treated.shape[0]
    return np.lexsort((np.arange(n), group_index, treated.astype(np.int64)))


def canonicalize(raw: Iterable[Observation] | Sequence[Observation]) -> GroupedDataset:
    """Reorder raw observations into a validated :class:`GroupedDataset`.

    Group labels are mapped to indices 1..J by first appearance.  Treatment
    flags are recomputed from the sharp rule ``z >= 0``; a warning is emitted
    when any input flag disagrees.
    """
    obs = list(raw)
    if not obs:
        raise ValueError("empty input: at least one observation is required")

    y = np.array([o.y for o in obs], dtype=float)
    z = np.array([o.z for o in obs], dtype=float)
    given = np.array([bool(o.treated) for o in obs], dtype=bool)
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite outcome values")
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite running-variable values")

    labels: list = []
    seen: dict = {}
    gi = np.empty(len(obs), dtype=np.int64)
    for i, o in enumerate(obs):
        if o.group not in seen:
            seen[o.group] = len(labels)
            labels.append(o.group)
        gi[i] = seen[o.group]

    treated = z >= 0.0
    n_bad = int(np.sum(treated != given))
    if n_bad:
        warnings.warn(
            f"{n_bad} treatment flag(s) disagree with the sharp rule z >= 0; overridden",
            stacklevel=2,
        )

    order = canonical_order(treated, gi)
    gi = gi[order]
    treated = treated[order]
    ds = GroupedDataset(
        y=y[order],
        z=z[order],
        treated=treated,
        group_index=gi,
        n_minus=np.bincount(gi[~treated], minlength=len(labels)),
        n_plus=np.bincount(gi[treated], minlength=len(labels)),
        labels=tuple(labels),
    )
    ds.validate()
    return ds
