"""Block-missing data, measurement designs and identifiability masks.

Indices are 0-based throughout the Python API. File formats and error
messages use 1-based indices; the conversion happens in :mod:`covbounds.io`
and in the exception messages.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    ConsistencyError,
    NotPSDError,
    PartitionError,
    UnobservedVariableError,
)

SYMMETRY_RTOL = 1e-12
PSD_RTOL = 1e-8


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MaskedDataset:
    """An n x p data matrix with an explicit boolean missingness mask.

    ``values`` holds NaN at missing cells, but ``missing`` is the
    authoritative record: a finite 0.0 is never confused with NA.
    """

    values: np.ndarray
    missing: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        missing = np.asarray(self.missing, dtype=bool)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError("values must be a non-empty 2-d array")
        if missing.shape != values.shape:
            raise ValueError("missing mask shape does not match values")
        if not np.all(np.isfinite(values[~missing])):
            raise ValueError("observed cells must be finite")
        values = values.copy()
        values[missing] = np.nan
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "missing", _frozen(missing))

    @classmethod
    def from_array(cls, x) -> "MaskedDataset":
        """Build from an array that uses NaN for missing cells."""
        x = np.asarray(x, dtype=float)
        return cls(x, np.isnan(x))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def missing_pairs(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in zip(*np.nonzero(self.missing))}


class Block(NamedTuple):
    rows: frozenset
    vars: frozenset


@dataclass(frozen=True)
class BlockDesign:
    """Row partition G_1..G_K with the variable set J_k observed in each."""

    groups: tuple
    n: int
    p: int

    @property
    def K(self) -> int:
        return len(self.groups)

    def row_block(self) -> np.ndarray:
        """Block index of every row."""
        out = np.empty(self.n, dtype=int)
        for k, g in enumerate(self.groups):
            out[sorted(g.rows)] = k
        return out

    def observed_mask(self) -> np.ndarray:
        """n x p boolean array, True where the design observes a cell."""
        obs = np.zeros((self.n, self.p), dtype=bool)
        for g in self.groups:
            obs[np.ix_(sorted(g.rows), sorted(g.vars))] = True
        return obs

    def block_vars(self, k: int) -> np.ndarray:
        return np.array(sorted(self.groups[k].vars), dtype=int)

    def block_rows(self, k: int) -> np.ndarray:
        return np.array(sorted(self.groups[k].rows), dtype=int)


def build_design(
    group_rows: Sequence, group_vars: Sequence, n: int, p: int
) -> BlockDesign:
    """Validate and assemble a block design.

    Raises
    ------
    PartitionError
        Row sets overlap or do not cover every row.
    UnobservedVariableError
        Some variable belongs to no block's variable set.
    IndexError
        A row or variable index is out of range.
    """
    if len(group_rows) != len(group_vars):
        raise ValueError("group_rows and group_vars differ in length")
    if len(group_rows) < 1:
        raise ValueError("a design needs at least one block")
    if n < 1 or p < 1:
        raise ValueError("n and p must be positive")

    groups = []
    seen_rows: set[int] = set()
    seen_vars: set[int] = set()
    for k, (rows, cols) in enumerate(zip(group_rows, group_vars)):
        rows = frozenset(int(r) for r in rows)
        cols = frozenset(int(c) for c in cols)
        bad_rows = [r for r in rows if not 0 <= r < n]
        if bad_rows:
            raise IndexError(f"block {k + 1}: row index {min(bad_rows) + 1} outside 1..{n}")
        bad_vars = [c for c in cols if not 0 <= c < p]
        if bad_vars:
            raise IndexError(f"block {k + 1}: variable {min(bad_vars) + 1} outside 1..{p}")
        if not cols:
            raise ValueError(f"block {k + 1} observes no variables")
        overlap = seen_rows & rows
        if overlap:
            raise PartitionError(
                f"block {k + 1} reuses row {min(overlap) + 1} from an earlier block"
            )
        seen_rows |= rows
        seen_vars |= cols
        groups.append(Block(rows, cols))

    if len(seen_rows) != n:
        uncovered = sorted(set(range(n)) - seen_rows)
        raise PartitionError(f"rows not assigned to any block: {[r + 1 for r in uncovered[:10]]}")
    unobserved = sorted(set(range(p)) - seen_vars)
    if unobserved:
        raise UnobservedVariableError(unobserved)
    return BlockDesign(tuple(groups), int(n), int(p))


@dataclass(frozen=True)
class IdentifiabilityMask:
    """Which covariance coordinates the observed likelihood depends on."""

    identified: np.ndarray
    free_pairs: tuple

    def __post_init__(self):
        object.__setattr__(self, "identified", _frozen(np.asarray(self.identified, dtype=bool)))

    @property
    def p(self) -> int:
        return self.identified.shape[0]

    @property
    def free(self) -> np.ndarray:
        return ~self.identified

    @property
    def n_free(self) -> int:
        return len(self.free_pairs)


def mask_from_var_sets(var_sets: Sequence, p: int) -> IdentifiabilityMask:
    """Mask B = union of J_k x J_k for the given variable sets."""
    ident = np.zeros((p, p), dtype=bool)
    for cols in var_sets:
        idx = np.array(sorted(cols), dtype=int)
        ident[np.ix_(idx, idx)] = True
    free_pairs = tuple(
        (a, b) for a in range(p) for b in range(a + 1, p) if not ident[a, b]
    )
    return IdentifiabilityMask(ident, free_pairs)


def identifiability_mask(design: BlockDesign) -> IdentifiabilityMask:
    return mask_from_var_sets([g.vars for g in design.groups], design.p)


class MissingCell(NamedTuple):
    row: int
    col: int
    block: int


def check_consistency(dataset: MaskedDataset, design: BlockDesign) -> None:
    if (dataset.n, dataset.p) != (design.n, design.p):
        raise ConsistencyError(
            f"dataset is {dataset.n}x{dataset.p} but design is {design.n}x{design.p}"
        )
    expected = ~design.observed_mask()
    diff = expected != dataset.missing
    if diff.any():
        i, j = np.argwhere(diff)[0]
        state = "missing" if dataset.missing[i, j] else "present"
        raise ConsistencyError(
            f"cell ({i + 1}, {j + 1}) is {state} in the data but not in the design "
            f"({int(diff.sum())} disagreeing cells)"
        )


def missing_cells(dataset: MaskedDataset, design: BlockDesign) -> list[MissingCell]:
    """All cells to impute, in row-major order."""
    check_consistency(dataset, design)
    row_block = design.row_block()
    return [
        MissingCell(int(i), int(j), int(row_block[i]))
        for i, j in zip(*np.nonzero(dataset.missing))
    ]


@dataclass(frozen=True)
class CovEstimate:
    sigma: np.ndarray
    mask: IdentifiabilityMask

    def __post_init__(self):
        object.__setattr__(self, "sigma", _frozen(np.asarray(self.sigma, dtype=float)))


def validate_cov(sigma, mask: IdentifiabilityMask | None = None) -> CovEstimate:
    """Symmetrize ``sigma``, check its eigenvalue floor and tag it with ``mask``.

    A matrix passes when its minimum eigenvalue is at least
    ``-1e-8 * max(diag)``.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError("sigma must be square")
    if not np.all(np.isfinite(sigma)):
        raise ValueError("sigma has non-finite entries")
    sym = (sigma + sigma.T) / 2
    lam_min = np.linalg.eigvalsh(sym)[0]
    floor = -PSD_RTOL * max(float(np.max(np.diag(sym))), 0.0)
    if lam_min < floor:
        raise NotPSDError(lam_min)
    if mask is None:
        mask = mask_from_var_sets([range(sym.shape[0])], sym.shape[0])
    elif mask.p != sym.shape[0]:
        raise ValueError("mask and sigma dimensions differ")
    return CovEstimate(sym, mask)
