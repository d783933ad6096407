"""Independent reference computations used to check the solver.

None of these share code with the barrier solver: the 3x3 interval is
closed form, the grid oracle enumerates free entries exhaustively, and the
gradient checker differentiates numerically.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .data_model import IdentifiabilityMask
from .errors import BoundaryError, DomainError, NoFeasiblePointError

GRID_PSD_TOL = -1e-12


class Interval(NamedTuple):
    lower: float
    upper: float

    @property
    def width(self) -> float:
        return self.upper - self.lower


def three_by_three_interval(a: float, b: float) -> Interval:
    """Feasible range of the unobserved correlation c in [[1,a,c],[a,1,b],[c,b,1]]."""
    if not (-1 <= a <= 1 and -1 <= b <= 1):
        raise DomainError(f"correlations must lie in [-1, 1], got a={a}, b={b}")
    r = np.sqrt((1 - a * a) * (1 - b * b))
    return Interval(a * b - r, a * b + r)


def grid_interval(sigma_partial, mask: IdentifiabilityMask, objective, step: float) -> Interval:
    """Min and max of an affine objective over a grid of free-entry values.

    Each free entry (a,b) ranges over ``[-M, M]`` with
    ``M = sqrt(S_aa * S_bb)``; grid points whose completion has
    ``lambda_min >= -1e-12`` count as feasible. At most two free pairs.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    pairs = list(mask.free_pairs)
    if len(pairs) > 2:
        raise ValueError("grid_interval supports at most 2 free pairs")
    base = np.where(mask.identified, np.asarray(sigma_partial, dtype=float), 0.0)
    C = np.asarray(objective.C, dtype=float)
    offset = float(getattr(objective, "constant_offset", 0.0))
    if not pairs:
        if np.linalg.eigvalsh(base)[0] < GRID_PSD_TOL:
            raise NoFeasiblePointError("fixed matrix is not PSD")
        v = float(np.sum(C * base)) + offset
        return Interval(v, v)

    axes = []
    for a, b in pairs:
        M = np.sqrt(base[a, a] * base[b, b])
        k = int(np.floor(M / step))
        axes.append(np.arange(-k, k + 1) * step)

    lo, hi = np.inf, -np.inf
    base_val = float(np.sum(C * base)) + offset
    # chunk the outer axis so memory stays bounded for two free pairs
    inner_axes = axes[1:]
    for first in np.array_split(axes[0], max(1, len(axes[0]) // 200)):
        grids = np.meshgrid(first, *inner_axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        mats = np.broadcast_to(base, (len(pts),) + base.shape).copy()
        vals = np.full(len(pts), base_val)
        for idx, (a, b) in enumerate(pairs):
            mats[:, a, b] = pts[:, idx]
            mats[:, b, a] = pts[:, idx]
            vals += (C[a, b] + C[b, a]) * pts[:, idx]
        ok = np.linalg.eigvalsh(mats)[:, 0] >= GRID_PSD_TOL
        if ok.any():
            lo = min(lo, float(vals[ok].min()))
            hi = max(hi, float(vals[ok].max()))
    if not np.isfinite(lo):
        raise NoFeasiblePointError("no PSD completion on the grid")
    return Interval(lo, hi)


def finite_diff_grad(objective, sigma, mask: IdentifiabilityMask, t: float, h: float) -> np.ndarray:
    """Central differences of ``-(1/t) log|Sigma| + C o Sigma`` along each free pair.

    Entries (a,b) and (b,a) move together by ``h``; the derivative is stored
    at both positions. Identified coordinates are zero.
    """
    sigma = np.asarray(sigma, dtype=float)
    C = np.asarray(objective.C, dtype=float)

    def f(s):
        sign, logdet = np.linalg.slogdet(s)
        if sign <= 0:
            raise BoundaryError("finite-difference point left the PSD cone")
        return -logdet / t + float(np.sum(C * s))

    out = np.zeros_like(sigma)
    for a, b in mask.free_pairs:
        e = np.zeros_like(sigma)
        e[a, b] = e[b, a] = h
        d = (f(sigma + e) - f(sigma - e)) / (2 * h)
        out[a, b] = out[b, a] = d
    return out

