"""Exact ranges of affine functionals of Sigma over the equal-likelihood set S.

S holds every PSD matrix that agrees with the estimate on identified
coordinates. Minimizing (or maximizing) ``C o Sigma`` over S is a
semidefinite program, solved here by a log-barrier schedule whose inner
problems use accelerated projected gradient descent (see
:mod:`covbounds.barrier`).
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .barrier import (
    LinearObjective,
    SolverConfig,
    inner_solve,
    matrix_scale,
    project_free,
)
from .data_model import (
    BlockDesign,
    CovEstimate,
    IdentifiabilityMask,
    MaskedDataset,
    MissingCell,
    identifiability_mask,
)
from .em_engine import EmState, max_det_completion
from .errors import CovBoundsError, InfeasibleCompletionError, MaxInnerIterError
from .mvn_stats import sym_inverse

log = logging.getLogger(__name__)

PERTURBATION = 1e-8
START_TOL = 1e-8
INTERIOR_TOL = 1e-10


@dataclass
class SolveReport:
    optimum: float
    sigma_star: CovEstimate
    outer_iters: int
    inner_iters: int
    converged: bool
    min_eig_final: float
    objective_trace: list = field(default_factory=list)
    perturbed: bool = False


@dataclass
class BoundResult:
    row: int
    col: int
    em_value: float
    lower: float
    upper: float
    reports: tuple = (None, None)
    fast_path: bool = False
    error: str | None = None

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def converged(self) -> tuple[bool, bool]:
        if self.fast_path:
            return True, True
        return tuple(bool(r is not None and r.converged) for r in self.reports)

    @property
    def inner_iters(self) -> tuple[int, int]:
        return tuple(0 if r is None else r.inner_iters for r in self.reports)


def build_objective(
    cell: MissingCell,
    sigma_hat,
    mu_hat,
    dataset: MaskedDataset,
    design: BlockDesign,
) -> LinearObjective:
    """Affine form of the conditional mean of ``cell`` as a function of Sigma.

    With ``v = Sigma_hat[J,J]^-1 (x_J - mu_hat_J)`` the imputation is
    ``mu_hat_j + Sigma[j,J] v``; C carries ``v/2`` at (j,J) and (J,j) so
    that the Frobenius pairing counts each entry once.
    """
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    mu_hat = np.asarray(mu_hat, dtype=float)
    J = design.block_vars(cell.block)
    inv, _ = sym_inverse(sigma_hat[np.ix_(J, J)], block=cell.block + 1)
    v = inv @ (dataset.values[cell.row, J] - mu_hat[J])
    C = np.zeros_like(sigma_hat)
    C[cell.col, J] = v / 2
    C[J, cell.col] = v / 2
    return LinearObjective(C, float(mu_hat[cell.col]))


def interior_start(sigma_hat, mask: IdentifiabilityMask, scale=None):
    """Strictly PD point of S to start the barrier from.

    Returns ``(start, base, perturbed)``. ``base`` supplies the fixed entries;
    when S has empty interior it is ``sigma_hat + 1e-8*scale*I`` and
    ``perturbed`` is True.
    """
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    scale = scale or matrix_scale(sigma_hat)
    if np.linalg.eigvalsh(sigma_hat)[0] > START_TOL * scale:
        return sigma_hat, sigma_hat, False
    try:
        start = max_det_completion(sigma_hat, mask).sigma
        if np.linalg.eigvalsh(start)[0] > INTERIOR_TOL * scale:
            return start, sigma_hat, False
    except InfeasibleCompletionError:
        pass
    base = sigma_hat + PERTURBATION * scale * np.eye(len(sigma_hat))
    log.info("S has empty interior; solving on sigma_hat + %.1e*I", PERTURBATION * scale)
    start = max_det_completion(base, mask).sigma
    return start, base, True


def barrier_solve(
    objective: LinearObjective,
    sigma_hat,
    mask: IdentifiabilityMask,
    config: SolverConfig | None = None,
    direction: str = "min",
    start=None,
) -> SolveReport:
    """Minimize or maximize ``objective`` over S.

    Runs the inner solver at t = t0, t0*mu, t0*mu^2, ... with warm starts
    until ``p/t < gap_tol``. ``start`` may carry a precomputed
    :func:`interior_start` triple.
    """
    config = config or SolverConfig()
    if direction not in ("min", "max"):
        raise ValueError("direction must be 'min' or 'max'")
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    p = sigma_hat.shape[0]
    scale = matrix_scale(sigma_hat)
    sign = 1.0 if direction == "min" else -1.0
    work = objective if direction == "min" else objective.negated()
    sigma, base, perturbed = start if start is not None else interior_start(sigma_hat, mask, scale)

    t = config.t0
    outer = inner = 0
    converged = True
    trace = []
    while True:
        try:
            sigma, its = inner_solve(sigma, work, mask, t, config, scale=scale)
        except MaxInnerIterError as err:
            sigma, its = err.sigma, err.iters
            converged = False
        outer += 1
        inner += its
        trace.append(sign * (work.value(sigma) - work.constant_offset))
        if not converged or p / t < config.gap_tol:
            break
        t *= config.barrier_mu

    # identified entries come from sigma_hat bit-for-bit; with a perturbed
    # base this undoes the diagonal shift, which only moves the optimum by
    # -eps*trace(C) and keeps the reported point within eps of the cone
    sigma_star = np.where(mask.identified, sigma_hat, sigma)
    min_eig = float(np.linalg.eigvalsh(sigma_star)[0])
    return SolveReport(
        optimum=objective.value(sigma_star),
        sigma_star=CovEstimate(sigma_star, mask),
        outer_iters=outer,
        inner_iters=inner,
        converged=converged,
        min_eig_final=min_eig,
        objective_trace=trace,
        perturbed=perturbed,
    )


def _cell_bounds(cell, sigma_hat, mu_hat, dataset, design, mask, config, start):
    objective = build_objective(cell, sigma_hat, mu_hat, dataset, design)
    em_value = objective.value(sigma_hat)
    if not project_free(objective.C, mask).any():
        return BoundResult(cell.row, cell.col, em_value, em_value, em_value, fast_path=True)
    try:
        if start is None:
            start = interior_start(sigma_hat, mask)
        lo = barrier_solve(objective, sigma_hat, mask, config, "min", start)
        hi = barrier_solve(objective, sigma_hat, mask, config, "max", start)
    except CovBoundsError as err:
        log.warning("cell (%d, %d) failed: %s", cell.row + 1, cell.col + 1, err)
        return BoundResult(cell.row, cell.col, em_value, np.nan, np.nan, error=str(err))
    return BoundResult(cell.row, cell.col, em_value, lo.optimum, hi.optimum, (lo, hi))


def impute_bounds(
    cell: MissingCell,
    em_state: EmState,
    dataset: MaskedDataset,
    design: BlockDesign,
    config: SolverConfig | None = None,
    start=None,
) -> BoundResult:
    """Range of the conditional-mean imputation of ``cell`` over S.

    Cells whose objective puts no weight on a free coordinate take a fast
    path: a zero-width interval at the EM value, with no solver call.
    Solver failures are recorded on the result rather than raised.
    """
    mask = identifiability_mask(design)
    return _cell_bounds(
        cell, em_state.sigma.sigma, em_state.mu, dataset, design, mask,
        config or SolverConfig(), start,
    )


def _bounds_chunk(args):
    cells, sigma_hat, mu_hat, dataset, design, config = args
    mask = identifiability_mask(design)
    start = None
    out = []
    for cell in cells:
        if start is None and mask.n_free:
            try:
                start = interior_start(sigma_hat, mask)
            except CovBoundsError as err:
                em_value = build_objective(cell, sigma_hat, mu_hat, dataset, design).value(sigma_hat)
                out.append(BoundResult(cell.row, cell.col, em_value, np.nan, np.nan, error=str(err)))
                continue
        out.append(_cell_bounds(cell, sigma_hat, mu_hat, dataset, design, mask, config, start))
    return out


def bound_cells(
    cells,
    sigma_hat,
    mu_hat,
    dataset: MaskedDataset,
    design: BlockDesign,
    config: SolverConfig | None = None,
    jobs: int = 1,
) -> list[BoundResult]:
    """Bounds for many cells, optionally across ``jobs`` worker processes.

    Every cell is an independent computation, so results do not depend on
    ``jobs``; they are returned in the order of ``cells``.
    """
    config = config or SolverConfig()
    cells = list(cells)
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    mu_hat = np.asarray(mu_hat, dtype=float)
    if jobs <= 1 or len(cells) < 2:
        return _bounds_chunk((cells, sigma_hat, mu_hat, dataset, design, config))
    n_chunks = min(len(cells), 4 * jobs)
    chunks = [cells[i::n_chunks] for i in range(n_chunks)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(
            _bounds_chunk,
            [(c, sigma_hat, mu_hat, dataset, design, config) for c in chunks],
        ))
    results = [None] * len(cells)
    for i, part in enumerate(parts):
        results[i::n_chunks] = part
    return results


def linear_functional_bounds(
    u, sigma_hat, mask: IdentifiabilityMask, config: SolverConfig | None = None
) -> tuple[float, float]:
    """Range of the variance component ``u' Sigma u`` over S."""
    u = np.asarray(u, dtype=float)
    if not np.any(u):
        raise ValueError("u must be nonzero")
    objective = LinearObjective(np.outer(u, u))
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    if not project_free(objective.C, mask).any():
        v = objective.value(sigma_hat)
        return v, v
    start = interior_start(sigma_hat, mask)
    lo = barrier_solve(objective, sigma_hat, mask, config, "min", start)
    hi = barrier_solve(objective, sigma_hat, mask, config, "max", start)
    return lo.optimum, hi.optimum
