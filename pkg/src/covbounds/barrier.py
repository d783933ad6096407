"""Projected generalized gradient descent for log-barrier problems over S.

The inner problem is

    minimize  -(1/t) log|Sigma| + C o Sigma

over symmetric Sigma whose identified coordinates are held fixed, where
``A o B`` is the Frobenius inner product. Only the free coordinates move.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data_model import IdentifiabilityMask
from .errors import MaxInnerIterError, StepUnderflowError

MIN_STEP = 1e-16
ROUNDOFF = 8 * np.finfo(float).eps


@dataclass(frozen=True)
class LinearObjective:
    """Affine functional ``C o Sigma + constant_offset`` with symmetric C."""

    C: np.ndarray
    constant_offset: float = 0.0

    def __post_init__(self):
        C = np.array(self.C, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ValueError("C must be square")
        if not np.array_equal(C, C.T):
            raise ValueError("C must be symmetric")
        C.setflags(write=False)
        object.__setattr__(self, "C", C)

    def value(self, sigma) -> float:
        return float(np.sum(self.C * sigma)) + self.constant_offset

    def negated(self) -> "LinearObjective":
        return LinearObjective(-self.C, -self.constant_offset)


@dataclass(frozen=True)
class SolverConfig:
    t0: float = 1.0
    barrier_mu: float = 10.0
    gap_tol: float = 1e-7
    inner_eps: float = 1e-8
    l_max: int = 10000
    backtrack_shrink: float = 0.8
    delta_init: float = 1 / 0.8
    max_inner_iter: int = 50000
    accelerated: bool = True
    adaptive_restart: bool = True

    def __post_init__(self):
        if not self.barrier_mu > 1:
            raise ValueError("barrier_mu must exceed 1")
        if not 0 < self.backtrack_shrink < 1:
            raise ValueError("backtrack_shrink must lie in (0, 1)")
        for name in ("t0", "gap_tol", "inner_eps", "delta_init"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.l_max < 1 or self.max_inner_iter < 1:
            raise ValueError("l_max and max_inner_iter must be >= 1")

    def with_(self, **kw) -> "SolverConfig":
        return replace(self, **kw)


def momentum_weight(ell: int) -> float:
    return ell / (ell + 3)


def project_free(G, mask: IdentifiabilityMask) -> np.ndarray:
    """Zero ``G`` on identified coordinates (the diagonal included)."""
    out = np.where(mask.identified, 0.0, np.asarray(G, dtype=float))
    return (out + out.T) / 2


def matrix_scale(sigma) -> float:
    return max(float(np.max(np.abs(sigma))), np.finfo(float).tiny)


def barrier_value(sigma, objective: LinearObjective, t: float) -> float:
    """``-(1/t) log|Sigma| + C o Sigma``; +inf outside the open PSD cone."""
    w = np.linalg.eigvalsh(sigma)
    if w[0] <= 0:
        return np.inf
    return -np.sum(np.log(w)) / t + float(np.sum(objective.C * sigma))


def _inverse_from_eig(w, V):
    inv = (V / w) @ V.T
    return (inv + inv.T) / 2


def barrier_gradient(
    sigma, objective: LinearObjective, mask: IdentifiabilityMask, t: float, eig=None
) -> np.ndarray:
    """Matrix gradient ``-(1/t) Sigma^-1 + C`` projected onto the free coordinates."""
    w, V = eig if eig is not None else np.linalg.eigh(sigma)
    return project_free(-_inverse_from_eig(w, V) / t + objective.C, mask)


def free_pair_gradient(sigma, objective, mask, t, eig=None) -> np.ndarray:
    """Derivative with respect to each free pair moved jointly at (a,b) and (b,a).

    Equals twice the matrix gradient; stored symmetrically.
    """
    return 2.0 * barrier_gradient(sigma, objective, mask, t, eig)


def _candidates(config: SolverConfig) -> np.ndarray:
    # delta_init*shrink, delta_init*shrink^2, ... down to MIN_STEP, in the
    # same floating-point sequence as the one-at-a-time loop
    out = []
    d = config.delta_init
    while True:
        d *= config.backtrack_shrink
        if d < MIN_STEP:
            return np.array(out)
        out.append(d)


def _f_magnitude(w, t, C, sigma) -> float:
    return float(np.sum(np.abs(np.log(w)))) / t + abs(float(np.sum(C * sigma)))


def _step_search(w, V, G, t, C, config: SolverConfig, deltas=None, f_mag=0.0) -> tuple[float, float]:
    # Sigma - d*G = Sigma^{1/2} (I - d*M) Sigma^{1/2} with M = Sigma^{-1/2} G Sigma^{-1/2},
    # so the eigenvalues of M give the PSD test and log|Sigma_test| for every
    # candidate d without another decomposition.
    if deltas is None:
        deltas = _candidates(config)
    g2 = float(np.sum(G * G))
    if g2 == 0.0:
        return float(deltas[0]), 0.0
    r = 1.0 / np.sqrt(w)
    M = (V.T @ G @ V) * np.outer(r, r)
    m = np.linalg.eigvalsh((M + M.T) / 2)
    cg = float(np.sum(C * G))
    d = deltas[1.0 - deltas * m[-1] > 0.0]
    if d.size == 0:
        raise StepUnderflowError(f"step size fell below {MIN_STEP:g}")
    # f_obj - f(Sigma) and f_maj - f(Sigma), with D = Sigma_test - Sigma = -delta*G:
    # G o D = -delta*|G|^2 and (D o D)/(2 delta) = delta*|G|^2 / 2.
    f_obj_diff = -np.log1p(-np.outer(d, m)).sum(axis=1) / t - d * cg
    f_maj_diff = -d * g2 + 0.5 * d * g2
    ok = np.flatnonzero(f_obj_diff <= f_maj_diff)
    if ok.size:
        i = ok[0]
    elif d[0] * g2 <= ROUNDOFF * f_mag:
        # G is rounding residue at a stationary point: no decrease is
        # measurable, so take the smallest step and let the stopping rule fire
        i = d.size - 1
    else:
        raise StepUnderflowError(f"step size fell below {MIN_STEP:g}")
    return float(d[i]), float(f_obj_diff[i])


def backtrack_step(sigma, G, t: float, objective: LinearObjective, config=None) -> float:
    """Largest step in ``{1, 0.8, 0.64, ...}`` keeping ``Sigma - delta*G`` PSD
    and under the quadratic majorizer of the barrier objective."""
    config = config or SolverConfig()
    w, V = np.linalg.eigh(sigma)
    if w[0] <= 0:
        raise ValueError("sigma must be strictly positive definite")
    f_mag = _f_magnitude(w, t, objective.C, sigma)
    return _step_search(w, V, np.asarray(G, dtype=float), t, objective.C, config, f_mag=f_mag)[0]


def majorization_holds(sigma, G, delta, t, objective) -> bool:
    """Check both acceptance conditions literally: lambda_min >= 0 and f_obj <= f_maj."""
    test = sigma - delta * G
    if np.linalg.eigvalsh(test)[0] < 0:
        return False
    d = test - sigma
    f_obj = barrier_value(test, objective, t)
    f_maj = (
        barrier_value(sigma, objective, t)
        + float(np.sum(G * d))
        + float(np.sum(d * d)) / (2 * delta)
    )
    slack = 1e-12 * max(1.0, abs(f_maj))
    return bool(f_obj <= f_maj + slack)


def _extrapolation_floor(sigma) -> float:
    return 1e-12 * float(np.trace(sigma)) / sigma.shape[0]


def inner_solve(
    sigma_start,
    objective: LinearObjective,
    mask: IdentifiabilityMask,
    t: float,
    config: SolverConfig | None = None,
    scale: float | None = None,
    step_log: list | None = None,
):
    """Minimize the barrier objective at fixed ``t`` from a strictly PSD start.

    Accelerated steps extrapolate the last two gradient-step points with
    weight ``l/(l+3)``, restarting ``l`` every ``l_max`` iterations. The
    momentum also restarts, from the plain gradient-step point, when the
    objective goes up (``adaptive_restart``) or when the extrapolated point
    comes too close to the cone boundary.

    Returns ``(sigma, inner_iters)``. Stops when successive iterates differ
    by less than ``inner_eps * scale`` in max-norm. When ``step_log`` is a
    list, every ``(point, G, delta)`` step is appended to it.
    """
    config = config or SolverConfig()
    sigma_start = np.array(sigma_start, dtype=float)
    if scale is None:
        scale = matrix_scale(sigma_start)
    eps = config.inner_eps * scale
    C = objective.C
    deltas = _candidates(config)

    if not mask.free.any():
        return sigma_start, 1

    y = sigma_start
    w, V = np.linalg.eigh(y)
    if w[0] <= 0:
        raise ValueError("inner_solve needs a strictly positive definite start")
    x_prev = y
    f_prev = np.inf
    ell = 1
    for it in range(1, config.max_inner_iter + 1):
        G = project_free(-_inverse_from_eig(w, V) / t + C, mask)
        log_w = np.log(w)
        c_y = float(np.sum(C * y))
        f_mag = float(np.sum(np.abs(log_w))) / t + abs(c_y)
        delta, f_diff = _step_search(w, V, G, t, C, config, deltas, f_mag)
        if step_log is not None:
            step_log.append((y, G, delta))
        x_new = y - delta * G
        restart = False
        if config.accelerated:
            f_new = -float(np.sum(log_w)) / t + c_y + f_diff
            restart = config.adaptive_restart and f_new > f_prev
            f_prev = f_new
            if not restart:
                y_new = x_new + momentum_weight(ell) * (x_new - x_prev)
                w_new, V_new = np.linalg.eigh(y_new)
                restart = w_new[0] < _extrapolation_floor(y_new)
        if restart or not config.accelerated:
            y_new = x_new
            w_new, V_new = np.linalg.eigh(y_new)
            ell = 0
        x_prev = x_new
        ell += 1
        if ell > config.l_max:
            ell = 1
        change = float(np.max(np.abs(y_new - y)))
        y, w, V = y_new, w_new, V_new
        if change < eps:
            return x_new, it
    err = MaxInnerIterError(f"inner loop hit {config.max_inner_iter} iterations at t={t:g}")
    err.sigma = x_prev
    err.iters = config.max_inner_iter
    raise err
