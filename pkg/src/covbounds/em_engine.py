"""EM for block-missing Gaussian data, and the maximum-determinant completion."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .barrier import LinearObjective, SolverConfig, inner_solve, matrix_scale
from .data_model import (
    BlockDesign,
    CovEstimate,
    IdentifiabilityMask,
    MaskedDataset,
    check_consistency,
    identifiability_mask,
    validate_cov,
)
from .errors import (
    InfeasibleCompletionError,
    LikelihoodDecreaseError,
    MaxInnerIterError,
    MaxIterWarning,
    StepUnderflowError,
)
from .mvn_stats import MvnParams, conditional_law, observed_loglik

log = logging.getLogger(__name__)

COMPLETION_CONFIG = SolverConfig(inner_eps=1e-14, max_inner_iter=200000)
INTERIOR_TOL = 1e-10
_HOMOTOPY_STAGES = 200
_STAGE_CONFIG = SolverConfig(inner_eps=1e-6, max_inner_iter=300)


def _ascend_logdet(start, mask, config, scale):
    zero = LinearObjective(np.zeros_like(start))
    try:
        sigma, _ = inner_solve(start, zero, mask, 1.0, config, scale=scale)
    except MaxInnerIterError as err:
        sigma = err.sigma
    except StepUnderflowError as err:
        # only happens pinned against the cone boundary
        raise InfeasibleCompletionError(f"log-det ascent stalled at the boundary: {err}") from err
    return sigma


def _interior_point(base: np.ndarray, mask: IdentifiabilityMask, scale: float) -> np.ndarray:
    """A strictly positive definite matrix agreeing with ``base`` on the mask.

    Starts from ``base + tau*I`` (free entries zero) and walks tau down to 0,
    each time re-centring by log-det ascent and then removing half of the
    smallest eigenvalue from the diagonal shift.
    """
    x = base.copy()
    lam = np.linalg.eigvalsh(x)[0]
    if lam > 1e-3 * scale:
        return x
    tau = max(0.0, -lam) + 0.1 * scale
    y = x + tau * np.eye(len(x))
    for _ in range(_HOMOTOPY_STAGES):
        y = _ascend_logdet(y, mask, _STAGE_CONFIG, scale)
        m = np.linalg.eigvalsh(y)[0]
        if tau == 0.0:
            if m > INTERIOR_TOL * scale:
                return y
            break
        if m <= INTERIOR_TOL * scale:
            break
        shift = min(tau, 0.5 * m)
        tau -= shift
        if tau < 1e-15 * scale:
            shift += tau
            tau = 0.0
        y = y - shift * np.eye(len(y))
        # restore exact fixed entries after the floating shift
        y = np.where(mask.identified, base + tau * np.eye(len(y)), y)
    raise InfeasibleCompletionError(
        "no strictly positive definite completion of the identified entries"
    )


def max_det_completion(
    partial, mask: IdentifiabilityMask, config: SolverConfig | None = None
) -> CovEstimate:
    """Completion of the identified entries of ``partial`` maximizing log|Sigma|.

    Entries of ``partial`` on free pairs are ignored (they may be NaN). The
    result has a zero inverse on every free pair, i.e. zero partial
    correlation for every pair that is never observed together.

    Raises
    ------
    InfeasibleCompletionError
        If the identified entries admit no strictly positive definite completion.
    """
    partial = np.asarray(partial, dtype=float)
    base = np.where(mask.identified, partial, 0.0)
    base = (base + base.T) / 2
    if not np.all(np.isfinite(base)):
        raise ValueError("identified entries must be finite")
    if mask.n_free == 0:
        return validate_cov(base, mask)
    scale = matrix_scale(base)
    start = _interior_point(base, mask, scale)
    sigma = _ascend_logdet(start, mask, config or COMPLETION_CONFIG, scale)
    sigma = np.where(mask.identified, base, sigma)
    if np.linalg.eigvalsh(sigma)[0] <= INTERIOR_TOL * scale:
        raise InfeasibleCompletionError("completion collapsed onto the cone boundary")
    return validate_cov(sigma, mask)


@dataclass(frozen=True)
class EmConfig:
    """EM settings.

    ``init`` is ``"max_det_completion"`` (pairwise moments completed by
    max-det) or ``"user_supplied"``, in which case ``init_sigma`` (and
    optionally ``init_mu``) must be given.
    """

    tol: float = 1e-6
    max_iter: int = 500
    init: str = "max_det_completion"
    init_mu: np.ndarray | None = None
    init_sigma: np.ndarray | None = None
    loglik_slack: float = 1e-8

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.init not in ("max_det_completion", "user_supplied"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.init == "user_supplied" and self.init_sigma is None:
            raise ValueError("user_supplied init requires init_sigma")


@dataclass
class EmState:
    imputed: np.ndarray
    mu: np.ndarray
    sigma: CovEstimate
    iteration: int
    loglik_trace: list = field(default_factory=list)
    converged: bool = False

    @property
    def params(self) -> MvnParams:
        return MvnParams(self.mu, self.sigma)


def pairwise_moments(dataset: MaskedDataset, design: BlockDesign):
    """Per-variable observed means and pairwise-complete covariances on the mask."""
    x = dataset.values
    obs = ~dataset.missing
    counts = obs.sum(axis=0)
    mu = np.where(obs, x, 0.0).sum(axis=0) / counts
    xc = np.where(obs, x - mu, 0.0)
    o = obs.astype(float)
    pair_counts = o.T @ o
    mask = identifiability_mask(design)
    with np.errstate(invalid="ignore", divide="ignore"):
        sigma = (xc.T @ xc) / pair_counts
    sigma = np.where(mask.identified, sigma, 0.0)
    return mu, (sigma + sigma.T) / 2


def initial_params(dataset, design, config: EmConfig) -> MvnParams:
    mask = identifiability_mask(design)
    if config.init == "user_supplied":
        mu = config.init_mu
        if mu is None:
            mu, _ = pairwise_moments(dataset, design)
        return MvnParams(np.asarray(mu, dtype=float), validate_cov(config.init_sigma, mask))
    mu, partial = pairwise_moments(dataset, design)
    return MvnParams(mu, max_det_completion(partial, mask))


def e_step(state: EmState, dataset: MaskedDataset, design: BlockDesign):
    """Impute missing cells by conditional means under the state's parameters.

    Returns the imputed matrix and a dict mapping block index to
    ``(missing_cols, cond_cov)`` for blocks that have missing columns.
    """
    imputed = dataset.values.copy()
    cache = {}
    params = state.params
    all_cols = np.arange(design.p)
    for k in range(design.K):
        given = design.block_vars(k)
        target = np.setdiff1d(all_cols, given)
        if target.size == 0:
            continue
        rows = design.block_rows(k)
        law = conditional_law(params, target, given, block=k + 1)
        xg = dataset.values[np.ix_(rows, given)] - state.mu[given]
        imputed[np.ix_(rows, target)] = state.mu[target] + xg @ law.coef.T
        cache[k] = (target, law.cond_cov)
    return imputed, cache


def m_step(imputed: np.ndarray, cache: dict, design: BlockDesign):
    """Means and 1/n covariances of the imputed data plus the conditional-covariance correction."""
    n = imputed.shape[0]
    mu = imputed.mean(axis=0)
    xc = imputed - mu
    sigma = xc.T @ xc
    for k in sorted(cache):
        target, cond_cov = cache[k]
        sigma[np.ix_(target, target)] += len(design.groups[k].rows) * cond_cov
    sigma /= n
    return mu, (sigma + sigma.T) / 2


def em_fit(
    dataset: MaskedDataset, design: BlockDesign, config: EmConfig | None = None
) -> EmState:
    """Run EM until the largest parameter change drops below ``config.tol``.

    Warns with MaxIterWarning and returns the last state (``converged`` False)
    when ``max_iter`` is reached. Raises LikelihoodDecreaseError when the
    observed log-likelihood drops by more than ``loglik_slack``.
    """
    config = config or EmConfig()
    check_consistency(dataset, design)
    mask = identifiability_mask(design)
    params = initial_params(dataset, design, config)
    state = EmState(
        imputed=dataset.values.copy(),
        mu=np.array(params.mu),
        sigma=params.sigma,
        iteration=0,
        loglik_trace=[observed_loglik(dataset, design, params)],
    )
    for it in range(1, config.max_iter + 1):
        imputed, cache = e_step(state, dataset, design)
        mu, sigma = m_step(imputed, cache, design)
        new_sigma = validate_cov(sigma, mask)
        ll = observed_loglik(dataset, design, MvnParams(mu, new_sigma))
        if ll < state.loglik_trace[-1] - config.loglik_slack:
            raise LikelihoodDecreaseError(
                f"observed log-likelihood fell from {state.loglik_trace[-1]!r} "
                f"to {ll!r} at iteration {it}"
            )
        change = max(
            float(np.max(np.abs(mu - state.mu))),
            float(np.max(np.abs(new_sigma.sigma - state.sigma.sigma))),
        )
        state = EmState(imputed, mu, new_sigma, it, state.loglik_trace + [ll])
        if change < config.tol:
            state.converged = True
            log.debug("EM converged after %d iterations", it)
            return state
    warnings.warn(
        f"EM stopped at max_iter={config.max_iter} without converging", MaxIterWarning
    )
    return state


def impute_point(state: EmState, dataset: MaskedDataset, design: BlockDesign):
    """Conditional-mean imputations ``(row, col, value)`` under the fitted parameters."""
    imputed, _ = e_step(state, dataset, design)
    rows, cols = np.nonzero(dataset.missing)
    return [(int(i), int(j), float(imputed[i, j])) for i, j in zip(rows, cols)]
