"""Gaussian computations shared by the EM fit and the bounds solver.

All inversions go through a symmetric eigendecomposition, which also gives
log-determinants and minimum eigenvalues for free.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data_model import BlockDesign, CovEstimate, MaskedDataset, validate_cov
from .errors import NotSymmetricError, SingularBlockError

LOG_2PI = float(np.log(2 * np.pi))
MAX_CONDITION = 1e12
SYMMETRY_TOL = 1e-10
EIG_CLIP = 1e-300


@dataclass(frozen=True)
class MvnParams:
    mu: np.ndarray
    sigma: CovEstimate

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        if mu.shape != (self.sigma.sigma.shape[0],):
            raise ValueError("mu and sigma dimensions disagree")
        mu = mu.copy()
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    @classmethod
    def from_arrays(cls, mu, sigma, mask=None) -> "MvnParams":
        return cls(np.asarray(mu, dtype=float), validate_cov(sigma, mask))


@dataclass(frozen=True)
class ConditionalLaw:
    """Law of x[target] given x[given]: coef maps (x_given - mu_given) to the mean shift."""

    target_cols: np.ndarray
    given_cols: np.ndarray
    coef: np.ndarray
    cond_cov: np.ndarray


def _check_symmetric(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    scale = max(float(np.max(np.abs(a))), np.finfo(float).tiny)
    if np.max(np.abs(a - a.T)) > SYMMETRY_TOL * scale:
        raise NotSymmetricError("matrix asymmetry exceeds 1e-10 relative")
    return (a + a.T) / 2


def sym_eig(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix (ascending eigenvalues)."""
    return np.linalg.eigh(_check_symmetric(a))


def logdet_psd(a) -> float:
    w = np.linalg.eigvalsh(_check_symmetric(a))
    return float(np.sum(np.log(np.clip(w, EIG_CLIP, None))))


def min_eigenvalue(a) -> float:
    return float(np.linalg.eigvalsh(_check_symmetric(a))[0])


def sym_inverse(a, block=None) -> tuple[np.ndarray, float]:
    """Inverse and log-determinant of a well-conditioned SPD matrix.

    Raises SingularBlockError (tagged with ``block``) when the condition
    number exceeds 1e12 or an eigenvalue is not positive.
    """
    w, v = np.linalg.eigh(_check_symmetric(a))
    if w[0] <= 0 or w[-1] / w[0] > MAX_CONDITION:
        cond = np.inf if w[0] <= 0 else w[-1] / w[0]
        raise SingularBlockError(block, cond)
    inv = (v / w) @ v.T
    return (inv + inv.T) / 2, float(np.sum(np.log(w)))


def _block_loglik(xc: np.ndarray, sigma_jj: np.ndarray, block) -> float:
    inv, logdet = sym_inverse(sigma_jj, block)
    m, q = xc.shape
    quad = float(np.sum((xc @ inv) * xc))
    return -0.5 * m * (q * LOG_2PI + logdet) - 0.5 * quad


def observed_loglik(
    dataset: MaskedDataset, design: BlockDesign, params: MvnParams
) -> float:
    """Sum over blocks of the marginal Gaussian log-densities of observed coordinates."""
    sigma = params.sigma.sigma
    total = 0.0
    for k in range(design.K):
        rows = design.block_rows(k)
        cols = design.block_vars(k)
        xc = dataset.values[np.ix_(rows, cols)] - params.mu[cols]
        total += _block_loglik(xc, sigma[np.ix_(cols, cols)], k + 1)
    return total


def conditional_law(
    params: MvnParams, target_cols: Sequence[int], given_cols: Sequence[int], block=None
) -> ConditionalLaw:
    target = np.asarray(target_cols, dtype=int)
    given = np.asarray(given_cols, dtype=int)
    if given.size == 0:
        raise ValueError("given_cols must be nonempty")
    if np.intersect1d(target, given).size:
        raise ValueError("target and given columns overlap")
    sigma = params.sigma.sigma
    inv, _ = sym_inverse(sigma[np.ix_(given, given)], block)
    s_tg = sigma[np.ix_(target, given)]
    coef = s_tg @ inv
    cond_cov = sigma[np.ix_(target, target)] - coef @ s_tg.T
    cond_cov = (cond_cov + cond_cov.T) / 2
    return ConditionalLaw(target, given, coef, cond_cov)


def conditional_mean(law: ConditionalLaw, mu, x_given, target=None):
    """Conditional expectation of one target column (or all of them when ``target`` is None).

    ``x_given`` may be a single row or a 2-d array of rows.
    """
    mu = np.asarray(mu, dtype=float)
    shift = (np.asarray(x_given, dtype=float) - mu[law.given_cols]) @ law.coef.T
    means = mu[law.target_cols] + shift
    if target is None:
        return means
    pos = np.flatnonzero(law.target_cols == target)
    if pos.size != 1:
        raise ValueError(f"column {target} is not a target of this law")
    return float(means[..., pos[0]]) if np.ndim(means) == 1 else means[..., pos[0]]
