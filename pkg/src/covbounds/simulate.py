"""Synthetic block-missing data and censoring designs.

Random streams come from numpy's counter-based Philox generator keyed by
``(seed, stream, ...)``, so each part of a simulation (design, anchor row,
remaining rows, censoring) draws from its own reproducible stream.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data_model import (
    BlockDesign,
    MaskedDataset,
    build_design,
    identifiability_mask,
    validate_cov,
)
from .errors import DesignInfeasibleError, NotPSDError, SpecInfeasibleError
from .mvn_stats import MvnParams

RNG_NAME = "numpy.random.Philox"

STREAM_DESIGN = 0
STREAM_ANCHOR = 1
STREAM_ROWS = 2
STREAM_CENSOR = 3


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *stream])))


@dataclass(frozen=True)
class SigmaSpec:
    diag: float = 1.0
    identified_offdiag: float = 0.3
    free_offdiag: float = 0.56


@dataclass(frozen=True)
class SimSpec:
    """Simulation settings; defaults reproduce the 18-variable, 5-block study.

    ``sigma`` is either a :class:`SigmaSpec` (values by identifiability of
    each entry under the sampled design) or an explicit p x p matrix.
    ``censor_mode`` is ``"random_blocks"`` or ``"adversarial"``; the latter
    needs an explicit matrix because the design is chosen from the data.
    """

    n: int = 5000
    p: int = 18
    K: int = 5
    vars_per_block: int = 12
    sigma: object = field(default_factory=SigmaSpec)
    mu: tuple | None = None
    seed: int = 0
    censor_mode: str = "random_blocks"
    top_fraction: float = 0.05
    n_anchor_rows: int = 1

    def __post_init__(self):
        if min(self.n, self.p, self.K, self.vars_per_block) < 1:
            raise ValueError("n, p, K and vars_per_block must be positive")
        if self.vars_per_block > self.p:
            raise ValueError("vars_per_block exceeds p")
        if self.censor_mode not in ("random_blocks", "adversarial"):
            raise ValueError(f"unknown censor_mode {self.censor_mode!r}")
        if self.K > self.n:
            raise ValueError("more blocks than rows")
        if not 0 <= self.n_anchor_rows <= self.n:
            raise ValueError("n_anchor_rows out of range")


@dataclass(frozen=True)
class Simulation:
    dataset: MaskedDataset
    design: BlockDesign
    truth: MvnParams
    complete: np.ndarray


def partition_rows(n: int, K: int, rng: np.random.Generator) -> list[np.ndarray]:
    return [np.sort(g) for g in np.array_split(rng.permutation(n), K)]


def random_var_sets(p: int, K: int, size: int, rng: np.random.Generator, max_tries=10000):
    """K uniformly drawn variable subsets of the given size jointly covering all p variables."""
    for _ in range(max_tries):
        sets = [np.sort(rng.choice(p, size, replace=False)) for _ in range(K)]
        if np.unique(np.concatenate(sets)).size == p:
            return sets
    raise SpecInfeasibleError(f"could not cover {p} variables with {K} blocks of {size}")


def sigma_from_spec(spec: SigmaSpec, mask) -> np.ndarray:
    p = mask.p
    sigma = np.where(mask.identified, spec.identified_offdiag, spec.free_offdiag)
    sigma[np.diag_indices(p)] = spec.diag
    return sigma


def symmetric_sqrt(sigma) -> np.ndarray:
    w, V = np.linalg.eigh(sigma)
    return (V * np.sqrt(np.clip(w, 0, None))) @ V.T


def censor(values: np.ndarray, design: BlockDesign) -> MaskedDataset:
    return MaskedDataset(values, ~design.observed_mask())


def _truth(spec: SimSpec, mask) -> MvnParams:
    if isinstance(spec.sigma, SigmaSpec):
        sigma = sigma_from_spec(spec.sigma, mask)
    else:
        sigma = np.asarray(spec.sigma, dtype=float)
        if sigma.shape != (spec.p, spec.p):
            raise SpecInfeasibleError("explicit sigma has the wrong shape")
    mu = np.zeros(spec.p) if spec.mu is None else np.asarray(spec.mu, dtype=float)
    try:
        return MvnParams(mu, validate_cov(sigma, mask))
    except NotPSDError as err:
        raise SpecInfeasibleError(
            f"covariance spec is not PSD for this design (lambda_min={err.min_eigenvalue:.4g})"
        ) from err


def _sample_rows(spec: SimSpec, truth: MvnParams, realization: int) -> np.ndarray:
    root = symmetric_sqrt(truth.sigma.sigma)
    z = np.empty((spec.n, spec.p))
    a = spec.n_anchor_rows
    z[:a] = make_rng(spec.seed, STREAM_ANCHOR).standard_normal((a, spec.p))
    z[a:] = make_rng(spec.seed, STREAM_ROWS, realization).standard_normal((spec.n - a, spec.p))
    return truth.mu + z @ root


def simulate(spec: SimSpec, realization: int = 0) -> Simulation:
    """Draw a dataset, its design and the true parameters.

    The design, the truth and the first ``n_anchor_rows`` rows depend only
    on ``spec.seed``; the remaining rows also depend on ``realization``. So
    repeated realizations re-sample the data while keeping the imputation
    targets in the anchor rows fixed.
    """
    rng = make_rng(spec.seed, STREAM_DESIGN)
    if spec.censor_mode == "random_blocks":
        # variable sets first, so the same seed gives the same J_k at any n
        var_sets = random_var_sets(spec.p, spec.K, spec.vars_per_block, rng)
        rows = partition_rows(spec.n, spec.K, rng)
        design = build_design(rows, var_sets, spec.n, spec.p)
        truth = _truth(spec, identifiability_mask(design))
        complete = _sample_rows(spec, truth, realization)
    else:
        if isinstance(spec.sigma, SigmaSpec):
            raise SpecInfeasibleError("adversarial censoring needs an explicit covariance matrix")
        full_mask = build_design([range(spec.n)], [range(spec.p)], spec.n, spec.p)
        truth = _truth(spec, identifiability_mask(full_mask))
        complete = _sample_rows(spec, truth, realization)
        design = adversarial_censor(
            complete, spec.K, spec.p - spec.vars_per_block, spec.top_fraction, spec.seed
        )
        truth = MvnParams(truth.mu, validate_cov(truth.sigma.sigma, identifiability_mask(design)))
    return Simulation(censor(complete, design), design, truth, complete)


def top_correlated_pairs(values: np.ndarray, top_fraction: float) -> list[tuple[int, int]]:
    """Pairs with the largest absolute sample correlation, strongest first."""
    corr = np.corrcoef(np.asarray(values, dtype=float), rowvar=False)
    p = corr.shape[0]
    a, b = np.triu_indices(p, k=1)
    n_sel = int(round(top_fraction * a.size))
    if n_sel == 0:
        return []
    order = np.argsort(-np.abs(corr[a, b]), kind="stable")[:n_sel]
    return [(int(a[i]), int(b[i])) for i in order]


def _pick(candidates, counts, rng):
    candidates = np.asarray(candidates)
    c = counts[candidates]
    best = candidates[c == c.min()]
    return int(best[rng.integers(best.size)])


def _best_cover(pairs, budget, counts, rng, max_nodes=50000):
    """Vertex cover of ``pairs`` with at most ``budget`` variables whose
    variables have been censored least so far; None if none exists.

    Branches on the first uncovered pair (censor one endpoint or the
    other), so every cover within the budget is reachable.
    """
    best, best_key = None, None
    nodes = 0

    def search(chosen, start):
        nonlocal best, best_key, nodes
        nodes += 1
        if nodes > max_nodes:
            return
        for i in range(start, len(pairs)):
            a, b = pairs[i]
            if a not in chosen and b not in chosen:
                break
        else:
            key = (sum(counts[v] for v in chosen), rng.random())
            if best_key is None or key < best_key:
                best, best_key = set(chosen), key
            return
        if len(chosen) == budget:
            return
        ends = sorted((a, b), key=lambda v: counts[v])
        for v in ends:
            chosen.add(v)
            search(chosen, i + 1)
            chosen.discard(v)

    search(set(), 0)
    return best


def adversarial_censor(
    values,
    K: int,
    drop_per_block: int,
    top_fraction: float,
    seed: int,
    max_retries: int = 500,
) -> BlockDesign:
    """Design whose blocks never co-observe the most correlated variable pairs.

    Every block must censor at least one endpoint of each selected pair,
    i.e. its censored set is a vertex cover of the selected-pair graph.
    Blocks are built one at a time by a backtracking search over covers
    within the ``drop_per_block`` budget, keeping the cover whose variables
    have been censored least often so far (ties broken at random); the
    block is then topped up with the least-censored remaining variables.
    The construction restarts with fresh tie-breaks when some variable ends
    up censored in every block.

    Raises
    ------
    DesignInfeasibleError
        When no retry separates all selected pairs.
    """
    if isinstance(values, MaskedDataset):
        if values.missing.any():
            raise ValueError("adversarial_censor needs a fully observed dataset")
        values = values.values
    values = np.asarray(values, dtype=float)
    n, p = values.shape
    if not 0 <= drop_per_block < p:
        raise ValueError("drop_per_block must lie in [0, p)")
    selected = top_correlated_pairs(values, top_fraction)
    rng = make_rng(seed, STREAM_CENSOR)
    rows = partition_rows(n, K, rng)

    for _ in range(max_retries):
        counts = np.zeros(p, dtype=int)
        censored = []
        for _k in range(K):
            drop = _best_cover(selected, drop_per_block, counts, rng)
            if drop is None:
                raise DesignInfeasibleError(
                    f"{len(selected)} selected pairs need more than {drop_per_block} "
                    "censored variables per block"
                )
            while len(drop) < drop_per_block:
                rest = [v for v in range(p) if v not in drop]
                drop.add(_pick(rest, counts, rng))
            counts[list(drop)] += 1
            censored.append(drop)
        if np.all(counts < K):
            var_sets = [sorted(set(range(p)) - d) for d in censored]
            return build_design(rows, var_sets, n, p)
    raise DesignInfeasibleError(
        f"could not separate {len(selected)} pairs with {K} blocks censoring "
        f"{drop_per_block} each while observing every variable somewhere"
    )
