"""Bounds on conditional-mean imputations for block-missing Gaussian data.

EM estimates the identified part of the covariance matrix; a log-barrier
SDP then gives, for each missing cell, the exact range of its conditional
mean over every PSD matrix that fits the data equally well.
"""
__version__ = "0.1.0"

from .barrier import LinearObjective, SolverConfig, backtrack_step, inner_solve, project_free
from .data_model import (
    BlockDesign,
    CovEstimate,
    IdentifiabilityMask,
    MaskedDataset,
    MissingCell,
    build_design,
    identifiability_mask,
    missing_cells,
    validate_cov,
)
from .em_engine import EmConfig, EmState, e_step, em_fit, impute_point, m_step, max_det_completion
from .mvn_stats import (
    ConditionalLaw,
    MvnParams,
    conditional_law,
    conditional_mean,
    logdet_psd,
    min_eigenvalue,
    observed_loglik,
)
from .oracles import Interval, finite_diff_grad, grid_interval, three_by_three_interval
from .sdp_bounds import (
    BoundResult,
    SolveReport,
    barrier_solve,
    bound_cells,
    build_objective,
    impute_bounds,
    linear_functional_bounds,
)
from .simulate import SigmaSpec, SimSpec, adversarial_censor, simulate
