"""Equilibrium, identification and estimation for separable TU matching markets (logit)."""

from .errors import (
    ConvergenceError,
    DimensionError,
    DuplicateCellError,
    InputError,
    MatchingError,
    NegativeMassError,
    RankDeficientBasisError,
    SingularHessianError,
    SizeCapError,
    StepSizeError,
    ZeroCellError,
)
from .model import (
    BasisSystem,
    EquilibriumSolution,
    Margins,
    MatchingPatterns,
    ParameterVector,
    SampleCounts,
    TypeSpace,
    entropy_logit,
    extended_entropy_star_logit,
    logit_emax,
    matching_function_logit,
    surplus_from_basis,
    total_surplus,
)
from .equilibrium import SolverOptions, solve, solve_equilibrium_gradient, solve_ipfp
from .micro import MicroMarket, MicroSolution, micro_stable_matching, separable_matching
from .identification import choo_siow, double_log_odds, gaussian_bilinear_rho, split_utilities_logit
from .estimation import (
    EstimateReport,
    FitOptions,
    QuadrupleSet,
    asymptotic_covariance,
    double_difference,
    fit,
    fit_hybrid_sista,
    fit_mle,
    fit_moment_matching,
    gradient_F,
    log_likelihood,
    max_score_fit,
    objective_F,
)
from .simulation import SimConfig, sample_households, simulate_micro_market

__version__ = "0.1.0"
