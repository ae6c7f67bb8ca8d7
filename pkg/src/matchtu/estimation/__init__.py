"""Estimators of the surplus parameters and their sampling uncertainty."""

from .objective import (
    ALGORITHMS,
    EstimateReport,
    FitOptions,
    gradient_F,
    hessian_F,
    objective_F,
    predicted_patterns,
    sample_frequencies,
)
from .moments import fit_hybrid_sista, fit_moment_matching, initial_alpha
from .inference import asymptotic_covariance, multinomial_covariance
from .mle import fit_mle, log_likelihood, saturated_log_likelihood
from .maxscore import QuadrupleSet, double_difference, max_score_fit, score, sphere_grid


def fit(sample, basis, opts: FitOptions | None = None, quads: QuadrupleSet | None = None) -> EstimateReport:
    """Dispatch on ``opts.algorithm``; max-score defaults to every quadruple."""
    opts = opts or FitOptions()
    if opts.algorithm == "mle":
        return fit_mle(sample, basis, opts)
    if opts.algorithm == "max-score":
        return max_score_fit(sample, basis, quads or QuadrupleSet.all(*basis.shape), opts)
    return fit_moment_matching(sample, basis, opts)
