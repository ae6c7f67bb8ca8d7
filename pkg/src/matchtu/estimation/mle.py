"""Maximum likelihood with an inner IPFP equilibrium solve."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.optimize import minimize

from ..equilibrium import SolverOptions, solve_ipfp
from ..errors import ConvergenceError, MatchingError
from ..model import BasisSystem, Margins, ParameterVector, SampleCounts, _xlogx
from .moments import fit_moment_matching
from .objective import EstimateReport, FitOptions, sample_frequencies

_INNER = SolverOptions(tol=1e-14, max_iter=100_000)


def log_likelihood(
    lam,
    sample: SampleCounts,
    basis: BasisSystem,
    margins: Margins | None = None,
    solver_opts: SolverOptions | None = None,
) -> float:
    """Multinomial log-likelihood of household counts at the equilibrium for lambda.

    ``margins`` defaults to the sample's own (frequency-scale) margins; the
    likelihood only depends on them up to scale.
    """
    if margins is None:
        margins = sample.frequencies.margins()
    sol = solve_ipfp(basis.surplus(lam), margins, solver_opts or _INNER)
    probs = sol.mu.as_vector() / sol.mu.n_households
    counts = sample.mu_hat.as_vector()
    pos = counts > 0
    if np.any(probs[pos] <= 0):
        warnings.warn("positive count in a category with zero predicted probability", RuntimeWarning,
                      stacklevel=2)
        return -np.inf
    return float(counts[pos] @ np.log(probs[pos]))


def saturated_log_likelihood(sample: SampleCounts) -> float:
    """Upper bound sum mu_hat log pi_hat, attained when the model reproduces pi_hat."""
    c = sample.mu_hat.as_vector()
    return float(_xlogx(c).sum() - c.sum() * np.log(c.sum()))


def _cluster(points, tol):
    reps = []
    for p in points:
        if not any(np.max(np.abs(p - r)) <= tol for r in reps):
            reps.append(p)
    return reps


def fit_mle(sample: SampleCounts, basis: BasisSystem, opts: FitOptions | None = None) -> EstimateReport:
    """Multi-start BFGS on -log L / N_h with central-difference gradients.

    Starts are the moment-matching estimate, zero, and ``n_starts - 2``
    seeded perturbations of the moment-matching estimate.
    """
    opts = opts or FitOptions(algorithm="mle")
    sample, pi_hat = sample_frequencies(sample, basis, opts.pseudo_count)
    margins = pi_hat.margins()
    N = sample.n_households

    mm = fit_moment_matching(sample, basis, FitOptions(tol=1e-10, with_covariance=False))
    rng = np.random.default_rng(np.random.SeedSequence(opts.seed))
    starts = [mm.lam, np.zeros(basis.K)]
    for _ in range(max(opts.n_starts - 2, 0)):
        starts.append(mm.lam + rng.normal(scale=0.5, size=basis.K) * (1 + np.abs(mm.lam)))
    starts = starts[: max(opts.n_starts, 1)]

    def negll(lam):
        try:
            return -log_likelihood(lam, sample, basis, margins) / N
        except (ConvergenceError, FloatingPointError):
            return np.inf

    results = []
    for x0 in starts:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(negll, x0, method="BFGS", jac="3-point",
                           options={"gtol": 1e-9, "maxiter": min(opts.max_iter, 2000)})
        if np.isfinite(res.fun):
            results.append(res)
    if not results:
        raise MatchingError("every MLE start failed")

    best = min(results, key=lambda r: r.fun)
    lam = best.x
    optima = _cluster([r.x for r in sorted(results, key=lambda r: r.fun)], 1e-4)
    sol = solve_ipfp(basis.surplus(lam), margins, _INNER)
    alpha = ParameterVector(lam, sol.u, sol.v)
    grad = best.jac if best.jac is not None else np.full(basis.K, np.nan)
    return EstimateReport(
        alpha_hat=alpha,
        covariance=None,
        std_errors=None,
        objective_value=-best.fun * N,
        iterations=int(sum(r.nit for r in results)),
        mu_fit=sol.mu.scaled(N / sol.mu.n_households),
        algorithm="mle",
        n_households=N,
        converged=bool(np.abs(grad).max() <= 1e-6),
        diagnostics={
            "n_starts": len(starts),
            "n_successful_starts": len(results),
            "n_local_optima": len(optima),
            "score_sup_norm": float(np.abs(grad).max()),
            "moment_matching_lambda": mm.lam.tolist(),
            "pseudo_count": sample.pseudo_count,
        },
    )
