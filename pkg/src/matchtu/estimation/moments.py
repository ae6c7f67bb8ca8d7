"""Moment-matching estimators: minimise F by gradient descent or by the hybrid
coordinate/gradient scheme (closed-form a, b sweeps plus a lambda step)."""

from __future__ import annotations

import logging

import numpy as np

from ..equilibrium import sweep_a, sweep_b
from ..errors import ConvergenceError, SingularHessianError
from ..model import BasisSystem, MatchingPatterns, ParameterVector, SampleCounts, surplus_from_basis
from .inference import asymptotic_covariance
from .objective import (
    EstimateReport,
    FitOptions,
    gradient_F,
    objective_F,
    predicted_patterns,
    sample_frequencies,
)

log = logging.getLogger(__name__)


def initial_alpha(pi_hat: MatchingPatterns, K: int) -> ParameterVector:
    """lambda = 0 with u, v reproducing the observed singles."""
    return ParameterVector(np.zeros(K), -np.log(pi_hat.mu_x0), -np.log(pi_hat.mu_0y))


def _finish(alpha, sample, pi_hat, basis, opts, iterations, trace, converged, algorithm, extra=None):
    mu_freq = predicted_patterns(alpha, basis)
    diagnostics = {
        "gradient_sup_norm": float(np.abs(gradient_F(alpha, pi_hat, basis)).max()),
        "moment_residuals": (basis.design @ (mu_freq.mu - pi_hat.mu).ravel()).tolist(),
        "negative_utilities": bool(np.any(alpha.u < 0) or np.any(alpha.v < 0)),
        "pseudo_count": sample.pseudo_count,
    }
    if extra:
        diagnostics.update(extra)
    cov = se = None
    if opts.with_covariance:
        try:
            cov, se = asymptotic_covariance(alpha, sample, basis, pi_hat)
        except SingularHessianError as exc:
            diagnostics["covariance_error"] = str(exc)
    return EstimateReport(
        alpha_hat=alpha,
        covariance=cov,
        std_errors=se,
        objective_value=objective_F(alpha, pi_hat, basis),
        iterations=iterations,
        mu_fit=mu_freq.scaled(sample.n_households),
        algorithm=algorithm,
        n_households=sample.n_households,
        converged=converged,
        trace=tuple(trace),
        diagnostics=diagnostics,
    )


def fit_moment_matching(
    sample: SampleCounts,
    basis: BasisSystem,
    opts: FitOptions | None = None,
    init: ParameterVector | None = None,
) -> EstimateReport:
    """Minimise F by gradient descent.

    Steps start from a Barzilai-Borwein guess and are backtracked until a
    non-monotone Armijo condition holds against the worst of the last ten
    values of F. Once the required decrease falls below rounding in F, a
    step is accepted when it shrinks the gradient instead. Stops when the
    sup-norm of the gradient is at most ``opts.tol``.
    """
    opts = opts or FitOptions()
    if opts.algorithm == "coordinate-hybrid":
        return fit_hybrid_sista(sample, basis, opts, init)
    sample, pi_hat = sample_frequencies(sample, basis, opts.pseudo_count)
    K, (nx, ny) = basis.K, basis.shape
    alpha = init or initial_alpha(pi_hat, K)
    x = alpha.as_vector()

    def f(vec):
        return objective_F(ParameterVector.from_vector(vec, K, nx, ny), pi_hat, basis)

    def grad(vec):
        return gradient_F(ParameterVector.from_vector(vec, K, nx, ny), pi_hat, basis)

    fx, g = f(x), grad(x)
    step = opts.step_size or 1.0
    trace = [fx]
    it = 0
    converged = bool(np.abs(g).max() <= opts.tol)
    x_prev = g_prev = None
    while not converged and it < opts.max_iter:
        it += 1
        if x_prev is not None and opts.step_size is None:
            s, y = x - x_prev, g - g_prev
            sy = s @ y
            step = (s @ s) / sy if sy > 0 else step * 2.0
        gg = g @ g
        # reference value over the last few iterates (non-monotone Armijo)
        f_ref = max(trace[-10:])
        g_new = None
        while True:
            x_new = x - step * g
            with np.errstate(over="ignore", invalid="ignore"):
                f_new = f(x_new)
            if np.isfinite(f_new):
                if f_new <= f_ref - 1e-4 * step * gg:
                    break
                if 1e-4 * step * gg <= 1e-13 * max(1.0, abs(fx)):
                    # the required decrease is below rounding in F: fall back
                    # on the gradient norm, which is still resolvable
                    g_new = grad(x_new)
                    if np.isfinite(g_new).all() and g_new @ g_new < gg:
                        break
                    g_new = None
            step *= 0.5
            if step < 1e-20:
                break
        if step < 1e-20:
            # no further decrease is representable; F is flat to rounding here
            break
        x_prev, g_prev = x, g
        x, fx = x_new, f_new
        g = grad(x) if g_new is None else g_new
        trace.append(fx)
        converged = bool(np.abs(g).max() <= opts.tol)

    alpha = ParameterVector.from_vector(x, K, nx, ny)
    report = _finish(alpha, sample, pi_hat, basis, opts, it, trace, converged, "gradient")
    if not converged:
        raise ConvergenceError(
            f"moment matching stopped after {it} iterations with gradient "
            f"{np.abs(g).max():.3e} > tol {opts.tol:g}",
            result=report, residual=float(np.abs(g).max()), iterations=it,
        )
    return report


def hybrid_lambda_step(pi_hat: MatchingPatterns, basis: BasisSystem) -> float:
    """1 / largest eigenvalue of the data-weighted lambda curvature sum pi phi phi'."""
    D = basis.design
    M = (D * pi_hat.mu.ravel()) @ D.T
    return 1.0 / float(np.linalg.eigvalsh(M).max())


def fit_hybrid_sista(
    sample: SampleCounts,
    basis: BasisSystem,
    opts: FitOptions | None = None,
    init: ParameterVector | None = None,
) -> EstimateReport:
    """Alternate exact a-sweep, exact b-sweep and one gradient step on lambda.

    With a = exp(-u), b = exp(-v) and S = exp(Phi^lambda / 2), the sweeps
    solve a^2 + a (S b) = n_hat and b^2 + b (S'a) = m_hat in closed form.
    A zero ``step_size`` freezes lambda and leaves plain IPFP.
    """
    opts = opts or FitOptions(algorithm="coordinate-hybrid")
    sample, pi_hat = sample_frequencies(sample, basis, opts.pseudo_count)
    K = basis.K
    n_hat, m_hat = pi_hat.N_x, pi_hat.M_y
    D = basis.design
    if init is None:
        lam = np.zeros(K)
        b = np.sqrt(pi_hat.mu_0y)
    else:
        lam = init.lam.copy()
        b = np.exp(-init.v / 2)
    eps = hybrid_lambda_step(pi_hat, basis) if opts.step_size is None else opts.step_size

    trace = []
    it = 0
    converged = False
    grad_norm = np.inf
    while it < opts.max_iter:
        it += 1
        S = np.exp(surplus_from_basis(lam, basis) / 2)
        a = sweep_a(S, b, n_hat)
        b = sweep_b(S, a, m_hat)
        mu_xy = a[:, None] * b[None, :] * S
        g_lam = D @ (mu_xy - pi_hat.mu).ravel()
        # v-block of the gradient is zero right after the b sweep
        g_u = n_hat - (a * a + mu_xy.sum(axis=1))
        grad_norm = float(max(np.abs(g_lam).max() if eps > 0 else 0.0, np.abs(g_u).max()))
        if grad_norm <= opts.tol:
            converged = True
            break
        lam = lam - eps * g_lam
        if it % 100 == 0:
            trace.append(grad_norm)

    alpha = ParameterVector(lam, -2 * np.log(a), -2 * np.log(b))
    report = _finish(alpha, sample, pi_hat, basis, opts, it, trace, converged, "coordinate-hybrid",
                     {"lambda_step": eps})
    if not converged:
        raise ConvergenceError(
            f"hybrid scheme stopped after {it} iterations with gradient {grad_norm:.3e}",
            result=report, residual=grad_norm, iterations=it,
        )
    return report
