"""Type-level equilibrium solvers for the logit model.

Both solvers minimise the convex dual

    D(u, v) = <n, u> + <m, v> + E*(Phi - u - v, -u, -v)

whose gradient is the margin excess (n - N(mu), m - M(mu)). IPFP does exact
block coordinate descent in (u, v); the gradient solver takes plain steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

from .errors import ConvergenceError, MatchingError, StepSizeError
from .model import (
    EquilibriumSolution,
    FloatArray,
    Margins,
    MatchingPatterns,
    check_phi,
    extended_entropy_star_logit,
    patterns_from_utilities,
    total_surplus,
)


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-12
    max_iter: int = 100_000
    step_size: float | None = None  # gradient solver only; None picks 1/(2 max margin)
    seed: int = 0
    record_trace: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")


def positive_root(c: FloatArray, n: FloatArray) -> FloatArray:
    """Positive root a of a^2 + c a = n, in the cancellation-free form."""
    return 2.0 * n / (c + np.sqrt(c * c + 4.0 * n))


def sweep_a(S: FloatArray, b: FloatArray, n: FloatArray) -> FloatArray:
    """Solve every a_x^2 + a_x sum_y b_y S_xy = n_x at once."""
    return positive_root(S @ b, n)


def sweep_b(S: FloatArray, a: FloatArray, m: FloatArray) -> FloatArray:
    return positive_root(S.T @ a, m)


def dual_objective(phi: ArrayLike, margins: Margins, u: ArrayLike, v: ArrayLike) -> float:
    phi = np.asarray(phi, dtype=float)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return float(
        margins.n @ u
        + margins.m @ v
        + extended_entropy_star_logit(phi - u[:, None] - v[None, :], -u, -v)
    )


def margin_residual(mu: MatchingPatterns, margins: Margins) -> float:
    return float(max(np.abs(mu.N_x - margins.n).max(), np.abs(mu.M_y - margins.m).max()))


def effective_tol(tol: float, n: FloatArray, m: FloatArray) -> float:
    """Absolute tolerance for margins up to 1, relative to the largest margin beyond."""
    return tol * max(1.0, float(n.max()), float(m.max()))


def _split_zero_margins(phi, margins):
    keep_x = margins.n > 0
    keep_y = margins.m > 0
    return keep_x, keep_y


def _reinsert(mu_sub, u_sub, v_sub, keep_x, keep_y):
    nx, ny = keep_x.size, keep_y.size
    mu = np.zeros((nx, ny))
    mu[np.ix_(keep_x, keep_y)] = mu_sub.mu
    mu_x0 = np.zeros(nx)
    mu_x0[keep_x] = mu_sub.mu_x0
    mu_0y = np.zeros(ny)
    mu_0y[keep_y] = mu_sub.mu_0y
    # Absent types carry +inf utility (exp(-u) = 0 singles).
    u = np.full(nx, np.inf)
    u[keep_x] = u_sub
    v = np.full(ny, np.inf)
    v[keep_y] = v_sub
    return MatchingPatterns(mu, mu_x0, mu_0y), u, v


def _trivial_side(phi, margins, keep_x, keep_y):
    """Everyone present is single when one side is empty."""
    mu = MatchingPatterns(np.zeros(phi.shape), margins.n.copy(), margins.m.copy())
    with np.errstate(divide="ignore"):
        u = -np.log(margins.n)
        v = -np.log(margins.m)
    return EquilibriumSolution(mu, u, v, total_surplus(mu, phi), 0, 0.0)


def _wrap(phi, margins, keep_x, keep_y, mu_sub, u_sub, v_sub, iterations, residual, converged, trace):
    if keep_x.all() and keep_y.all():
        mu, u, v = mu_sub, u_sub, v_sub
    else:
        mu, u, v = _reinsert(mu_sub, u_sub, v_sub, keep_x, keep_y)
    return EquilibriumSolution(
        mu, u, v, total_surplus(mu, phi), iterations, residual, converged, tuple(trace)
    )


def solve_ipfp(
    phi: ArrayLike,
    margins: Margins,
    opts: SolverOptions | None = None,
    init: tuple[ArrayLike, ArrayLike] | None = None,
) -> EquilibriumSolution:
    """Equilibrium matching by generalized IPFP (closed-form quadratic sweeps).

    ``init`` is a pair of starting singles masses (mu_x0, mu_0y); the default
    starts every type at half its mass single. Only the y side matters since
    the first sweep recomputes a.
    """
    opts = opts or SolverOptions()
    phi = check_phi(phi, margins.shape)
    keep_x, keep_y = _split_zero_margins(phi, margins)
    if not keep_x.any() or not keep_y.any():
        return _trivial_side(phi, margins, keep_x, keep_y)

    n = margins.n[keep_x]
    m = margins.m[keep_y]
    with np.errstate(over="ignore"):
        S = np.exp(phi[np.ix_(keep_x, keep_y)] / 2.0)
    if not np.all(np.isfinite(S)):
        raise FloatingPointError("exp(Phi/2) overflowed; rescale the surplus")

    if init is None:
        b = np.sqrt(m / 2.0)
    else:
        b = np.sqrt(np.asarray(init[1], dtype=float)[keep_y])
        if np.any(b <= 0):
            b = np.sqrt(m / 2.0)
    a = np.sqrt(n / 2.0)

    tol = effective_tol(opts.tol, n, m)
    trace = []
    residual = np.inf
    it = 0
    for it in range(1, opts.max_iter + 1):
        a = sweep_a(S, b, n)
        b = sweep_b(S, a, m)
        # after the b sweep the column margins hold up to rounding; rows carry the error
        row = a * a + a * (S @ b)
        col = b * b + b * (S.T @ a)
        residual = float(max(np.abs(row - n).max(), np.abs(col - m).max()))
        if not np.isfinite(residual):
            raise FloatingPointError("non-finite iterate in IPFP")
        if opts.record_trace:
            trace.append(dual_objective(phi[np.ix_(keep_x, keep_y)], Margins(n, m),
                                        -2 * np.log(a), -2 * np.log(b)))
        if residual <= tol:
            break

    mu_sub = MatchingPatterns(a[:, None] * b[None, :] * S, a * a, b * b)
    u_sub, v_sub = -2.0 * np.log(a), -2.0 * np.log(b)
    sol = _wrap(phi, margins, keep_x, keep_y, mu_sub, u_sub, v_sub, it, residual,
                residual <= tol, trace)
    if residual > tol:
        raise ConvergenceError(
            f"IPFP did not reach tol={opts.tol:g} in {opts.max_iter} sweeps (residual {residual:.3e})",
            result=sol, residual=residual, iterations=it,
        )
    return sol


def solve_equilibrium_gradient(
    phi: ArrayLike,
    margins: Margins,
    opts: SolverOptions | None = None,
    init: tuple[ArrayLike, ArrayLike] | None = None,
) -> EquilibriumSolution:
    """Equilibrium by gradient descent on the dual in (u, v).

    ``init`` gives starting utilities (u, v). The step starts at
    1/(2 max(n, m)). It is halved when a step would raise the dual
    objective or overflow (that step is discarded), and when the margin
    residual grows for 50 consecutive iterations. After 40 halvings the
    solver gives up with a step-size error.
    """
    opts = opts or SolverOptions(tol=1e-10)
    phi = check_phi(phi, margins.shape)
    keep_x, keep_y = _split_zero_margins(phi, margins)
    if not keep_x.any() or not keep_y.any():
        return _trivial_side(phi, margins, keep_x, keep_y)

    n = margins.n[keep_x]
    m = margins.m[keep_y]
    ph = phi[np.ix_(keep_x, keep_y)]
    sub_margins = Margins(n, m)
    if init is None:
        u = -np.log(n / 2.0)
        v = -np.log(m / 2.0)
    else:
        u = np.asarray(init[0], dtype=float)[keep_x].copy()
        v = np.asarray(init[1], dtype=float)[keep_y].copy()

    step = opts.step_size or 1.0 / (2.0 * max(n.max(), m.max()))
    halvings = 0
    growing = 0
    trace = []

    def evaluate(u, v):
        """Patterns, margin excess, residual and dual value; None if anything overflows."""
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                mu = patterns_from_utilities(ph, u, v)
        except MatchingError:
            return None
        ex, ey = mu.N_x - n, mu.M_y - m
        res = float(max(np.abs(ex).max(), np.abs(ey).max()))
        dual = float(n @ u + m @ v + 2 * mu.mu.sum() + mu.mu_x0.sum() + mu.mu_0y.sum())
        if not (np.isfinite(res) and np.isfinite(dual)):
            return None
        return mu, ex, ey, res, dual

    def halve():
        nonlocal step, halvings
        halvings += 1
        if halvings > 40:
            raise StepSizeError(
                "gradient solver keeps diverging; step size underflowed",
                residual=residual, iterations=it,
            )
        step /= 2.0

    tol = effective_tol(opts.tol, n, m)
    state = evaluate(u, v)
    if state is None:
        raise FloatingPointError("non-finite starting point for the gradient solver")
    mu, ex, ey, residual, dual = state
    it = 0
    while residual > tol and it < opts.max_iter:
        it += 1
        # dD/du = n - N(mu): descending raises u where types are over-predicted
        u_new, v_new = u + step * ex, v + step * ey
        trial = evaluate(u_new, v_new)
        if trial is None or trial[4] > dual + 1e-12 * max(1.0, abs(dual)):
            # the step overshot: the convex dual went up, so the iterate is not kept
            halve()
            growing = 0
            continue
        growing = growing + 1 if trial[3] > residual else 0
        u, v = u_new, v_new
        mu, ex, ey, residual, dual = trial
        if opts.record_trace:
            trace.append(dual)
        if growing >= 50:
            halve()
            growing = 0

    sol = _wrap(phi, margins, keep_x, keep_y, mu, u, v, it, residual, residual <= tol, trace)
    if residual > tol:
        raise ConvergenceError(
            f"gradient solver did not reach tol={opts.tol:g} in {opts.max_iter} iterations "
            f"(residual {residual:.3e})",
            result=sol, residual=residual, iterations=it,
        )
    return sol


SOLVERS = {"ipfp": solve_ipfp, "gradient": solve_equilibrium_gradient}


def solve(phi, margins, algorithm: str = "ipfp", opts: SolverOptions | None = None):
    try:
        fn = SOLVERS[algorithm]
    except KeyError:
        raise MatchingError(f"unknown equilibrium algorithm {algorithm!r}") from None
    return fn(phi, margins, opts)
