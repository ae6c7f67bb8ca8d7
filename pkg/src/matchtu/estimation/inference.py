"""Sandwich covariance of the moment-matching estimator."""

from __future__ import annotations

import numpy as np

from ..errors import SingularHessianError
from ..model import BasisSystem, FloatArray, MatchingPatterns, ParameterVector, SampleCounts
from .objective import hessian_F


def multinomial_covariance(pi: MatchingPatterns) -> FloatArray:
    """diag(pi) - pi pi' over all categories (couples, x singles, y singles)."""
    p = pi.as_vector()
    p = p / p.sum()
    return np.diag(p) - np.outer(p, p)


def cross_derivative(basis: BasisSystem) -> FloatArray:
    """d(grad_alpha F)/d(pi): rows alpha = (lambda, u, v), columns pi categories."""
    K = basis.K
    nx, ny = basis.shape
    C = np.zeros((K + nx + ny, nx * ny + nx + ny))
    couples = slice(0, nx * ny)
    C[:K, couples] = -basis.design
    # u_x picks up every couple in row x and the x singles
    C[K : K + nx, couples] = np.kron(np.eye(nx), np.ones((1, ny)))
    C[K : K + nx, nx * ny : nx * ny + nx] = np.eye(nx)
    C[K + nx :, couples] = np.kron(np.ones((1, nx)), np.eye(ny))
    C[K + nx :, nx * ny + nx :] = np.eye(ny)
    return C


def asymptotic_covariance(
    alpha_hat: ParameterVector,
    sample: SampleCounts,
    basis: BasisSystem,
    pi_hat: MatchingPatterns | None = None,
) -> tuple[FloatArray, FloatArray]:
    """Return (V_alpha, standard errors) with se = sqrt(diag(V_alpha) / N_h).

    ``pi_hat`` overrides the sample frequencies (e.g. after smoothing).
    """
    if pi_hat is None:
        pi_hat = sample.frequencies
    H = hessian_F(alpha_hat, basis)
    if not np.all(np.isfinite(H)) or np.linalg.cond(H) > 1e12:
        raise SingularHessianError("Hessian of F is singular; some parameter is not identified")
    C = cross_derivative(basis)
    V_pi = multinomial_covariance(pi_hat)
    B = np.linalg.solve(H, C)
    V = B @ V_pi @ B.T
    V = 0.5 * (V + V.T)
    se = np.sqrt(np.clip(np.diag(V), 0.0, None) / sample.n_households)
    return V, se
