"""The convex moment-matching objective F(lambda, u, v) and its derivatives.

Everything here works on the frequency scale: ``pi_hat`` sums to one.
Parameters are ordered alpha = (lambda, u, v) throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..errors import MatchingError, ZeroCellError
from ..model import (
    BasisSystem,
    FloatArray,
    MatchingPatterns,
    ParameterVector,
    SampleCounts,
    patterns_from_utilities,
    surplus_from_basis,
)

ALGORITHMS = ("gradient", "coordinate-hybrid", "mle", "max-score")


@dataclass(frozen=True)
class FitOptions:
    algorithm: str = "gradient"
    tol: float = 1e-10
    max_iter: int = 200_000
    step_size: float | None = None  # None: adaptive (gradient) or 1/L (hybrid lambda step)
    seed: int = 0
    pseudo_count: float = 0.0
    n_starts: int = 8  # mle only
    with_covariance: bool = True

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.step_size is not None and self.step_size < 0:
            raise ValueError("step_size must be nonnegative")
        if self.pseudo_count < 0:
            raise ValueError("pseudo_count must be nonnegative")


@dataclass(frozen=True)
class EstimateReport:
    alpha_hat: ParameterVector
    covariance: FloatArray | None
    std_errors: FloatArray | None
    objective_value: float
    iterations: int
    mu_fit: MatchingPatterns | None
    algorithm: str
    n_households: float
    converged: bool = True
    trace: tuple[float, ...] = field(default=(), repr=False)
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def lam(self) -> FloatArray:
        return self.alpha_hat.lam


def predicted_patterns(alpha: ParameterVector, basis: BasisSystem) -> MatchingPatterns:
    """Matching patterns implied by alpha through the gradient of E*."""
    return patterns_from_utilities(surplus_from_basis(alpha.lam, basis), alpha.u, alpha.v)


def _check_dims(alpha: ParameterVector, pi_hat: MatchingPatterns, basis: BasisSystem):
    if alpha.lam.size != basis.K:
        raise MatchingError(f"lambda has {alpha.lam.size} entries, basis has K={basis.K}")
    if pi_hat.shape != basis.shape or (alpha.u.size, alpha.v.size) != basis.shape:
        raise MatchingError("dimensions of alpha, pi_hat and basis disagree")


def objective_F(alpha: ParameterVector, pi_hat: MatchingPatterns, basis: BasisSystem) -> float:
    _check_dims(alpha, pi_hat, basis)
    phi = surplus_from_basis(alpha.lam, basis)
    u, v = alpha.u, alpha.v
    z = phi - u[:, None] - v[None, :]
    with np.errstate(over="ignore"):
        value = (
            np.exp(-u).sum()
            + np.exp(-v).sum()
            + 2 * np.exp(z / 2).sum()
            - (pi_hat.mu * z).sum()
            + pi_hat.mu_x0 @ u
            + pi_hat.mu_0y @ v
        )
    return float(value)


def gradient_F(alpha: ParameterVector, pi_hat: MatchingPatterns, basis: BasisSystem) -> FloatArray:
    """Exact gradient, ordered (lambda, u, v).

    The u block is n_hat - N(mu_alpha): F falls as u rises when the model
    over-predicts type x.
    """
    _check_dims(alpha, pi_hat, basis)
    mu = predicted_patterns(alpha, basis)
    g_lam = basis.design @ (mu.mu - pi_hat.mu).ravel()
    g_u = pi_hat.N_x - mu.N_x
    g_v = pi_hat.M_y - mu.M_y
    return np.concatenate([g_lam, g_u, g_v])


def hessian_F(alpha: ParameterVector, basis: BasisSystem) -> FloatArray:
    """Hessian of F in alpha; it does not depend on pi_hat."""
    mu = predicted_patterns(alpha, basis)
    return hessian_blocks(mu, basis)


def hessian_blocks(mu: MatchingPatterns, basis: BasisSystem) -> FloatArray:
    K = basis.K
    nx, ny = mu.shape
    phi = basis.bases
    H = np.zeros((K + nx + ny, K + nx + ny))
    lam_s = slice(0, K)
    u_s = slice(K, K + nx)
    v_s = slice(K + nx, K + nx + ny)
    H[lam_s, lam_s] = 0.5 * np.einsum("kxy,lxy,xy->kl", phi, phi, mu.mu)
    H[u_s, u_s] = np.diag(0.5 * mu.mu.sum(axis=1) + mu.mu_x0)
    H[v_s, v_s] = np.diag(0.5 * mu.mu.sum(axis=0) + mu.mu_0y)
    H[u_s, v_s] = 0.5 * mu.mu
    H[v_s, u_s] = 0.5 * mu.mu.T
    H[u_s, lam_s] = -0.5 * np.einsum("kxy,xy->xk", phi, mu.mu)
    H[v_s, lam_s] = -0.5 * np.einsum("kxy,xy->yk", phi, mu.mu)
    H[lam_s, u_s] = H[u_s, lam_s].T
    H[lam_s, v_s] = H[v_s, lam_s].T
    return H


def sample_frequencies(sample: SampleCounts, basis: BasisSystem, pseudo_count: float = 0.0):
    """Frequencies for fitting, after optional smoothing and a zero-cell check.

    Every singles category must be positive, and so must every couple cell
    on which some basis function is nonzero.
    """
    if sample.shape != basis.shape:
        raise MatchingError(f"sample is {sample.shape} but basis is {basis.shape}")
    if pseudo_count:
        sample = sample.with_pseudo_count(pseudo_count)
    mh = sample.mu_hat
    used = np.any(basis.bases != 0, axis=0)
    bad = [(int(x) + 1, int(y) + 1) for x, y in zip(*np.nonzero(used & (mh.mu <= 0)))]
    bad += [(int(x) + 1, 0) for x in np.flatnonzero(mh.mu_x0 <= 0)]
    bad += [(0, int(y) + 1) for y in np.flatnonzero(mh.mu_0y <= 0)]
    if bad:
        raise ZeroCellError(bad)
    return sample, sample.frequencies
