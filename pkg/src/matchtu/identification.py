"""Closed-form identification in the logit model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ZeroCellError
from .model import FloatArray, MatchingPatterns


@dataclass(frozen=True)
class UtilityDecomposition:
    U: FloatArray  # systematic utility of men in each couple type
    V: FloatArray  # systematic utility of women; U + V = Phi


def _smoothed(mu: MatchingPatterns, pseudo_count: float) -> MatchingPatterns:
    if pseudo_count:
        return MatchingPatterns(mu.mu + pseudo_count, mu.mu_x0 + pseudo_count, mu.mu_0y + pseudo_count)
    return mu


def _require_positive(mu: MatchingPatterns):
    # cells are reported 1-based, with 0 standing for singlehood
    bad = [(int(x) + 1, int(y) + 1) for x, y in zip(*np.nonzero(mu.mu <= 0))]
    bad += [(int(x) + 1, 0) for x in np.flatnonzero(mu.mu_x0 <= 0)]
    bad += [(0, int(y) + 1) for y in np.flatnonzero(mu.mu_0y <= 0)]
    if bad:
        raise ZeroCellError(bad)


def choo_siow(mu: MatchingPatterns, pseudo_count: float = 0.0) -> FloatArray:
    """Phi_xy = log(mu_xy^2 / (mu_x0 mu_0y))."""
    mu = _smoothed(mu, pseudo_count)
    _require_positive(mu)
    return 2 * np.log(mu.mu) - np.log(mu.mu_x0)[:, None] - np.log(mu.mu_0y)[None, :]


def split_utilities_logit(mu: MatchingPatterns, pseudo_count: float = 0.0) -> UtilityDecomposition:
    """U_xy = log(mu_xy / mu_x0), V_xy = log(mu_xy / mu_0y), with singles normalised to 0."""
    mu = _smoothed(mu, pseudo_count)
    _require_positive(mu)
    log_mu = np.log(mu.mu)
    return UtilityDecomposition(log_mu - np.log(mu.mu_x0)[:, None], log_mu - np.log(mu.mu_0y)[None, :])


def double_log_odds(mu: MatchingPatterns, x: int, x2: int, y: int, y2: int) -> float:
    m = mu.mu
    return float(2 * (np.log(m[x, y]) + np.log(m[x2, y2]) - np.log(m[x, y2]) - np.log(m[x2, y])))


def gaussian_bilinear_rho(a: float, sigma_x: float, sigma_y: float) -> float:
    """Correlation rho in (-1, 1) solving a sigma_x sigma_y = rho / (1 - rho^2)."""
    if sigma_x <= 0 or sigma_y <= 0:
        raise ValueError("standard deviations must be positive")
    c = a * sigma_x * sigma_y
    if c == 0:
        return 0.0
    if np.isinf(c):
        return float(np.sign(c))
    # root of c rho^2 + rho - c = 0 inside (-1, 1), written without cancellation
    return float(2 * c / (1 + np.hypot(1.0, 2 * c)))
