"""Core data types and logit primitives for separable TU matching markets.

Masses are stored as float arrays throughout. Singlehood is never a label:
it lives in the separate ``mu_x0`` / ``mu_0y`` vectors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import (
    DimensionError,
    MatchingError,
    NegativeMassError,
    RankDeficientBasisError,
    SaturationWarning,
)

FloatArray = NDArray[np.float64]

# Distributional family for the unobserved heterogeneity. Only the logit
# instance exists; the tag is threaded through so signatures stay stable.
LOGIT = "logit"


def _as_float(a: ArrayLike, ndim: int, name: str) -> FloatArray:
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TypeSpace:
    x_labels: tuple[str, ...]
    y_labels: tuple[str, ...]

    def __post_init__(self):
        xs = tuple(str(s) for s in self.x_labels)
        ys = tuple(str(s) for s in self.y_labels)
        object.__setattr__(self, "x_labels", xs)
        object.__setattr__(self, "y_labels", ys)
        if not xs or not ys:
            raise MatchingError("each side needs at least one type")
        for side, labels in (("x", xs), ("y", ys)):
            if len(set(labels)) != len(labels):
                raise MatchingError(f"duplicate {side} labels")
            if "0" in labels:
                raise MatchingError("'0' is reserved for singlehood and cannot be a type label")

    @classmethod
    def default(cls, nx: int, ny: int) -> "TypeSpace":
        return cls(tuple(f"x{i + 1}" for i in range(nx)), tuple(f"y{j + 1}" for j in range(ny)))

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.x_labels), len(self.y_labels)


@dataclass(frozen=True)
class Margins:
    """Population masses ``n`` (men per x type) and ``m`` (women per y type)."""

    n: FloatArray
    m: FloatArray

    def __post_init__(self):
        n = _as_float(self.n, 1, "n")
        m = _as_float(self.m, 1, "m")
        if n.size == 0 or m.size == 0:
            raise DimensionError("margins must be non-empty")
        if np.any(n < 0) or np.any(m < 0) or not (np.all(np.isfinite(n)) and np.all(np.isfinite(m))):
            raise NegativeMassError("margins must be finite and nonnegative")
        if n.sum() + m.sum() <= 0:
            raise MatchingError("margins are all zero")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "m", m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n.size, self.m.size


@dataclass(frozen=True)
class MatchingPatterns:
    """Matched masses ``mu[x, y]`` and singles ``mu_x0[x]``, ``mu_0y[y]``."""

    mu: FloatArray
    mu_x0: FloatArray
    mu_0y: FloatArray

    def __post_init__(self):
        mu = _as_float(self.mu, 2, "mu")
        mu_x0 = _as_float(self.mu_x0, 1, "mu_x0")
        mu_0y = _as_float(self.mu_0y, 1, "mu_0y")
        if mu.shape != (mu_x0.size, mu_0y.size):
            raise DimensionError(
                f"mu has shape {mu.shape} but singles have sizes {mu_x0.size}, {mu_0y.size}"
            )
        for arr in (mu, mu_x0, mu_0y):
            if not np.all(np.isfinite(arr)):
                raise MatchingError("matching patterns must be finite")
            if np.any(arr < 0):
                raise NegativeMassError("matching patterns must be nonnegative")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "mu_x0", mu_x0)
        object.__setattr__(self, "mu_0y", mu_0y)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mu.shape

    @property
    def N_x(self) -> FloatArray:
        return self.mu.sum(axis=1) + self.mu_x0

    @property
    def M_y(self) -> FloatArray:
        return self.mu.sum(axis=0) + self.mu_0y

    @property
    def n_households(self) -> float:
        return float(self.mu.sum() + self.mu_x0.sum() + self.mu_0y.sum())

    def margins(self) -> Margins:
        return Margins(self.N_x, self.M_y)

    def as_vector(self) -> FloatArray:
        """Flatten in the canonical category order: couples (x-major), x singles, y singles."""
        return np.concatenate([self.mu.ravel(), self.mu_x0, self.mu_0y])

    @classmethod
    def from_vector(cls, vec: ArrayLike, nx: int, ny: int) -> "MatchingPatterns":
        vec = np.asarray(vec, dtype=float)
        if vec.size != nx * ny + nx + ny:
            raise DimensionError("vector length does not match the type space")
        return cls(vec[: nx * ny].reshape(nx, ny), vec[nx * ny : nx * ny + nx], vec[nx * ny + nx :])

    def scaled(self, s: float) -> "MatchingPatterns":
        return MatchingPatterns(self.mu * s, self.mu_x0 * s, self.mu_0y * s)


@dataclass(frozen=True)
class BasisSystem:
    """K basis matrices ``bases[k, x, y]`` spanning the surplus family."""

    bases: FloatArray
    k_names: tuple[str, ...] = ()

    def __post_init__(self):
        bases = _as_float(self.bases, 3, "bases")
        K = bases.shape[0]
        if K < 1:
            raise DimensionError("basis needs at least one matrix")
        if not np.all(np.isfinite(bases)):
            raise MatchingError("basis entries must be finite")
        names = tuple(str(s) for s in self.k_names) or tuple(f"lambda_{k + 1}" for k in range(K))
        if len(names) != K:
            raise DimensionError("k_names length differs from the number of bases")
        if np.linalg.matrix_rank(bases.reshape(K, -1)) < K:
            raise RankDeficientBasisError("basis matrices are linearly dependent")
        object.__setattr__(self, "bases", bases)
        object.__setattr__(self, "k_names", names)

    @property
    def K(self) -> int:
        return self.bases.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bases.shape[1], self.bases.shape[2]

    @property
    def design(self) -> FloatArray:
        """The K x (|X||Y|) stacking, x-major within each row."""
        return self.bases.reshape(self.K, -1)

    def surplus(self, lam: ArrayLike) -> FloatArray:
        return surplus_from_basis(lam, self)

    @classmethod
    def saturated(cls, nx: int, ny: int) -> "BasisSystem":
        """One indicator per cell; Phi is then unrestricted."""
        bases = np.eye(nx * ny).reshape(nx * ny, nx, ny)
        names = tuple(f"phi[{x + 1},{y + 1}]" for x in range(nx) for y in range(ny))
        return cls(bases, names)


@dataclass(frozen=True)
class ParameterVector:
    """alpha = (lambda, u, v); u and v are type-level utilities of singles."""

    lam: FloatArray
    u: FloatArray
    v: FloatArray
    family: str = LOGIT

    def __post_init__(self):
        for name in ("lam", "u", "v"):
            arr = _as_float(getattr(self, name), 1, name)
            if not np.all(np.isfinite(arr)):
                raise MatchingError(f"{name} must be finite")
            object.__setattr__(self, name, arr)

    def as_vector(self) -> FloatArray:
        return np.concatenate([self.lam, self.u, self.v])

    @classmethod
    def from_vector(cls, vec: ArrayLike, K: int, nx: int, ny: int) -> "ParameterVector":
        vec = np.asarray(vec, dtype=float)
        if vec.size != K + nx + ny:
            raise DimensionError("parameter vector length does not match K + |X| + |Y|")
        return cls(vec[:K], vec[K : K + nx], vec[K + nx :])


@dataclass(frozen=True)
class SampleCounts:
    """Household counts by category.

    ``integral`` is False for smoothed or exact-frequency data, which lifts
    the integer check but keeps every other invariant.
    """

    mu_hat: MatchingPatterns
    n_households: float | None = None
    integral: bool = True
    pseudo_count: float = 0.0
    types: TypeSpace | None = None

    def __post_init__(self):
        total = self.mu_hat.n_households
        if self.n_households is None:
            object.__setattr__(self, "n_households", total)
        elif not np.isclose(self.n_households, total, rtol=1e-12, atol=1e-9):
            raise MatchingError(
                f"n_households={self.n_households} differs from the sum of counts {total}"
            )
        if self.integral:
            vec = self.mu_hat.as_vector()
            if np.any(vec != np.round(vec)):
                raise MatchingError("household counts must be integers")
            object.__setattr__(self, "n_households", int(round(total)))
        if self.types is not None and self.types.shape != self.mu_hat.shape:
            raise DimensionError("type labels do not match the counts table")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mu_hat.shape

    @property
    def frequencies(self) -> MatchingPatterns:
        if self.n_households <= 0:
            raise MatchingError("empty sample has no frequencies")
        return self.mu_hat.scaled(1.0 / self.n_households)

    @classmethod
    def from_frequencies(cls, pi: MatchingPatterns, n_households: float, types=None) -> "SampleCounts":
        """Non-integral 'counts' equal to ``pi * n_households`` (noise-free data)."""
        pi = pi.scaled(1.0 / pi.n_households)
        return cls(pi.scaled(n_households), None, integral=False, types=types)

    def with_pseudo_count(self, c: float = 0.5) -> "SampleCounts":
        """Add ``c`` households to every category."""
        mh = self.mu_hat
        smoothed = MatchingPatterns(mh.mu + c, mh.mu_x0 + c, mh.mu_0y + c)
        return SampleCounts(smoothed, None, integral=False, pseudo_count=self.pseudo_count + c,
                            types=self.types)


@dataclass(frozen=True)
class EquilibriumSolution:
    mu: MatchingPatterns
    u: FloatArray
    v: FloatArray
    total_surplus: float
    iterations: int
    residual: float
    converged: bool = True
    trace: tuple[float, ...] = field(default=(), repr=False)


# ---------------------------------------------------------------------------
# logit primitives


def surplus_from_basis(lam: ArrayLike, basis: BasisSystem) -> FloatArray:
    """Phi^lambda = sum_k lambda_k phi^k."""
    lam = np.asarray(lam, dtype=float).ravel()
    if lam.size != basis.K:
        raise DimensionError(f"lambda has length {lam.size}, basis has K={basis.K}")
    return np.tensordot(lam, basis.bases, axes=1)


def logit_emax(U_row: ArrayLike) -> float:
    """log(1 + sum_t exp(U_t)), the Emax of standard Gumbel shocks over Y plus singlehood."""
    U = np.asarray(U_row, dtype=float).ravel()
    shift = max(0.0, float(U.max())) if U.size else 0.0
    return shift + float(np.log(np.exp(-shift) + np.exp(U - shift).sum()))


def _xlogx(a: FloatArray) -> FloatArray:
    out = np.zeros_like(a)
    pos = a > 0
    out[pos] = a[pos] * np.log(a[pos])
    return out


def entropy_logit(mu: MatchingPatterns) -> float:
    """2 sum mu_xy log mu_xy + sum mu_x0 log mu_x0 + sum mu_0y log mu_0y, with 0 log 0 = 0."""
    return float(2 * _xlogx(mu.mu).sum() + _xlogx(mu.mu_x0).sum() + _xlogx(mu.mu_0y).sum())


def extended_entropy_logit(mu: MatchingPatterns) -> float:
    """Convex conjugate of :func:`extended_entropy_star_logit`.

    Each cell contributes L(t) = t log t - t, doubled for couples; it is
    finite on the whole nonnegative orthant, unlike the margin-constrained
    entropy.
    """

    def L(a):
        return _xlogx(a) - a

    return float(2 * L(mu.mu).sum() + L(mu.mu_x0).sum() + L(mu.mu_0y).sum())


def matching_function_logit(mu_x0: float, mu_0y: float, phi_xy: float) -> float:
    if mu_x0 < 0 or mu_0y < 0:
        raise NegativeMassError("singles masses must be nonnegative")
    return float(np.sqrt(mu_x0) * np.sqrt(mu_0y) * np.exp(phi_xy / 2.0))


def _exp_saturating(z: FloatArray) -> FloatArray:
    with np.errstate(over="ignore"):
        out = np.exp(z)
    if np.any(np.isinf(out)):
        warnings.warn("exponential overflow saturated to +inf", SaturationWarning, stacklevel=3)
    return out


def extended_entropy_star_logit(z_xy: ArrayLike, z_x0: ArrayLike, z_0y: ArrayLike) -> float:
    """2 sum exp(z_xy / 2) + sum exp(z_x0) + sum exp(z_0y)."""
    z_xy = np.asarray(z_xy, dtype=float)
    z_x0 = np.asarray(z_x0, dtype=float)
    z_0y = np.asarray(z_0y, dtype=float)
    return float(
        2 * _exp_saturating(z_xy / 2).sum() + _exp_saturating(z_x0).sum() + _exp_saturating(z_0y).sum()
    )


def gradient_star_logit(z_xy, z_x0, z_0y) -> MatchingPatterns:
    """Gradient of the extended-entropy conjugate: the implied matching patterns."""
    return MatchingPatterns(
        _exp_saturating(np.asarray(z_xy, float) / 2),
        _exp_saturating(np.asarray(z_x0, float)),
        _exp_saturating(np.asarray(z_0y, float)),
    )


def patterns_from_utilities(phi: ArrayLike, u: ArrayLike, v: ArrayLike) -> MatchingPatterns:
    """Matching patterns implied by (Phi, u, v): mu_xy = exp((Phi - u - v)/2), mu_x0 = exp(-u)."""
    phi = np.asarray(phi, dtype=float)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return gradient_star_logit(phi - u[:, None] - v[None, :], -u, -v)


def total_surplus(mu: MatchingPatterns, phi: ArrayLike) -> float:
    """sum mu_xy Phi_xy minus the logit entropy of ``mu``."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != mu.shape:
        raise DimensionError("Phi and mu shapes differ")
    return float((mu.mu * phi).sum() - entropy_logit(mu))


def check_phi(phi: ArrayLike, shape: Sequence[int] | None = None) -> FloatArray:
    phi = _as_float(phi, 2, "phi")
    if not np.all(np.isfinite(phi)):
        raise MatchingError("surplus matrix must be finite")
    if shape is not None and phi.shape != tuple(shape):
        raise DimensionError(f"Phi has shape {phi.shape}, expected {tuple(shape)}")
    return phi
