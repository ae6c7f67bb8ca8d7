"""Synthetic data: household multinomial samples and Gumbel micro-markets.

All randomness comes from numpy's counter-based Philox generator keyed by
an integer seed, so a config reproduces bit-identical draws. Replications
derive child seeds with ``SeedSequence.spawn``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike

from .equilibrium import SolverOptions, solve_ipfp
from .errors import MatchingError
from .micro import (
    ENUMERATION_CAP,
    SINGLE,
    MicroMarket,
    MicroSolution,
    micro_stable_matching,
    separable_matching,
)
from .model import BasisSystem, Margins, MatchingPatterns, SampleCounts, check_phi

_TWO53 = float(2**53)


@dataclass(frozen=True)
class SimConfig:
    n_households: int = 10_000
    men_per_type: tuple[int, ...] | None = None
    women_per_type: tuple[int, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_households < 0:
            raise ValueError("n_households must be nonnegative")
        for name in ("men_per_type", "women_per_type"):
            val = getattr(self, name)
            if val is not None:
                val = tuple(int(c) for c in val)
                if any(c < 0 for c in val):
                    raise ValueError(f"{name} must be nonnegative")
                object.__setattr__(self, name, val)


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def child_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(int(seed)).spawn(n)


def uniform_open(rng: np.random.Generator, size) -> np.ndarray:
    """Uniforms on the open interval (0, 1) from 53-bit integers."""
    k = rng.integers(0, 2**53, size=size, dtype=np.int64)
    return (k + 0.5) / _TWO53


def gumbel(rng: np.random.Generator, size) -> np.ndarray:
    """Standard Gumbel draws by inverse CDF."""
    return -np.log(-np.log(uniform_open(rng, size)))


def equilibrium_frequencies(phi, margins: Margins) -> MatchingPatterns:
    sol = solve_ipfp(phi, margins, SolverOptions(tol=1e-13))
    return sol.mu.scaled(1.0 / sol.mu.n_households)


def sample_from_frequencies(pi: MatchingPatterns, n_households: int, seed) -> SampleCounts:
    """One multinomial draw over all categories (household-level sampling)."""
    nx, ny = pi.shape
    p = pi.as_vector()
    p = p / p.sum()
    counts = make_rng(seed).multinomial(int(n_households), p).astype(float)
    return SampleCounts(MatchingPatterns.from_vector(counts, nx, ny))


def sample_households(lam, basis: BasisSystem, margins: Margins, config: SimConfig) -> SampleCounts:
    pi = equilibrium_frequencies(basis.surplus(lam), margins)
    return sample_from_frequencies(pi, config.n_households, config.seed)


@dataclass(frozen=True)
class MicroDraws:
    eps: np.ndarray  # (n_men, |Y| + 1); last column is singlehood
    eta: np.ndarray  # (n_women, |X| + 1); last column is singlehood


def draw_heterogeneity(rng, n_men: int, n_women: int, nx: int, ny: int) -> MicroDraws:
    """Men's draws (per man, in index order) come before women's."""
    return MicroDraws(gumbel(rng, (n_men, ny + 1)), gumbel(rng, (n_women, nx + 1)))


def build_micro_market(phi, men_types: ArrayLike, women_types: ArrayLike, draws: MicroDraws) -> MicroMarket:
    """Phi~_ij = Phi[x_i, y_j] + eps[i, y_j] + eta[j, x_i]; singles get their own draws."""
    phi = np.asarray(phi, dtype=float)
    nx, ny = phi.shape
    xt = np.asarray(men_types, dtype=np.int64)
    yt = np.asarray(women_types, dtype=np.int64)
    eps, eta = draws.eps, draws.eta
    pt = phi[np.ix_(xt, yt)] + eps[:, yt] + eta[:, xt].T
    return MicroMarket(pt, eps[:, ny], eta[:, nx])


def aggregate(solution: MicroSolution, men_types, women_types, nx: int, ny: int) -> SampleCounts:
    xt = np.asarray(men_types, dtype=np.int64)
    yt = np.asarray(women_types, dtype=np.int64)
    a = solution.assignment
    matched = a != SINGLE
    mu = np.zeros((nx, ny))
    np.add.at(mu, (xt[matched], yt[a[matched]]), 1.0)
    mu_x0 = np.bincount(xt[~matched], minlength=nx).astype(float)
    women_single = np.ones(yt.size, dtype=bool)
    women_single[a[matched]] = False
    mu_0y = np.bincount(yt[women_single], minlength=ny).astype(float)
    return SampleCounts(MatchingPatterns(mu, mu_x0, mu_0y))


def simulate_micro_market(
    phi,
    men_per_type: Sequence[int],
    women_per_type: Sequence[int],
    config: SimConfig | None = None,
    seed=None,
) -> tuple[MicroSolution, SampleCounts]:
    """Finite market with Gumbel heterogeneity, solved for its stable matching.

    Up to 10 individuals per side the matching is found by exhaustive
    search; above that by the separable network program. Both return
    stable payoffs.
    """
    phi = check_phi(phi)
    nx, ny = phi.shape
    men = np.asarray(men_per_type, dtype=np.int64)
    women = np.asarray(women_per_type, dtype=np.int64)
    if men.size != nx or women.size != ny:
        raise MatchingError("per-type counts do not match the surplus shape")
    xt = np.repeat(np.arange(nx), men)
    yt = np.repeat(np.arange(ny), women)
    rng = make_rng(seed if seed is not None else (config.seed if config else 0))
    draws = draw_heterogeneity(rng, xt.size, yt.size, nx, ny)
    if xt.size <= ENUMERATION_CAP and yt.size <= ENUMERATION_CAP:
        sol = micro_stable_matching(build_micro_market(phi, xt, yt, draws))
    else:
        sol = separable_matching(phi, draws.eps, draws.eta, xt, yt)
    return sol, aggregate(sol, xt, yt, nx, ny)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("MATCHTU_THREADS", "1")))
    except ValueError:
        return 1


def replicate(fn: Callable[[int, np.random.SeedSequence], object], n: int, seed: int) -> list:
    """Run ``fn(index, seed_seq)`` for n replications; results come back in index order."""
    seeds = child_seeds(seed, n)
    workers = min(worker_count(), n) if n else 1
    if workers <= 1:
        return [fn(i, s) for i, s in enumerate(seeds)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n), seeds))


def micro_frequency_deviation(phi, per_type: int, seed) -> float:
    """Mean absolute gap between a simulated micro market's household frequencies
    and the type-level equilibrium with the same head counts."""
    phi = check_phi(phi)
    nx, ny = phi.shape
    men, women = np.full(nx, per_type), np.full(ny, per_type)
    _, counts = simulate_micro_market(phi, men, women, seed=seed)
    pi = equilibrium_frequencies(phi, Margins(men.astype(float), women.astype(float)))
    freq = counts.mu_hat.scaled(1.0 / counts.mu_hat.n_households)
    return float(np.abs(freq.as_vector() - pi.as_vector()).mean())
