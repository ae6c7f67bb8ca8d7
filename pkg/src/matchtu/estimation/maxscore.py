"""Maximum-score estimation from the signs of double log-odds ratios.

Each quadruple (x, x', y, y') is oriented so that its observed double
log-odds ratio is positive; the score of lambda counts the oriented
quadruples whose double difference of Phi^lambda is strictly positive.
The score is invariant to positive rescaling of lambda, so the search runs
over the unit sphere.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from ..errors import MatchingError
from ..model import BasisSystem, FloatArray, ParameterVector, SampleCounts
from .objective import EstimateReport, FitOptions

MAX_K = 4
GRID_BUDGET = 100_000


@dataclass(frozen=True)
class QuadrupleSet:
    items: tuple[tuple[int, int, int, int], ...]

    def __post_init__(self):
        items = tuple(tuple(int(i) for i in q) for q in self.items)
        for x, x2, y, y2 in items:
            if x == x2 or y == y2:
                raise MatchingError(f"quadruple {(x, x2, y, y2)} needs x != x' and y != y'")
        object.__setattr__(self, "items", items)

    def __len__(self):
        return len(self.items)

    @classmethod
    def all(cls, nx: int, ny: int) -> "QuadrupleSet":
        """Every unordered pair of x types crossed with every unordered pair of y types."""
        return cls(tuple((x, x2, y, y2)
                         for x, x2 in itertools.combinations(range(nx), 2)
                         for y, y2 in itertools.combinations(range(ny), 2)))


def double_difference(phi, x: int, x2: int, y: int, y2: int) -> float:
    """Phi_xy + Phi_x'y' - Phi_x'y - Phi_xy'."""
    phi = np.asarray(phi, dtype=float)
    nx, ny = phi.shape
    for i, n in ((x, nx), (x2, nx), (y, ny), (y2, ny)):
        if not 0 <= i < n:
            raise IndexError(f"type index {i} out of range")
    return float(phi[x, y] + phi[x2, y2] - phi[x2, y] - phi[x, y2])


def _dd_array(arr, q):
    """Double differences over the last two axes for an index array q (n, 4)."""
    x, x2, y, y2 = q.T
    return arr[..., x, y] + arr[..., x2, y2] - arr[..., x2, y] - arr[..., x, y2]


def sphere_grid(K: int, budget: int = GRID_BUDGET) -> FloatArray:
    """Deterministic near-uniform directions on the unit sphere in R^K."""
    if K == 1:
        return np.array([[1.0], [-1.0]])
    i = np.arange(budget)
    if K == 2:
        t = 2 * np.pi * i / budget
        return np.column_stack([np.cos(t), np.sin(t)])
    if K == 3:
        golden = np.pi * (3 - np.sqrt(5))
        z = 1 - (2 * i + 1) / budget
        r = np.sqrt(1 - z * z)
        return np.column_stack([r * np.cos(golden * i), r * np.sin(golden * i), z])
    # Kronecker lattice with the generalised golden ratio, pushed through the
    # normal quantile so that normalised points are uniform on the sphere
    g = 1.0
    for _ in range(50):
        g = (1 + g) ** (1 / (K + 1))
    alpha = (1 / g) ** np.arange(1, K + 1)
    u = (0.5 + np.outer(i + 1, alpha)) % 1.0
    pts = norm.ppf(u)
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def oriented_differences(sample: SampleCounts, basis: BasisSystem, quads: QuadrupleSet,
                         pseudo_count: float = 0.0):
    """Basis double differences, sign-flipped so every observed log-odds is positive.

    Quadruples with a zero cell or a zero observed log-odds are dropped.
    """
    mh = sample.mu_hat.mu + pseudo_count
    q = np.array(quads.items, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = _dd_array(np.log(mh), q)
    keep = np.isfinite(lo) & (lo != 0)
    d = _dd_array(basis.bases, q).T  # (n_quads, K)
    return d[keep] * np.sign(lo[keep])[:, None], q[keep]


def score(lam, d: FloatArray) -> int:
    return int(np.count_nonzero(d @ np.asarray(lam, float) > 0))


def max_score_fit(
    sample: SampleCounts,
    basis: BasisSystem,
    quads: QuadrupleSet,
    opts: FitOptions | None = None,
) -> EstimateReport:
    """Grid search over unit directions, then a shrinking pattern search.

    Ties on the grid go to the smallest grid index. ``alpha_hat.u`` and
    ``alpha_hat.v`` are empty: the score says nothing about them.
    """
    opts = opts or FitOptions(algorithm="max-score")
    if len(quads) == 0:
        raise MatchingError("quadruple set is empty")
    if basis.K > MAX_K:
        raise MatchingError(f"max-score search supports K <= {MAX_K}, got {basis.K}")
    d, used = oriented_differences(sample, basis, quads, opts.pseudo_count)

    grid = sphere_grid(basis.K)
    scores = np.zeros(len(grid), dtype=np.int64)
    for start in range(0, len(grid), 10_000):
        block = grid[start : start + 10_000]
        scores[start : start + 10_000] = (d @ block.T > 0).sum(axis=0)
    best_i = int(np.argmax(scores))
    best, best_score = grid[best_i], int(scores[best_i])
    tie_set = np.flatnonzero(scores == best_score)

    steps = 0
    h = 0.1
    while h > 1e-6 and best_score < len(d) and basis.K > 1:
        improved = False
        for k in range(basis.K):
            for sgn in (1.0, -1.0):
                cand = best.copy()
                cand[k] += sgn * h
                cand /= np.linalg.norm(cand)
                s = score(cand, d)
                steps += 1
                if s > best_score:
                    best, best_score, improved = cand, s, True
        if not improved:
            h /= 2

    return EstimateReport(
        alpha_hat=ParameterVector(best, np.empty(0), np.empty(0)),
        covariance=None,
        std_errors=None,
        objective_value=float(best_score),
        iterations=len(grid) + steps,
        mu_fit=None,
        algorithm="max-score",
        n_households=sample.n_households,
        diagnostics={
            "score": best_score,
            "n_quadruples": len(quads),
            "n_informative_quadruples": int(len(d)),
            "n_tied_grid_directions": int(tie_set.size),
            "tied_directions": grid[tie_set[:1000]],
        },
    )
