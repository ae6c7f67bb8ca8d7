"""Individual-level stable matchings for finite markets.

Small markets are solved exactly: the surplus-maximising matching comes from
an exhaustive dynamic program over subsets of women, and stable payoffs are
recovered as shortest-path potentials of the complementary-slackness
difference constraints. Larger markets use either a rectangular assignment
solve on the reduced surplus (generic, no payoffs) or, when the surplus is
separable, a network linear program over type cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog

from .errors import MatchingError, SizeCapError
from .model import FloatArray

ENUMERATION_CAP = 10
ASSIGNMENT_CAP = 2000
SINGLE = -1


@dataclass(frozen=True)
class MicroMarket:
    phi_tilde: FloatArray  # (n_men, n_women) joint surplus of each couple
    phi_tilde_i0: FloatArray  # value of singlehood for each man
    phi_tilde_0j: FloatArray  # value of singlehood for each woman

    def __post_init__(self):
        pt = np.array(self.phi_tilde, dtype=float)
        i0 = np.array(self.phi_tilde_i0, dtype=float).ravel()
        j0 = np.array(self.phi_tilde_0j, dtype=float).ravel()
        if pt.ndim != 2:
            pt = pt.reshape(i0.size, j0.size)
        if pt.shape != (i0.size, j0.size):
            raise MatchingError(f"surplus shape {pt.shape} inconsistent with {i0.size} men, {j0.size} women")
        if not (np.all(np.isfinite(pt)) and np.all(np.isfinite(i0)) and np.all(np.isfinite(j0))):
            raise MatchingError("micro surplus must be finite")
        object.__setattr__(self, "phi_tilde", pt)
        object.__setattr__(self, "phi_tilde_i0", i0)
        object.__setattr__(self, "phi_tilde_0j", j0)

    @property
    def n_men(self) -> int:
        return self.phi_tilde_i0.size

    @property
    def n_women(self) -> int:
        return self.phi_tilde_0j.size

    def reduced(self) -> FloatArray:
        """Surplus net of both partners' singlehood values."""
        return self.phi_tilde - self.phi_tilde_i0[:, None] - self.phi_tilde_0j[None, :]


@dataclass(frozen=True)
class MicroSolution:
    assignment: np.ndarray  # partner index per man, SINGLE (-1) if unmatched
    u_i: FloatArray
    v_j: FloatArray
    primal_value: float

    @property
    def has_payoffs(self) -> bool:
        return bool(np.all(np.isfinite(self.u_i)) and np.all(np.isfinite(self.v_j)))

    @property
    def dual_value(self) -> float:
        return float(self.u_i.sum() + self.v_j.sum())

    def partner_of_women(self, n_women: int) -> np.ndarray:
        out = np.full(n_women, SINGLE)
        for i, j in enumerate(self.assignment):
            if j != SINGLE:
                out[j] = i
        return out


def matching_value(market: MicroMarket, assignment: ArrayLike) -> float:
    assignment = np.asarray(assignment, dtype=np.int64)
    matched = assignment != SINGLE
    women_taken = np.zeros(market.n_women, dtype=bool)
    women_taken[assignment[matched]] = True
    return float(
        market.phi_tilde[np.flatnonzero(matched), assignment[matched]].sum()
        + market.phi_tilde_i0[~matched].sum()
        + market.phi_tilde_0j[~women_taken].sum()
    )


def _best_matching_dp(w: FloatArray) -> np.ndarray:
    """Maximise the sum of w over partial matchings, man by man over women subsets."""
    n, m = w.shape
    size = 1 << m
    dp = np.full(size, -np.inf)
    dp[0] = 0.0
    choice = np.full((n, size), SINGLE, dtype=np.int64)
    masks = np.arange(size)
    for i in range(n):
        new = dp.copy()  # man i single
        arg = np.full(size, SINGLE, dtype=np.int64)
        for j in range(m):
            bit = 1 << j
            src = masks[(masks & bit) == 0]
            cand = dp[src] + w[i, j]
            dst = src | bit
            better = cand > new[dst]
            new[dst[better]] = cand[better]
            arg[dst[better]] = j
        choice[i] = arg
        dp = new
    mask = int(np.argmax(dp))
    assignment = np.full(n, SINGLE, dtype=np.int64)
    for i in range(n - 1, -1, -1):
        j = int(choice[i, mask])
        assignment[i] = j
        if j != SINGLE:
            mask ^= 1 << j
    return assignment


def _stable_payoffs(w: FloatArray, assignment: np.ndarray, tol: float = 1e-12):
    """Core payoffs (u', v') >= 0 for the reduced game, by Bellman-Ford.

    Node 0 anchors zero; node 1+i carries u'_i; node 1+n+j carries -v'_j.
    A constraint a - b <= c is the edge b -> a with weight c.
    """
    n, m = w.shape
    edges = []
    for i in range(n):
        xi = 1 + i
        edges.append((xi, 0, 0.0))  # u'_i >= 0
        for j in range(m):
            edges.append((xi, 1 + n + j, -w[i, j]))  # u'_i + v'_j >= w_ij
    for j in range(m):
        edges.append((0, 1 + n + j, 0.0))  # v'_j >= 0
    women_matched = np.zeros(m, dtype=bool)
    for i, j in enumerate(assignment):
        if j == SINGLE:
            edges.append((0, 1 + i, 0.0))  # u'_i <= 0
        else:
            women_matched[j] = True
            edges.append((1 + n + j, 1 + i, w[i, j]))  # u'_i + v'_j <= w_ij
    for j in np.flatnonzero(~women_matched):
        edges.append((1 + n + j, 0, 0.0))  # v'_j <= 0

    src, dst, wt = (np.array(c) for c in zip(*edges))
    src = src.astype(np.int64)
    dst = dst.astype(np.int64)
    wt = wt.astype(float)
    V = 1 + n + m
    dist = np.full(V, np.inf)
    dist[0] = 0.0
    for _ in range(V):
        cand = dist[src] + wt
        improved = cand < dist[dst] - tol
        if not improved.any():
            break
        np.minimum.at(dist, dst, cand)
    else:
        raise MatchingError("negative cycle: the matching is not surplus-maximising")
    dist -= dist[0]
    return dist[1 : 1 + n], -dist[1 + n :]


def micro_stable_matching(market: MicroMarket, cap: int = ENUMERATION_CAP) -> MicroSolution:
    """Exact stable matching with stable payoffs for markets up to ``cap`` per side."""
    if market.n_men > cap or market.n_women > cap:
        raise SizeCapError(f"market {market.n_men}x{market.n_women} exceeds enumeration cap {cap}")
    if market.n_men == 0 or market.n_women == 0:
        u, v = market.phi_tilde_i0.copy(), market.phi_tilde_0j.copy()
        return MicroSolution(np.full(market.n_men, SINGLE, dtype=np.int64), u, v,
                             float(u.sum() + v.sum()))
    w = market.reduced()
    assignment = _best_matching_dp(w)
    up, vp = _stable_payoffs(w, assignment)
    u = up + market.phi_tilde_i0
    v = vp + market.phi_tilde_0j
    primal = matching_value(market, assignment)
    dual = float(u.sum() + v.sum())
    if abs(primal - dual) > 1e-9 * max(1.0, abs(primal)):
        raise MatchingError(f"primal {primal} and dual {dual} values disagree")
    return MicroSolution(assignment, u, v, primal)


def assignment_matching(market: MicroMarket, cap: int = ASSIGNMENT_CAP) -> MicroSolution:
    """Surplus-maximising matching for large markets (payoffs left as NaN).

    Clipping the reduced surplus at zero turns the partial-matching problem
    into a rectangular assignment; pairs on a clipped edge are read as single.
    """
    if market.n_men > cap or market.n_women > cap:
        raise SizeCapError(f"market {market.n_men}x{market.n_women} exceeds assignment cap {cap}")
    n, m = market.n_men, market.n_women
    assignment = np.full(n, SINGLE, dtype=np.int64)
    if n and m:
        w = market.reduced()
        rows, cols = linear_sum_assignment(np.maximum(w, 0.0), maximize=True)
        keep = w[rows, cols] > 0
        assignment[rows[keep]] = cols[keep]
    return MicroSolution(assignment, np.full(n, np.nan), np.full(m, np.nan),
                         matching_value(market, assignment))


def separable_matching(phi, eps, eta, men_types, women_types, cap: int = ASSIGNMENT_CAP) -> MicroSolution:
    """Stable matching of a separable market, Phi~_ij = phi[x_i, y_j] + eps[i, y_j] + eta[j, x_i].

    Under separability only each person's choice of partner *type* matters,
    so the problem is a flow from men through |X||Y| type cells to women.
    The constraint matrix is a network matrix, so a simplex vertex is
    integral; its duals on the per-person rows are stable payoffs. Within a
    cell, partners are paired in index order (every pairing is optimal).

    ``eps`` is (n_men, |Y| + 1) and ``eta`` is (n_women, |X| + 1), with the
    singlehood draw in the last column.
    """
    phi = np.asarray(phi, dtype=float)
    nx, ny = phi.shape
    xt = np.asarray(men_types, dtype=np.int64)
    yt = np.asarray(women_types, dtype=np.int64)
    n, m = xt.size, yt.size
    if n > cap or m > cap:
        raise SizeCapError(f"market {n}x{m} exceeds assignment cap {cap}")
    assignment = np.full(n, SINGLE, dtype=np.int64)
    if n == 0 or m == 0:
        u = eps[:, ny].copy() if n else np.empty(0)
        v = eta[:, nx].copy() if m else np.empty(0)
        return MicroSolution(assignment, u, v, float(u.sum() + v.sum()))

    nd = n * (ny + 1)
    ne = m * (nx + 1)
    gain_d = eps.copy()
    gain_d[:, :ny] += phi[xt, :]
    gain = np.concatenate([gain_d.ravel(), eta.ravel()])

    rows, cols, vals = [], [], []
    d_idx = np.arange(nd).reshape(n, ny + 1)
    e_idx = nd + np.arange(ne).reshape(m, nx + 1)
    rows.append(np.repeat(np.arange(n), ny + 1)); cols.append(d_idx.ravel()); vals.append(np.ones(nd))
    rows.append(n + np.repeat(np.arange(m), nx + 1)); cols.append(e_idx.ravel()); vals.append(np.ones(ne))
    # market cell (x, y): men of type x choosing y minus women of type y choosing x
    cell_d = n + m + xt[:, None] * ny + np.arange(ny)[None, :]
    rows.append(cell_d.ravel()); cols.append(d_idx[:, :ny].ravel()); vals.append(np.ones(n * ny))
    cell_e = n + m + np.arange(nx)[None, :] * ny + yt[:, None]
    rows.append(cell_e.ravel()); cols.append(e_idx[:, :nx].ravel()); vals.append(-np.ones(m * nx))
    A = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n + m + nx * ny, nd + ne),
    )
    b = np.concatenate([np.ones(n + m), np.zeros(nx * ny)])
    res = linprog(-gain, A_eq=A, b_eq=b, bounds=(0, None), method="highs-ds")
    if res.status != 0:
        raise MatchingError(f"separable matching LP failed: {res.message}")
    x = res.x
    if np.abs(x - np.round(x)).max() > 1e-6:
        raise MatchingError("separable matching LP returned a fractional vertex")
    x = np.round(x).astype(np.int64)
    men_choice = x[:nd].reshape(n, ny + 1).argmax(axis=1)
    women_choice = x[nd:].reshape(m, nx + 1).argmax(axis=1)
    for cx in range(nx):
        for cy in range(ny):
            men = np.flatnonzero((xt == cx) & (men_choice == cy))
            women = np.flatnonzero((yt == cy) & (women_choice == cx))
            if men.size != women.size:
                raise MatchingError("separable matching LP violated market clearing")
            assignment[men] = women
    duals = -res.eqlin.marginals
    return MicroSolution(assignment, duals[:n], duals[n : n + m], float(gain @ x))


def solve_micro(market: MicroMarket) -> MicroSolution:
    if market.n_men <= ENUMERATION_CAP and market.n_women <= ENUMERATION_CAP:
        return micro_stable_matching(market)
    return assignment_matching(market)


def stability_violations(market: MicroMarket, sol: MicroSolution, tol: float = 1e-9) -> list[str]:
    """List every failed stability inequality; empty means stable."""
    out = []
    u, v, a = sol.u_i, sol.v_j, sol.assignment
    if np.any(np.bincount(a[a != SINGLE], minlength=market.n_women) > 1):
        out.append("a woman is matched twice")
    slack = u[:, None] + v[None, :] - market.phi_tilde
    for i, j in zip(*np.nonzero(slack < -tol)):
        out.append(f"blocking pair ({i}, {j}): u+v-Phi = {slack[i, j]:.3g}")
    for i in np.flatnonzero(u < market.phi_tilde_i0 - tol):
        out.append(f"man {i} prefers singlehood")
    for j in np.flatnonzero(v < market.phi_tilde_0j - tol):
        out.append(f"woman {j} prefers singlehood")
    taken = np.zeros(market.n_women, dtype=bool)
    for i, j in enumerate(a):
        if j == SINGLE:
            if abs(u[i] - market.phi_tilde_i0[i]) > tol:
                out.append(f"single man {i} has u != Phi_i0")
        else:
            taken[j] = True
            if abs(slack[i, j]) > tol:
                out.append(f"matched pair ({i}, {j}) does not split its surplus exactly")
    for j in np.flatnonzero(~taken):
        if abs(v[j] - market.phi_tilde_0j[j]) > tol:
            out.append(f"single woman {j} has v != Phi_0j")
    return out
