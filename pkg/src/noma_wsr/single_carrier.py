"""Single-carrier solvers: segment maximizer, power control, user selection.

All functions take a :class:`~noma_wsr.model.SingleCarrierView` whose users
are already listed in decoding order, and use zero-based positions.  Tail
vectors have one slot per position plus a trailing 0.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numba
import numpy as np

from .model import InstanceError, OpCounter, SingleCarrierView, f_segment

_LOG2E = 1.0 / math.log(2.0)


def max_f(sc: SingleCarrierView, j: int, i: int, budget: float, counter: OpCounter | None = None) -> float:
    """Maximizer of ``f_segment(sc, j, i, .)`` on ``[0, budget]``.

    The segment is increasing when ``j == 0`` or the last position's weight is
    at least the weight just before the segment; otherwise it is unimodal with
    peak ``c1`` which gets clipped to the interval.
    """
    if j == 0:
        if counter is not None:
            counter.add(comparisons=1)
        return budget
    wa, wb = sc.w[i], sc.w[j - 1]
    if counter is not None:
        counter.add(comparisons=2)
    if wa >= wb:
        return budget
    c1 = (wb * sc.eta[i] - wa * sc.eta[j - 1]) / (wa - wb)
    if counter is not None:
        counter.add(adds=2, muls=3, comparisons=2)
    return max(0.0, min(c1, budget))


def _groups(tails) -> list[tuple[int, int, float]]:
    """Maximal runs of equal tails as (first, last, value), last position excluded."""
    out = []
    start = 0
    K = len(tails) - 1
    for pos in range(1, K + 1):
        if pos == K or tails[pos] != tails[start]:
            out.append((start, pos - 1, float(tails[start])))
            start = pos
    return out


def _as_tails(sc: SingleCarrierView, tails) -> np.ndarray:
    tails = np.asarray(tails, dtype=float)
    if tails.size == sc.K:
        tails = np.append(tails, 0.0)
    if tails.size != sc.K + 1 or tails[-1] != 0.0:
        raise InstanceError("tails: need one entry per position followed by 0")
    if np.any(np.diff(tails) > 0) or tails[-1] < 0:
        raise InstanceError("tails: must be non-increasing and end at 0")
    return tails


def sc_value(sc: SingleCarrierView, tails) -> float:
    """Sum of f_i(x_i) over all positions, one log pair per equal-tail group."""
    tails = _as_tails(sc, tails)
    return float(sum(f_segment(sc, q, q2, t) for q, q2, t in _groups(tails)))


def sc_value_termwise(sc: SingleCarrierView, tails) -> float:
    tails = _as_tails(sc, tails)
    return float(sum(f_segment(sc, i, i, tails[i]) for i in range(sc.K)))


@numba.njit(cache=True)
def _max_f_kernel(w, eta, j, i, budget):
    # zero-based positions; returns (x*, adds, muls, comparisons)
    if j == 0:
        return budget, 0, 0, 1
    wa = w[i]
    wb = w[j - 1]
    if wa >= wb:
        return budget, 0, 0, 2
    c1 = (wb * eta[i] - wa * eta[j - 1]) / (wa - wb)
    return max(0.0, min(c1, budget)), 2, 3, 4


@numba.njit(cache=True)
def _scpc_kernel(w, eta, budget):
    L = w.size
    x = np.zeros(L + 1)
    start = np.zeros(L, dtype=np.bool_)
    adds = 0
    muls = 0
    comps = 0
    for i in range(L):
        xs, a, mu, c = _max_f_kernel(w, eta, i, i, budget)
        adds += a
        muls += mu
        comps += c
        j = i - 1
        while j >= 0 and x[j] < xs:
            comps += 2
            xs, a, mu, c = _max_f_kernel(w, eta, j, i, budget)
            adds += a
            muls += mu
            comps += c
            j -= 1
        comps += 2
        for p in range(j + 1, i + 1):
            x[p] = xs
            start[p] = False
        start[j + 1] = True
    return x, start, adds, muls, comps


@numba.njit(cache=True)
def _group_value(w, eta, W, x, start):
    """Objective of SCPC tails, one log pair per algorithm group."""
    L = w.size
    total = 0.0
    ops = 0
    q = 0
    while q < L:
        q2 = q
        while q2 + 1 < L and not start[q2 + 1]:
            q2 += 1
        t = x[q]
        v = w[q2] * math.log(t + eta[q2])
        if q > 0:
            v -= w[q - 1] * math.log(t + eta[q - 1])
            ops += 5
        total += v
        ops += 5
        q = q2 + 1
    return W * total * _LOG2E, ops


@dataclass
class ScpcResult:
    tails: np.ndarray  # (L+1,) over the active positions, trailing 0
    groups: list  # (first, last) position pairs as merged by the algorithm
    ops: OpCounter


def scpc(sc: SingleCarrierView, budget: float, active=None, counter: OpCounter | None = None) -> ScpcResult:
    """Optimal power control on one subcarrier for a fixed active set.

    ``active`` lists decoding positions of ``sc`` (all positions when
    omitted).  The returned tails cover only the active positions, in order,
    followed by a 0.  Positions are swept in decoding order; whenever the new
    segment optimum exceeds the previous tail, the algorithm steps back one
    position at a time and re-optimizes the merged segment.
    """
    view = sc if active is None else sc.restrict(active)
    counter = OpCounter() if counter is None else counter
    if view.K == 0:
        return ScpcResult(tails=np.zeros(1), groups=[], ops=counter)
    x, start, a, mu, c = _scpc_kernel(view.w, view.eta, float(budget))
    counter.add(a, mu, c)
    firsts = list(np.flatnonzero(start)) + [view.K]
    groups = [(int(firsts[k]), int(firsts[k + 1] - 1)) for k in range(len(firsts) - 1)]
    return ScpcResult(tails=x, groups=groups, ops=counter)


# ---------------------------------------------------------------------------
# SCUS dynamic program


@numba.njit(cache=True)
def _seg(w, eta, W, j, i, x):
    # 1-based positions as in the DP tables; j == 1 means no predecessor
    v = w[i - 1] * math.log(x + eta[i - 1])
    if j > 1:
        v -= w[j - 2] * math.log(x + eta[j - 2])
    return W * v * _LOG2E


@numba.njit(cache=True)
def _scus_kernel(w, eta, W, budget, M):
    K = w.size
    V = np.zeros((M + 1, K + 1, K + 1))
    X = np.zeros((M + 1, K + 1, K + 1))
    U = np.zeros((M + 1, K + 1, K + 1, 3), dtype=np.int64)
    adds = 0
    muls = 0
    comps = 0
    for j in range(1, K + 1):
        for i in range(j, K + 1):
            for m in range(1, M + 1):
                # MaxF and the segment gain, per cell as in the pseudocode
                comps += 1
                if j == 1:
                    xs = budget
                else:
                    comps += 1
                    wa = w[i - 1]
                    wb = w[j - 2]
                    if wa >= wb:
                        xs = budget
                    else:
                        c1 = (wb * eta[i - 1] - wa * eta[j - 2]) / (wa - wb)
                        xs = max(0.0, min(c1, budget))
                        adds += 2
                        muls += 3
                        comps += 2
                gain = _seg(w, eta, W, j, i, xs) - _seg(w, eta, W, j, i, 0.0)
                if j == 1:
                    adds += 3
                    muls += 6
                else:
                    adds += 7
                    muls += 10
                v0 = V[m, j - 1, j - 1]
                v1 = V[m - 1, j - 1, j - 1] + gain
                v2 = V[m, j - 1, i]
                adds += 1
                # the first group has no predecessor tail to stay below
                guard = xs > 0.0 and (j == 1 or xs < X[m - 1, j - 1, j - 1])
                comps += 2
                if guard and v1 >= v0 and v1 >= v2:
                    comps += 2
                    V[m, j, i] = v1
                    X[m, j, i] = xs
                    U[m, j, i, 0] = m - 1
                    U[m, j, i, 1] = j - 1
                    U[m, j, i, 2] = j - 1
                elif v2 >= v0:
                    comps += 1
                    V[m, j, i] = v2
                    X[m, j, i] = X[m, j - 1, i]
                    U[m, j, i, 0] = m
                    U[m, j, i, 1] = j - 1
                    U[m, j, i, 2] = i
                else:
                    comps += 1
                    V[m, j, i] = v0
                    X[m, j, i] = 0.0
                    U[m, j, i, 0] = m
                    U[m, j, i, 1] = j - 1
                    U[m, j, i, 2] = j - 1
    x = np.zeros(K + 1)
    m, j, i = M, K, K
    while True:
        for p in range(j, i + 1):
            x[p] = X[m, j, i]
        m, j, i = U[m, j, i, 0], U[m, j, i, 1], U[m, j, i, 2]
        comps += 1
        if m == 0 and j == 0 and i == 0:
            break
    return V, X, U, x, adds, muls, comps


@dataclass
class ScusResult:
    tails: np.ndarray  # (K+1,) zero-based positions, trailing 0
    value: float  # sum of f_i(x_i) over all positions
    V: np.ndarray
    X: np.ndarray
    U: np.ndarray
    ops: OpCounter

    @property
    def active(self) -> np.ndarray:
        """Positions whose tail strictly exceeds the next one."""
        return np.flatnonzero(self.tails[:-1] > self.tails[1:])


def scus(sc: SingleCarrierView, budget: float, M: int, counter: OpCounter | None = None) -> ScusResult:
    """Optimal user selection and power control on one subcarrier.

    DP tables use the 1-based layout ``V[m, j, i]`` with row/column 0 as the
    empty prefix; ``V[M, K, K]`` is the value gained over all-zero tails.
    """
    counter = OpCounter() if counter is None else counter
    M = min(int(M), sc.K)
    if M < 0:
        raise ValueError("M must be non-negative")
    V, X, U, x, a, mu, c = _scus_kernel(sc.w, sc.eta, sc.W_n, float(budget), M)
    counter.add(a, mu, c)
    tails = np.append(x[1:], 0.0)
    base = f_segment(sc, 0, sc.K - 1, 0.0)
    return ScusResult(tails=tails, value=float(V[M, sc.K, sc.K] + base), V=V, X=X, U=U, ops=counter)


# ---------------------------------------------------------------------------
# brute-force reference


def _chain_max(funcs, grid):
    """Exact maximum of sum_l funcs[l](y_l) over grid points with y_1 >= y_2 >= ...

    Returns (value, chosen points).  ``grid`` must be sorted ascending.
    """
    best = funcs[0](grid)
    choice = []
    for g in funcs[1:]:
        # best achievable with the previous coordinate at or above grid[t]
        arg = _suffix_argmax(best)
        choice.append(arg)
        best = g(grid) + best[arg]
    t = int(np.argmax(best))
    value = float(best[t])
    pts = [t]
    for arg in reversed(choice):
        t = int(arg[t])
        pts.append(t)
    pts.reverse()
    return value, grid[pts]


def _suffix_argmax(a):
    """arg[t] = index of the largest entry of ``a[t:]`` (earliest on ties)."""
    G = a.size
    rev = a[::-1]
    record = np.where(rev == np.maximum.accumulate(rev), np.arange(G), 0)
    return (G - 1 - np.maximum.accumulate(record))[::-1]


def _subset_funcs(sc: SingleCarrierView, subset):
    funcs = []
    prev = 0
    for pos in subset:
        funcs.append(lambda y, j=prev, i=pos: f_segment(sc, j, i, y))
        prev = pos + 1
    tail_const = f_segment(sc, prev, sc.K - 1, 0.0) if prev < sc.K else 0.0
    return funcs, tail_const


def oracle_grid(sc: SingleCarrierView, subset, budget: float, grid_points: int = 200, rel_step: float = 1e-2):
    """Uniform grid on ``[0, budget]`` merged with a geometric grid.

    The geometric part starts three decades below the smallest normalized
    noise in ``subset`` and grows by ``1 + rel_step`` per point, which keeps
    ``(g[t+1] + eta) / (g[t] + eta)`` close to 1 for every position.
    """
    parts = [np.linspace(0.0, budget, grid_points + 1)]
    eta_min = float(np.min(sc.eta[list(subset)]))
    lo = 1e-3 * eta_min
    if budget > lo:
        count = int(math.ceil(math.log(budget / lo) / math.log1p(rel_step)))
        parts.append(lo * np.exp(np.linspace(0.0, math.log(budget / lo), count + 1)))
    grid = np.unique(np.concatenate(parts))
    return grid[grid <= budget]


def _rounding_gap(sc: SingleCarrierView, subset, grid) -> float:
    """Upper bound on (true optimum) - (grid optimum) for one subset.

    Rounding every tail of a feasible point down to the grid keeps it
    feasible, and on a cell ``[g, g']`` each segment can gain at most
    ``W w_i log2((g' + eta_i) / (g + eta_i))`` because its subtracted log
    term only grows with the tail.
    """
    gap = 0.0
    for pos in subset:
        ratio = np.log2((grid[1:] + sc.eta[pos]) / (grid[:-1] + sc.eta[pos]))
        gap += sc.W_n * sc.w[pos] * float(np.max(ratio, initial=0.0))
    return gap


def grid_refine(
    sc: SingleCarrierView,
    subset,
    budget: float,
    grid_points: int = 200,
    passes: int = 3,
    rel_step: float = 1e-2,
):
    """Grid search over monotone tails for a fixed active subset.

    Solves the chain exactly on :func:`oracle_grid`, then zooms ``passes``
    times, each pass splitting the incumbent's neighbouring cells tenfold.
    Returns ``(value, tails, gap_bound)`` with tails laid out over all
    positions; the true optimum is at most ``value + gap_bound``.
    """
    subset = list(subset)
    funcs, const = _subset_funcs(sc, subset)
    tails = np.zeros(sc.K + 1)
    if not subset or budget <= 0:
        return sc_value(sc, tails), tails, 0.0
    grid = oracle_grid(sc, subset, budget, grid_points, rel_step)
    value, pts = _chain_max(funcs, grid)
    upper = value + _rounding_gap(sc, subset, grid)
    for _ in range(passes):
        idx = np.searchsorted(grid, pts)
        lo = grid[np.maximum(idx - 1, 0)]
        hi = grid[np.minimum(idx + 1, grid.size - 1)]
        windows = [np.linspace(a, b, 21) for a, b in zip(lo, hi)]
        grid = np.unique(np.concatenate(windows + [pts, [0.0, budget]]))
        refined, new_pts = _chain_max(funcs, grid)
        if refined >= value:
            value, pts = refined, new_pts
    prev = 0
    for pos, p in zip(subset, pts):
        tails[prev:pos + 1] = p
        prev = pos + 1
    return value + const, tails, max(0.0, upper - value)


@dataclass
class OracleResult:
    value: float
    tails: np.ndarray
    gap_bound: float

    def to_dict(self) -> dict:
        return {"value": self.value, "tails": self.tails.tolist(), "gap_bound": self.gap_bound}


def sc_oracle(
    sc: SingleCarrierView,
    budget: float,
    M: int,
    grid_points: int = 200,
    max_subsets: int = 5000,
    rel_step: float = 1e-2,
) -> OracleResult:
    """Enumerate every active subset of size <= M and grid-search each.

    ``gap_bound`` certifies that no allocation beats ``value + gap_bound``.
    """
    if grid_points < 100:
        raise ValueError("grid_points must be at least 100")
    M = min(int(M), sc.K)
    n_subsets = sum(math.comb(sc.K, s) for s in range(M + 1))
    if n_subsets > max_subsets:
        raise ValueError(f"oracle refused: {n_subsets} subsets exceed the cap of {max_subsets}")
    best = None
    upper = -math.inf
    for size in range(M + 1):
        for subset in itertools.combinations(range(sc.K), size):
            value, tails, gap = grid_refine(sc, subset, budget, grid_points, rel_step=rel_step)
            upper = max(upper, value + gap)
            if best is None or value > best[0]:
                best = (value, tails)
    # no subset's true optimum can exceed its grid value plus its own gap
    return OracleResult(best[0], best[1], upper - best[0])
