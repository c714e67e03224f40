"""Multi-carrier budget optimization, the joint heuristic, and baselines.

The first stage distributes per-subcarrier budgets over the capped simplex
``{b : sum(b) <= P_max, 0 <= b <= caps}`` by projected gradient ascent with
an exact line search along the projection arc; the second stage is SCPC on a fixed
active set (``mcpc``) or SCUS with user selection (``jspa``).
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .model import (
    DecodingOrder,
    Instance,
    InstanceError,
    OpCounter,
    SingleCarrierView,
    carrier_view,
    decoding_order,
    f_segment,
    rate_matrix,
)
from .single_carrier import _LOG2E, _group_value, _scpc_kernel, scpc, scus

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


# ---------------------------------------------------------------------------
# capped simplex projection


@numba.njit(cache=True)
def _project_kernel(y, P_max, caps, tol):
    N = y.size
    z = np.minimum(np.maximum(y, 0.0), caps)
    if z.sum() <= P_max:
        return z, 0.0, N
    lo = 0.0
    hi = y.max()
    ops = 0
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        s = 0.0
        for n in range(N):
            s += min(max(y[n] - mid, 0.0), caps[n])
        ops += 4 * N + 3
        if s > P_max:
            lo = mid
        else:
            hi = mid
    for n in range(N):
        z[n] = min(max(y[n] - hi, 0.0), caps[n])
    return z, hi, ops


def project_capped_simplex(y, P_max: float, caps, tol: float = 1e-12) -> np.ndarray:
    """Euclidean projection onto ``{b : sum(b) <= P_max, 0 <= b <= caps}``.

    Shifts every coordinate by the same threshold, found by bisection, then
    clips to the box.
    """
    y = np.asarray(y, dtype=float)
    caps = np.broadcast_to(np.asarray(caps, dtype=float), y.shape).copy()
    z, _, _ = _project_kernel(y, float(P_max), caps, tol)
    return _enforce_budget(z, P_max)


def _enforce_budget(z, P_max):
    # remove any rounding excess from the largest coordinates
    for _ in range(8):
        excess = z.sum() - P_max
        if excess <= 0:
            break
        k = int(np.argmax(z))
        z[k] = max(0.0, z[k] - max(excess, np.spacing(z[k])))
    return z


# ---------------------------------------------------------------------------
# second stage


def second_stage_value(sc: SingleCarrierView, active, budget: float, counter: OpCounter | None = None) -> float:
    """Optimal single-carrier value for the given active positions and budget."""
    view = sc.restrict(active)
    if view.K == 0:
        return 0.0
    x, start, a, mu, c = _scpc_kernel(view.w, view.eta, float(budget))
    v, ops = _group_value(view.w, view.eta, view.W_n, x, start)
    if counter is not None:
        counter.add(a, mu + ops, c)
    return float(v)


@numba.njit(cache=True)
def _gradient_kernel(w, eta, W, budget):
    L = w.size
    x, start, adds, muls, comps = _scpc_kernel(w, eta, np.inf)
    g = 0.0
    q = 0
    while q < L:
        q2 = q
        while q2 + 1 < L and not start[q2 + 1]:
            q2 += 1
        comps += 1
        # groups whose unconstrained tail is above the budget are capped by it
        if x[q] > budget:
            d = w[q2] / (budget + eta[q2])
            adds += 1
            muls += 1
            if q > 0:
                d -= w[q - 1] / (budget + eta[q - 1])
                adds += 2
                muls += 1
            g += d
            adds += 1
        q = q2 + 1
    return W * g * _LOG2E, adds, muls + 2, comps


def second_stage_gradient(sc: SingleCarrierView, active, budget: float, counter: OpCounter | None = None) -> float:
    """Right derivative of :func:`second_stage_value` with respect to the budget."""
    view = sc.restrict(active)
    if view.K == 0:
        return 0.0
    g, a, mu, c = _gradient_kernel(view.w, view.eta, view.W_n, float(budget))
    if counter is not None:
        counter.add(a, mu, c)
    return float(g)


@numba.njit(cache=True)
def _values_kernel(ws, etas, lens, W, budgets):
    N = lens.size
    out = np.zeros(N)
    adds = 0
    muls = 0
    comps = 0
    for n in range(N):
        L = lens[n]
        if L == 0:
            continue
        w = ws[n, :L]
        eta = etas[n, :L]
        x, start, a, mu, c = _scpc_kernel(w, eta, budgets[n])
        v, ops = _group_value(w, eta, W, x, start)
        out[n] = v
        adds += a + ops // 2
        muls += mu + ops - ops // 2
        comps += c
    return out, adds, muls, comps


@numba.njit(cache=True)
def _gradients_kernel(ws, etas, lens, W, budgets):
    N = lens.size
    out = np.zeros(N)
    adds = 0
    muls = 0
    comps = 0
    for n in range(N):
        L = lens[n]
        if L == 0:
            continue
        g, a, mu, c = _gradient_kernel(ws[n, :L], etas[n, :L], W, budgets[n])
        out[n] = g
        adds += a
        muls += mu
        comps += c
    return out, adds, muls, comps


class _Stage:
    """Second-stage data for a fixed assignment, packed for the kernels."""

    def __init__(self, views: list[SingleCarrierView], active: list[np.ndarray]):
        N = len(views)
        width = max([1] + [len(a) for a in active])
        self.ws = np.zeros((N, width))
        self.etas = np.ones((N, width))
        self.lens = np.zeros(N, dtype=np.int64)
        self.W = views[0].W_n
        # constant making sum(values + const) the weighted sum-rate
        self.const = np.zeros(N)
        for n, (sc, pos) in enumerate(zip(views, active)):
            pos = np.asarray(pos, dtype=int)
            L = pos.size
            self.lens[n] = L
            self.ws[n, :L] = sc.w[pos]
            self.etas[n, :L] = sc.eta[pos]
            last = pos[-1] + 1 if L else 0
            tail = f_segment(sc, last, sc.K - 1, 0.0) if last < sc.K else 0.0
            self.const[n] = tail + sc.W_n * sc.w[-1] * math.log2(1.0 / sc.eta[-1])

    def values(self, budgets, counter):
        v, a, mu, c = _values_kernel(self.ws, self.etas, self.lens, self.W, budgets)
        counter.add(a, mu, c)
        return v

    def gradient(self, budgets, counter):
        g, a, mu, c = _gradients_kernel(self.ws, self.etas, self.lens, self.W, budgets)
        counter.add(a, mu, c)
        return g

    def objective(self, budgets, counter):
        return float(np.sum(self.values(budgets, counter) + self.const))


# ---------------------------------------------------------------------------
# reports and assignments


@dataclass
class SolveReport:
    """Outcome of one solve; ``wsr`` is recomputed from ``power``."""

    solver: str
    power: np.ndarray  # (K, N) watts
    rates: np.ndarray  # (K, N) bit/s
    wsr: float
    budgets: np.ndarray  # (N,)
    assignment: list  # per subcarrier, active users in decoding order
    iterations: int = 0
    converged: bool = True
    ops: OpCounter = field(default_factory=OpCounter)
    ops_per_iteration: list = field(default_factory=list)
    trace: list = field(default_factory=list)  # (iteration, budgets, objective)
    extra: dict = field(default_factory=dict)

    @property
    def user_rates(self) -> np.ndarray:
        return self.rates.sum(axis=1)

    def to_dict(self, include_trace: bool = False) -> dict:
        out = {
            "solver": self.solver,
            "wsr": self.wsr,
            "converged": self.converged,
            "iterations": self.iterations,
            "ops": self.ops.as_dict(),
            "budgets": self.budgets.tolist(),
            "assignment": [list(map(int, a)) for a in self.assignment],
            "user_rates": self.user_rates.tolist(),
            "power": self.power.tolist(),
        }
        out.update(self.extra)
        if include_trace:
            out["trace"] = [
                {"iteration": it, "budgets": b.tolist(), "objective": obj} for it, b, obj in self.trace
            ]
        return out

    def to_json(self, include_trace: bool = False) -> str:
        return json.dumps(self.to_dict(include_trace), indent=2)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", "n", "budget", "objective"])
        for it, budgets, obj in self.trace:
            for n, b in enumerate(budgets):
                writer.writerow([it, n, repr(float(b)), repr(float(obj))])
        return buf.getvalue()


def _report(solver, inst, order, power, budgets, assignment, **kw) -> SolveReport:
    rates = rate_matrix(inst, order, power)
    return SolveReport(
        solver=solver,
        power=power,
        rates=rates,
        wsr=float(inst.weight @ rates.sum(axis=1)),
        budgets=np.asarray(budgets, dtype=float),
        assignment=assignment,
        **kw,
    )


def _positions(inst: Instance, order: DecodingOrder, assignment) -> list[np.ndarray]:
    if len(assignment) != inst.N:
        raise InstanceError(f"assignment: expected {inst.N} subcarriers, got {len(assignment)}")
    out = []
    for n, users in enumerate(assignment):
        users = np.asarray(list(users), dtype=int)
        if users.size > inst.M:
            raise InstanceError(f"assignment[{n}]: {users.size} users exceed M={inst.M}")
        if np.any((users < 0) | (users >= inst.K)) or np.unique(users).size != users.size:
            raise InstanceError(f"assignment[{n}]: invalid or repeated user index")
        out.append(np.sort(order.pi_inv[n, users]))
    return out


def _powers_from_active(inst, views, active, budgets, counter) -> np.ndarray:
    power = np.zeros((inst.K, inst.N))
    for n, pos in enumerate(active):
        if len(pos) == 0:
            continue
        x = scpc(views[n], budgets[n], pos, counter).tails
        power[views[n].users[pos], n] = np.maximum(x[:-1] - x[1:], 0.0)
    return power


# ---------------------------------------------------------------------------
# projected gradient ascent


def golden_section_max(phi, a: float, b: float, tol: float):
    """Maximize a unimodal ``phi`` on ``[a, b]``; returns (argmax, value)."""
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = phi(c), phi(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = phi(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = phi(d)
    return (c, fc) if fc >= fd else (d, fd)


def arc_search(phi, alpha_max: float, tol: float):
    """Maximize ``phi`` on ``[0, alpha_max]`` along a projection arc.

    The arc bends whenever a coordinate reaches a bound, so ``phi`` can have
    several humps.  A geometric ladder ``alpha_max / 2**k`` down to ``tol``
    locates the best bracket, which golden-section then refines.  A hump
    narrower than the ladder spacing at its location can be missed.
    """
    alphas = [0.0]
    a = alpha_max
    while a > tol:
        alphas.append(a)
        a *= 0.5
    alphas = np.array(sorted(alphas))
    values = np.array([phi(x) for x in alphas])
    t = int(np.argmax(values))
    lo = alphas[max(t - 1, 0)]
    hi = alphas[min(t + 1, alphas.size - 1)]
    alpha, value = golden_section_max(phi, lo, hi, tol)
    if value >= values[t]:
        return alpha, value
    return float(alphas[t]), float(values[t])


def _exit_step(budgets, direction, caps):
    """Smallest step after which every moving coordinate has left the box."""
    with np.errstate(divide="ignore", invalid="ignore"):
        room = np.where(direction > 0, caps - budgets, budgets)
        steps = np.where(direction != 0, room / np.abs(direction), 0.0)
    return float(np.max(steps))


def _ascent_step(stage, budgets, P_max, caps, counter, line_tol):
    """One projected gradient step with exact line search.

    Returns (new budgets, objective at new budgets, objective at old budgets).
    """
    f0 = stage.objective(budgets, counter)
    grad = stage.gradient(budgets, counter)
    if not np.any(grad):
        return budgets, f0, f0
    alpha_max = _exit_step(budgets, grad, caps)
    if alpha_max <= 0:
        return budgets, f0, f0
    scale = float(np.max(np.abs(grad)))

    def phi(alpha):
        z, _, ops = _project_kernel(budgets + alpha * grad, P_max, caps, 1e-12)
        counter.add(adds=ops)
        return stage.objective(z, counter)

    alpha, f1 = arc_search(phi, alpha_max, line_tol * P_max / scale)
    if f1 <= f0:
        return budgets, f0, f0
    new = project_capped_simplex(budgets + alpha * grad, P_max, caps)
    return new, stage.objective(new, counter), f0


def mcpc(
    inst: Instance,
    assignment,
    epsilon: float = 1e-4,
    max_iter: int = 10_000,
    line_tol: float = 1e-10,
    order: DecodingOrder | None = None,
) -> SolveReport:
    """Optimal power control across subcarriers for a fixed user assignment.

    ``assignment[n]`` lists the (global) users allowed on subcarrier ``n``.
    Starts from zero budgets and stops once the squared budget change of one
    iteration is at most ``epsilon``.
    """
    order = decoding_order(inst) if order is None else order
    views = [carrier_view(inst, order, n) for n in range(inst.N)]
    active = _positions(inst, order, assignment)
    stage = _Stage(views, active)
    caps = np.minimum(inst.P_max_n, inst.P_max)
    budgets = np.zeros(inst.N)
    counter = OpCounter()
    trace = [(0, budgets.copy(), stage.objective(budgets, OpCounter()))]
    per_iter = []
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        before = counter.total
        new, f_new, _ = _ascent_step(stage, budgets, inst.P_max, caps, counter, line_tol)
        per_iter.append(counter.total - before)
        moved = float(np.sum((new - budgets) ** 2))
        budgets = new
        trace.append((it, budgets.copy(), f_new))
        if moved <= epsilon:
            converged = True
            break
    power = _powers_from_active(inst, views, active, budgets, counter)
    users = [views[n].users[pos].tolist() for n, pos in enumerate(active)]
    return _report(
        "mcpc", inst, order, power, budgets, users,
        iterations=it, converged=converged, ops=counter, ops_per_iteration=per_iter, trace=trace,
    )


def jspa(
    inst: Instance,
    epsilon: float = 1e-4,
    max_iter: int = 10_000,
    line_tol: float = 1e-10,
    order: DecodingOrder | None = None,
) -> SolveReport:
    """Joint subcarrier and power allocation heuristic.

    Each iteration re-runs SCUS on every subcarrier at the current budget to
    pick the active users, then takes one projected gradient step on the
    budgets for that selection.  A subcarrier with zero budget is probed at a
    tiny positive budget so its selection follows the right derivative.
    """
    order = decoding_order(inst) if order is None else order
    views = [carrier_view(inst, order, n) for n in range(inst.N)]
    caps = np.minimum(inst.P_max_n, inst.P_max)
    probe = 1e-9 * caps
    budgets = np.zeros(inst.N)
    counter = OpCounter()
    per_iter = []
    trace = []
    converged = False
    it = 0

    def select(b):
        results = [scus(sc, b[n] if b[n] > 0 else probe[n], inst.M, counter) for n, sc in enumerate(views)]
        return [r.active for r in results]

    active = select(budgets)
    stage = _Stage(views, active)
    trace.append((0, budgets.copy(), stage.objective(budgets, OpCounter())))
    while it < max_iter:
        it += 1
        before = counter.total
        if it > 1:
            active = select(budgets)
            stage = _Stage(views, active)
        new, f_new, _ = _ascent_step(stage, budgets, inst.P_max, caps, counter, line_tol)
        per_iter.append(counter.total - before)
        moved = float(np.sum((new - budgets) ** 2))
        budgets = new
        trace.append((it, budgets.copy(), f_new))
        if moved <= epsilon:
            converged = True
            break
    # final selection at the final budgets
    power = np.zeros((inst.K, inst.N))
    users = []
    for n, sc in enumerate(views):
        res = scus(sc, budgets[n], inst.M, counter)
        x = res.tails
        power[sc.users, n] = np.maximum(x[:-1] - x[1:], 0.0)
        users.append(sc.users[res.active].tolist())
    return _report(
        "jspa", inst, order, power, budgets, users,
        iterations=it, converged=converged, ops=counter, ops_per_iteration=per_iter, trace=trace,
    )


# ---------------------------------------------------------------------------
# baselines and references


def ftpc(inst: Instance, decay: float = 0.4, order: DecodingOrder | None = None) -> SolveReport:
    """Fractional transmit power control with greedy subcarrier allocation.

    Every subcarrier gets ``min(P_max / N, P_max_n)``.  It serves the ``M``
    users with the largest weighted single-user rate at that budget (the
    ``M`` lowest normalized noises when weights are equal) and splits the
    budget in proportion to ``eta_tilde ** decay``.
    """
    order = decoding_order(inst) if order is None else order
    eta = inst.eta_tilde
    budget = np.minimum(inst.P_max / inst.N, inst.P_max_n)
    power = np.zeros((inst.K, inst.N))
    users = []
    for n in range(inst.N):
        score = inst.weight * np.log2(1.0 + budget[n] / eta[:, n])
        # stable: ties keep the lower user index
        chosen = np.argsort(-score, kind="stable")[: inst.M]
        share = eta[chosen, n] ** decay
        power[chosen, n] = budget[n] * share / share.sum()
        users.append(sorted(chosen.tolist(), key=lambda k: order.pi_inv[n, k]))
    return _report("ftpc", inst, order, power, budget, users)


@numba.njit(cache=True)
def _curve_value(gt, gwa, gea, gwb, geb, ng, W, b):
    v = 0.0
    for g in range(ng):
        x = min(gt[g], b)
        v += gwa[g] * math.log(x + gea[g])
        if gwb[g] > 0.0:
            v -= gwb[g] * math.log(x + geb[g])
    return W * v * _LOG2E


@numba.njit(cache=True)
def _curve_slope(gt, gwa, gea, gwb, geb, ng, W, b):
    d = 0.0
    for g in range(ng):
        if gt[g] > b:
            d += gwa[g] / (b + gea[g])
            if gwb[g] > 0.0:
                d -= gwb[g] / (b + geb[g])
    return W * d * _LOG2E


@numba.njit(cache=True)
def _budget_for_price(gt, gwa, gea, gwb, geb, ng, W, cap, lam):
    # largest budget in [0, cap] whose slope is still >= lam
    if _curve_slope(gt, gwa, gea, gwb, geb, ng, W, 0.0) < lam:
        return 0.0
    if _curve_slope(gt, gwa, gea, gwb, geb, ng, W, cap) >= lam:
        return cap
    lo = 0.0
    hi = cap
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if _curve_slope(gt, gwa, gea, gwb, geb, ng, W, mid) >= lam:
            lo = mid
        else:
            hi = mid
    return lo


@numba.njit(cache=True)
def _waterfill_all(combos, GT, GWA, GEA, GWB, GEB, NG, CONST, W, caps, P_max):
    """Best budget split for every assignment (row of ``combos``)."""
    A, N = combos.shape
    values = np.empty(A)
    budgets = np.empty((A, N))
    b = np.empty(N)
    for a in range(A):
        lam_hi = 0.0
        total0 = 0.0
        for n in range(N):
            c = combos[a, n]
            s0 = _curve_slope(GT[c], GWA[c], GEA[c], GWB[c], GEB[c], NG[c], W, 0.0)
            lam_hi = max(lam_hi, s0)
            b[n] = _budget_for_price(GT[c], GWA[c], GEA[c], GWB[c], GEB[c], NG[c], W, caps[n], 0.0)
            total0 += b[n]
        if total0 > P_max:
            lo = 0.0
            hi = lam_hi
            for _ in range(100):
                lam = 0.5 * (lo + hi)
                tot = 0.0
                for n in range(N):
                    c = combos[a, n]
                    tot += _budget_for_price(GT[c], GWA[c], GEA[c], GWB[c], GEB[c], NG[c], W, caps[n], lam)
                if tot > P_max:
                    lo = lam
                else:
                    hi = lam
            for n in range(N):
                c = combos[a, n]
                b[n] = _budget_for_price(GT[c], GWA[c], GEA[c], GWB[c], GEB[c], NG[c], W, caps[n], hi)
        v = 0.0
        for n in range(N):
            c = combos[a, n]
            v += _curve_value(GT[c], GWA[c], GEA[c], GWB[c], GEB[c], NG[c], W, b[n]) + CONST[c]
            budgets[a, n] = b[n]
        values[a] = v
    return values, budgets


def assignment_count(K: int, N: int, M: int) -> int:
    """Number of assignments with at most ``M`` users per subcarrier."""
    return sum(math.comb(K, s) for s in range(M + 1)) ** N


def exhaustive_oracle(inst: Instance, cap: int = 10**6, order: DecodingOrder | None = None) -> SolveReport:
    """Globally optimal allocation by enumerating subcarrier assignments.

    Each assignment's budget split is a concave problem, solved exactly by
    water-filling on the second-stage slopes.  Only assignments with exactly
    ``min(M, K)`` users per subcarrier are evaluated: a larger active set can
    always reproduce a smaller one by giving zero power to the extra users.
    """
    required = assignment_count(inst.K, inst.N, inst.M)
    if required > cap:
        raise ValueError(f"oracle refused: {required} assignments exceed the cap of {cap}")
    order = decoding_order(inst) if order is None else order
    views = [carrier_view(inst, order, n) for n in range(inst.N)]
    size = min(inst.M, inst.K)
    subsets = list(itertools.combinations(range(inst.K), size))
    S = len(subsets)
    width = size
    # one concave curve per (subcarrier, subset), flattened as n * S + s
    GT = np.zeros((inst.N * S, width))
    GWA = np.zeros_like(GT)
    GEA = np.ones_like(GT)
    GWB = np.zeros_like(GT)
    GEB = np.ones_like(GT)
    NG = np.zeros(inst.N * S, dtype=np.int64)
    CONST = np.zeros(inst.N * S)
    for n, sc in enumerate(views):
        stage = _Stage([sc] * len(subsets), [np.array(s) for s in subsets])
        for s, subset in enumerate(subsets):
            r = n * S + s
            view = sc.restrict(subset)
            x, start, _, _, _ = _scpc_kernel(view.w, view.eta, np.inf)
            firsts = list(np.flatnonzero(start)) + [view.K]
            for g in range(len(firsts) - 1):
                q, q2 = firsts[g], firsts[g + 1] - 1
                GT[r, g] = x[q]
                GWA[r, g], GEA[r, g] = view.w[q2], view.eta[q2]
                if q > 0:
                    GWB[r, g], GEB[r, g] = view.w[q - 1], view.eta[q - 1]
            NG[r] = len(firsts) - 1
            CONST[r] = stage.const[s]
    combos = np.array(list(itertools.product(range(S), repeat=inst.N)), dtype=np.int64)
    combos += (np.arange(inst.N) * S)[None, :]
    caps = np.minimum(inst.P_max_n, inst.P_max)
    values, budgets = _waterfill_all(combos, GT, GWA, GEA, GWB, GEB, NG, CONST, inst.W_n, caps, inst.P_max)
    best = int(np.argmax(values))
    b = project_capped_simplex(budgets[best], inst.P_max, caps)
    active = [np.array(subsets[c - n * S]) for n, c in enumerate(combos[best])]
    counter = OpCounter()
    power = _powers_from_active(inst, views, active, b, counter)
    users = [views[n].users[pos].tolist() for n, pos in enumerate(active)]
    return _report(
        "oracle", inst, order, power, b, users,
        ops=counter, extra={"assignments_evaluated": int(combos.shape[0]), "assignments_total": required},
    )
