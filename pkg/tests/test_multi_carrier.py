import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noma_wsr.channel import ChannelConfig, generate_instance
from noma_wsr.model import Instance, SingleCarrierView, carrier_view, decoding_order, f_segment
from noma_wsr.multi_carrier import (
    arc_search,
    assignment_count,
    exhaustive_oracle,
    ftpc,
    jspa,
    mcpc,
    project_capped_simplex,
    second_stage_gradient,
    second_stage_value,
)
from noma_wsr.single_carrier import sc_value


def make(gain, weight=None, P_max=1.0, caps=None, M=1, W_n=1.0):
    gain = np.asarray(gain, dtype=float)
    K, N = gain.shape
    return Instance(
        gain=gain,
        noise=np.ones((K, N)),
        weight=np.ones(K) if weight is None else weight,
        W_n=W_n,
        P_max=P_max,
        P_max_n=np.full(N, P_max) if caps is None else caps,
        M=M,
    )


def table(seed, K, N, M):
    return generate_instance(ChannelConfig(seed=seed, N=N), K, M)


def check_constraints(inst, report, atol=1e-9):
    P = report.power
    assert np.all(P >= 0)
    assert P.sum() <= inst.P_max * (1 + atol)
    assert np.all(P.sum(axis=0) <= inst.P_max_n * (1 + atol))
    assert np.all(np.count_nonzero(P, axis=0) <= inst.M)


# projection


def test_projection_examples():
    assert project_capped_simplex([0.6, 0.6], 1.0, [1, 1]) == pytest.approx([0.5, 0.5])
    assert project_capped_simplex([2.0, -1.0], 1.0, [1, 1]) == pytest.approx([1.0, 0.0])
    z = project_capped_simplex([0.8, 0.1], 0.7, [1, 1])
    assert z == pytest.approx([0.7, 0.0], abs=1e-10)
    # KKT: y - z = tau on free coordinates, tau <= y on the zero one
    tau = 0.8 - z[0]
    assert tau >= 0 and 0.1 - tau <= 1e-10
    assert abs(z.sum() - 0.7) <= 1e-10


def test_projection_inside_is_identity():
    y = np.array([0.1, 0.2, 0.3])
    assert project_capped_simplex(y, 1.0, [1, 1, 1]) == pytest.approx(y, abs=1e-12)


def test_projection_is_nearest_feasible_point():
    rng = np.random.default_rng(7)
    caps = np.array([0.5, 1.0, 0.8, 0.3])
    for _ in range(1000):
        y = rng.normal(0.3, 0.8, 4)
        z = project_capped_simplex(y, 1.2, caps)
        assert np.all(z >= 0) and np.all(z <= caps) and z.sum() <= 1.2 + 1e-12
        feas = rng.random((100, 4)) * caps
        feas *= np.minimum(1.0, 1.2 / feas.sum(axis=1))[:, None]
        assert np.linalg.norm(z - y) <= np.min(np.linalg.norm(feas - y, axis=1)) + 1e-12


# second stage


def two_user_view():
    return SingleCarrierView(w=np.array([2.0, 1.0]), eta=np.array([4.0, 1.0]), W_n=1.0)


def test_second_stage_value_examples():
    sc = two_user_view()
    base = sum(f_segment(sc, i, i, 0.0) for i in range(2))
    assert second_stage_value(sc, [0, 1], 0.0) == pytest.approx(base)
    assert second_stage_value(sc, [1], 3.0) == pytest.approx(math.log2(3.0 + 1.0))


def test_second_stage_value_equals_scpc_value():
    sc = two_user_view()
    # position 1 peaks at 2, position 0 takes the rest
    assert second_stage_value(sc, [0, 1], 5.0) == pytest.approx(sc_value(sc, [5.0, 2.0, 0.0]))


def test_single_user_gradient():
    sc = SingleCarrierView(w=np.array([0.7]), eta=np.array([1.5]), W_n=3.0)
    assert second_stage_gradient(sc, [0], 2.0) == pytest.approx(0.7 * 3.0 / ((2.0 + 1.5) * math.log(2)))


def test_gradient_right_derivative_at_kink():
    sc = two_user_view()
    # below 2 both tails equal the budget; above it only the head group moves
    h = 1e-7
    right = (second_stage_value(sc, [0, 1], 2.0 + h) - second_stage_value(sc, [0, 1], 2.0)) / h
    assert second_stage_gradient(sc, [0, 1], 2.0) == pytest.approx(right, rel=1e-5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_second_stage_value_is_concave(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(1, 5))
    eta = np.sort(rng.uniform(0.05, 3.0, K))[::-1]
    sc = SingleCarrierView(w=rng.uniform(0.1, 1, K), eta=eta, W_n=1.0)
    a, b = rng.uniform(0, 4, 2)
    mid = second_stage_value(sc, range(K), (a + b) / 2)
    ends = 0.5 * (second_stage_value(sc, range(K), a) + second_stage_value(sc, range(K), b))
    assert mid >= ends - 1e-9 * max(1.0, abs(ends))


# line search


def test_arc_search_finds_the_higher_hump():
    def phi(a):
        # a narrow hump near zero and a broad, higher one further out
        return math.exp(-((a - 0.01) ** 2) / 1e-5) + 2 * math.exp(-((a - 0.3) ** 2) / 2e-2)

    alpha, value = arc_search(phi, 1.0, 1e-10)
    assert alpha == pytest.approx(0.3, abs=1e-6)
    assert value == pytest.approx(2.0, rel=1e-9)


# MCPC


def test_mcpc_single_subcarrier_uses_capped_budget():
    inst = make([[2.0], [0.5]], weight=[1.0, 0.3], P_max=2.0, caps=[1.5], M=2)
    rep = mcpc(inst, [[0, 1]])
    assert rep.budgets == pytest.approx([1.5])
    assert rep.converged


def test_mcpc_identical_subcarriers_split_equally():
    inst = make([[2.0, 2.0], [0.5, 0.5]], weight=[1.0, 0.6], P_max=2.0, M=2)
    rep = mcpc(inst, [[0, 1], [0, 1]], epsilon=1e-12)
    assert rep.budgets == pytest.approx([1.0, 1.0], abs=1e-6)


def test_mcpc_ascent_is_monotone():
    inst = table(3, K=4, N=4, M=2)
    rep = mcpc(inst, [[0, 1], [1, 2], [2, 3], [0, 3]], epsilon=1e-8)
    objectives = [obj for _, _, obj in rep.trace]
    assert all(b >= a - 1e-10 * abs(a) for a, b in zip(objectives, objectives[1:]))
    check_constraints(inst, rep)


def test_mcpc_reports_nonconvergence():
    inst = table(3, K=4, N=4, M=2)
    rep = mcpc(inst, [[0, 1], [1, 2], [2, 3], [0, 3]], max_iter=1, epsilon=1e-12)
    assert not rep.converged and rep.iterations == 1
    check_constraints(inst, rep)


def test_mcpc_matches_budget_grid_and_frozen_value():
    inst = table(0, K=3, N=2, M=2)
    assignment = [[0, 1], [1, 2]]
    rep = mcpc(inst, assignment, epsilon=1e-10)
    order = decoding_order(inst)
    views = [carrier_view(inst, order, n) for n in range(2)]
    pos = [[int(order.pi_inv[n, k]) for k in a] for n, a in enumerate(assignment)]

    def F(b):
        return sum(second_stage_value(views[n], pos[n], b[n]) for n in range(2))

    grid = np.linspace(0.0, 1.0, 20001)
    best = max(F([b, 1.0 - b]) for b in grid)
    assert F(rep.budgets) >= best - 1e-9 * abs(best)
    assert rep.budgets == pytest.approx([0.08888265357678504, 0.9111173464232049], abs=1e-6)
    assert rep.wsr == pytest.approx(14601697.155004704, rel=1e-9)


# JSPA


@pytest.mark.parametrize("seed", range(5))
def test_jspa_satisfies_constraints(seed):
    inst = table(seed, K=6, N=4, M=2)
    rep = jspa(inst)
    check_constraints(inst, rep)
    assert rep.wsr == pytest.approx(float(inst.weight @ rep.user_rates))


def test_jspa_single_user_per_subcarrier_when_m_is_one():
    inst = table(1, K=6, N=5, M=1)
    rep = jspa(inst)
    assert np.all(np.count_nonzero(rep.power, axis=0) <= 1)
    assert all(len(u) <= 1 for u in rep.assignment)


def test_jspa_with_equal_weights_matches_full_assignment_mcpc():
    inst = table(2, K=3, N=3, M=3).with_weights(np.ones(3))
    a = jspa(inst, epsilon=1e-10)
    b = mcpc(inst, [[0, 1, 2]] * 3, epsilon=1e-10)
    assert a.wsr == pytest.approx(b.wsr, rel=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_jspa_close_to_oracle(seed):
    inst = table(seed, K=4, N=2, M=2)
    assert jspa(inst).wsr >= 0.98 * exhaustive_oracle(inst).wsr


# FTPC


def test_ftpc_single_user_takes_per_subcarrier_budget():
    inst = make([[1.0, 2.0, 3.0]], P_max=3.0, caps=[0.5, 2.0, 2.0])
    rep = ftpc(inst)
    assert rep.power[0] == pytest.approx([0.5, 1.0, 1.0])


def test_ftpc_equal_noise_users_split_equally():
    inst = make([[1.0], [1.0], [0.1]], P_max=1.0, M=2)
    rep = ftpc(inst)
    assert rep.power[:, 0] == pytest.approx([0.5, 0.5, 0.0])


def test_ftpc_zero_decay_splits_equally():
    inst = make([[1.0], [3.0], [0.2]], P_max=0.9, M=3)
    assert ftpc(inst, decay=0.0).power[:, 0] == pytest.approx([0.3, 0.3, 0.3])


def test_ftpc_gives_weaker_users_more_power():
    inst = make([[1.0], [4.0]], P_max=1.0, M=2)  # eta 1 and 0.25
    p = ftpc(inst).power[:, 0]
    assert p[0] / p[1] == pytest.approx(4.0**0.4)


# exhaustive oracle


def test_oracle_two_users_one_subcarrier():
    inst = make([[2.0], [0.5]], weight=[0.4, 1.0], P_max=1.0, M=1)
    rep = exhaustive_oracle(inst)
    singles = [w * math.log2(1 + 1.0 * g) for w, g in ((0.4, 2.0), (1.0, 0.5))]
    assert rep.wsr == pytest.approx(max(singles), rel=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_oracle_dominates_heuristics(seed):
    inst = table(seed, K=3, N=2, M=2)
    best = exhaustive_oracle(inst)
    check_constraints(inst, best)
    assert best.wsr >= jspa(inst).wsr * (1 - 1e-9)
    assert best.wsr >= ftpc(inst).wsr * (1 - 1e-9)


def test_oracle_refuses_over_cap():
    inst = table(0, K=6, N=4, M=2)
    assert assignment_count(6, 4, 2) == 22**4
    with pytest.raises(ValueError, match="refused"):
        exhaustive_oracle(inst, cap=1000)


# reports


def test_report_serialization():
    inst = table(0, K=3, N=2, M=2)
    rep = jspa(inst)
    d = rep.to_dict(include_trace=True)
    assert d["solver"] == "jspa" and len(d["power"]) == 3 and d["trace"][0]["iteration"] == 0
    lines = rep.trace_csv().splitlines()
    assert lines[0] == "iteration,n,budget,objective"
    assert len(lines) == 1 + 2 * len(rep.trace)
