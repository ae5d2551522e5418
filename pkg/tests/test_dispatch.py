import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from gridmfg.core import Generator, Line, Network
from gridmfg.dispatch import (
    AggregateSupplyError, BidVector, DegenerateError, linearize_costs, lmp_sensitivity_check, read_bids,
    solve_dispatch, verify_kkt, write_result,
)
from oracles import brute_force_dispatch, random_dispatch_case


def test_linearize_linear_cost():
    net = Network(1, np.zeros((0, 1)), [], [Generator("g", 0, "oil", 0.0, 20.0, 50.0)])
    pc = linearize_costs(net, [50.0], 3)
    assert np.allclose(pc.widths, 50 / 3) and np.allclose(pc.marginals, 20.0)


def test_linearize_quadratic_midpoints():
    net = Network(1, np.zeros((0, 1)), [], [Generator("g", 0, "oil", 0.01, 10.0, 100.0)])
    assert np.allclose(linearize_costs(net, [100.0], 2).marginals, [[10.5, 11.5]])


def test_linearize_zero_capacity_and_bad_inputs():
    net = Network(1, np.zeros((0, 1)), [], [Generator("g", 0, "oil", 0.01, 10.0, 100.0)])
    pc = linearize_costs(net, [0.0], 4)
    assert np.all(pc.widths == 0)
    with pytest.raises(ValueError):
        linearize_costs(net, [0.0], 0)
    with pytest.raises(ValueError):
        linearize_costs(net, [101.0], 4)


def test_one_bus_merit_order(one_bus):
    net, costs = one_bus
    r = solve_dispatch(net, [60.0], costs)
    assert r.optimal
    assert np.allclose(r.p, [50.0, 10.0], atol=1e-9)
    assert r.hub_price == pytest.approx(20.0, abs=1e-9)
    assert np.allclose(r.lmp, [20.0])
    assert verify_kkt(r, net, [60.0], costs).ok()


def test_zero_demand_prices_at_cheapest_unit(one_bus):
    net, costs = one_bus
    r = solve_dispatch(net, [0.0], costs)
    assert np.allclose(r.p, 0.0) and r.objective == 0.0
    assert r.lmp[0] == pytest.approx(10.0)


def test_congested_two_bus(congested):
    net, costs = congested
    r = solve_dispatch(net, [0.0, 25.0], costs)
    assert np.allclose(r.p, [10.0, 15.0], atol=1e-9)
    assert r.lmp[0] == pytest.approx(10.0, abs=1e-9)
    assert r.lmp[1] == pytest.approx(30.0, abs=1e-9)
    assert r.hub_price == pytest.approx(30.0, abs=1e-9)
    assert r.mu_upper[0] == pytest.approx(20.0, abs=1e-9)
    assert r.mu_lower[0] == 0.0
    assert verify_kkt(r, net, [0.0, 25.0], costs).ok()


def test_sensitivity_examples(one_bus, congested):
    net, costs = one_bus
    dual, fd = lmp_sensitivity_check(net, [60.0], costs, 0, 0.1)
    assert dual == pytest.approx(20.0) and fd == pytest.approx(20.0)
    net, costs = congested
    dual, fd = lmp_sensitivity_check(net, [0.0, 25.0], costs, 1, 0.1)
    assert dual == pytest.approx(30.0) and fd == pytest.approx(30.0)
    with pytest.raises(ValueError):
        lmp_sensitivity_check(net, [0.0, 25.0], costs, 1, 0.0)


def test_sensitivity_flags_breakpoint(one_bus):
    net, costs = one_bus
    with pytest.raises(DegenerateError):
        lmp_sensitivity_check(net, [50.0], costs, 0, 0.1)


def test_infeasible_overdemand(one_bus):
    net, costs = one_bus
    r = solve_dispatch(net, [150.0], costs)
    assert r.status == "infeasible" and not r.optimal
    with pytest.raises(ValueError):
        verify_kkt(r, net, [150.0], costs)


def test_negative_aggregate_rejected(congested):
    net, costs = congested
    with pytest.raises(AggregateSupplyError):
        solve_dispatch(net, [-5.0, 2.0], costs)
    # per-bus net supply is allowed
    assert np.sum(BidVector([-5.0, 7.0])) == pytest.approx(2.0)
    assert solve_dispatch(net, [-5.0, 7.0], costs).optimal


def test_kkt_flags_constructed_violations(one_bus):
    net, costs = one_bus
    r = solve_dispatch(net, [60.0], costs)
    bumped = solve_dispatch(net, [60.0], costs)
    bumped.p = bumped.p + np.array([1.0, 0.0])
    assert verify_kkt(bumped, net, [60.0], costs).balance == pytest.approx(1.0)
    net2 = congested_net()
    costs2 = linearize_costs(net2, net2.p_max)
    r2 = solve_dispatch(net2, [0.0, 25.0], costs2)
    r2.mu_upper = -r2.mu_upper
    assert verify_kkt(r2, net2, [0.0, 25.0], costs2).dual_feasibility > 1.0
    assert verify_kkt(r, net, [60.0], costs).ok()


def congested_net():
    gens = [Generator("cheap", 0, "oil", 0.0, 10.0, 50.0), Generator("dear", 1, "oil", 0.0, 30.0, 50.0)]
    return Network(2, np.array([[1.0, 0.0]]), [Line("L0", 10.0)], gens)


@pytest.mark.parametrize("seed", range(100))
def test_random_cases_satisfy_kkt(seed):
    net, D, costs = random_dispatch_case(seed)
    r = solve_dispatch(net, D, costs)
    assert r.optimal
    rep = verify_kkt(r, net, D, costs)
    assert rep.ok(1e-6), rep
    # congestion raises the price on the importing side
    assert np.array_equal(r.lmp, r.hub_price - net.ptdf.T @ (r.mu_upper - r.mu_lower))


@pytest.mark.parametrize("seed", range(30))
def test_objective_matches_highs(seed):
    net, D, costs = random_dispatch_case(seed)
    r = solve_dispatch(net, D, costs)
    G, K = costs.widths.shape
    seg_bus = np.repeat(net.gen_bus, K)
    A_eq = np.ones((1, G * K))
    A_ub = np.vstack([net.ptdf[:, seg_bus], -net.ptdf[:, seg_bus]]) if net.L else None
    b_ub = np.concatenate([net.flow_limits + net.ptdf @ D, net.flow_limits - net.ptdf @ D]) if net.L else None
    ref = linprog(costs.marginals.ravel(), A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[D.sum()],
                  bounds=list(zip(np.zeros(G * K), costs.widths.ravel())), method="highs")
    assert ref.status == 0
    assert r.objective == pytest.approx(ref.fun, rel=1e-8, abs=1e-7)


@pytest.mark.parametrize("seed", range(40))
def test_dual_lmp_matches_finite_difference(seed):
    net, D, costs = random_dispatch_case(seed)
    for m in range(net.M):
        try:
            dual, fd = lmp_sensitivity_check(net, D, costs, m, 1e-3)
        except DegenerateError:
            continue
        assert abs(dual - fd) <= max(1e-4, 1e-3 * abs(dual))


def test_uncongested_lmps_equal_hub():
    gens = [Generator("a", 0, "oil", 0.01, 15.0, 80.0), Generator("b", 2, "oil", 0.02, 12.0, 80.0)]
    net = Network(3, np.array([[0.5, 0.2, 0.0], [0.1, -0.4, 0.0]]), [Line("x", 1e3), Line("y", 1e3)], gens)
    r = solve_dispatch(net, [30.0, 20.0, 10.0], linearize_costs(net, net.p_max))
    assert np.allclose(r.lmp, r.hub_price)
    assert np.all(r.mu_lower == 0) and np.all(r.mu_upper == 0)


@pytest.mark.parametrize("seed", range(10))
def test_generator_permutation_invariance(seed):
    net, D, costs = random_dispatch_case(seed)
    perm = np.random.default_rng(seed).permutation(net.G)
    net2 = Network(net.M, net.ptdf, net.lines, [net.generators[i] for i in perm])
    r1 = solve_dispatch(net, D, costs)
    r2 = solve_dispatch(net2, D, linearize_costs(net2, net2.p_max))
    assert r2.objective == pytest.approx(r1.objective, rel=1e-10, abs=1e-9)


def test_segment_order_does_not_change_lmps(congested):
    from gridmfg.dispatch import PiecewiseCost
    net = Network(1, np.zeros((0, 1)), [], [Generator("g", 0, "oil", 0.0, 10.0, 50.0),
                                             Generator("h", 0, "oil", 0.0, 10.0, 50.0)])
    a = PiecewiseCost(np.array([[20.0, 30.0], [25.0, 25.0]]), np.array([[10.0, 12.0], [11.0, 13.0]]))
    b = PiecewiseCost(np.array([[25.0, 25.0], [20.0, 30.0]]), np.array([[11.0, 13.0], [10.0, 12.0]]))
    ra, rb = solve_dispatch(net, [60.0], a), solve_dispatch(net, [60.0], b)
    assert ra.lmp[0] == pytest.approx(rb.lmp[0]) == pytest.approx(12.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(1.0, 99.0), st.sampled_from([4, 8, 16, 32, 64]))
def test_linearization_error_bound(demand, K):
    gens = [Generator("q", 0, "oil", 0.02, 10.0, 100.0)]
    net = Network(1, np.zeros((0, 1)), [], gens)
    r = solve_dispatch(net, [demand], linearize_costs(net, [100.0], K))
    true_mc = 2 * 0.02 * demand + 10.0
    # the marginal segment's midpoint is within half a width of the true point
    assert abs(r.lmp[0] - true_mc) <= 2 * 0.02 * 100.0 / K / 2 + 1e-9


def test_linearized_matches_brute_force_quadratic():
    a, b, caps = np.array([0.01, 0.03]), np.array([12.0, 9.0]), np.array([80.0, 60.0])
    gens = [Generator(f"g{i}", 0, "oil", a[i], b[i], caps[i]) for i in range(2)]
    net = Network(1, np.zeros((0, 1)), [], gens)
    p, lam = brute_force_dispatch(a, b, caps, 70.0)
    r = solve_dispatch(net, [70.0], linearize_costs(net, caps, 64))
    assert np.allclose(r.p, p, atol=caps.max() / 64)
    assert r.hub_price == pytest.approx(lam, abs=2 * 0.03 * 60 / 64)


def test_bids_and_result_io(tmp_path, congested):
    net, costs = congested
    (tmp_path / "bids.csv").write_text("bus,D_mt\n1,25\n")
    D = read_bids(tmp_path / "bids.csv", 2)
    assert D.tolist() == [0.0, 25.0]
    write_result(solve_dispatch(net, D, costs), tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["status"] == "optimal" and doc["lmp"] == pytest.approx([10.0, 30.0])
    (tmp_path / "bad.csv").write_text("bus,D_mt\n5,1\n")
    with pytest.raises(ValueError):
        read_bids(tmp_path / "bad.csv", 2)
