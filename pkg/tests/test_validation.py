import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gridpart.formulation import PartitionSolution
from gridpart.network import load_fixture, load_network
from gridpart.scenarios import ScenarioSet
from gridpart.validation import (DispatchChecker, assess, binom_cdf, estimate_violation,
                                 inv_normal_cdf, load_buses, lower_bound, normal_cdf,
                                 scenario_feasible, theta, upper_bound, violation_count)
from oracles import dispatch_feasible


def erf_phi(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def bisect_quantile(p):
    lo, hi = -10.0, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if erf_phi(mid) < p else (lo, mid)
    return 0.5 * (lo + hi)


def sol_of(buses, lines, rho=1.0):
    return PartitionSolution(0.0, list(buses), list(lines), [], [], [], rho=rho)


def scen_for(net, rows):
    ids = load_buses(net)
    cols = {f: [[r.get(f, {}).get(b, getattr(net.bus(b), attr)) for b in ids] for r in rows]
            for f, attr in (("gp", "gen_cap_p"), ("gq", "gen_cap_q"), ("dp", "nominal_demand_p"),
                            ("dq", "nominal_demand_q"))}
    return ScenarioSet(ids, cols["gp"], cols["gq"], cols["dp"], cols["dq"])


# -- normal quantile ------------------------------------------------------------------

def test_quantile_examples():
    assert inv_normal_cdf(0.5) == pytest.approx(0.0, abs=1e-12)
    assert abs(inv_normal_cdf(0.95) - 1.6449) <= 1e-3
    assert inv_normal_cdf(0.95) == pytest.approx(bisect_quantile(0.95), abs=1e-8)


def test_quantile_round_trip():
    rng = np.random.default_rng(0)
    ps = np.concatenate([rng.random(1000), [1e-10, 1e-5, 0.02, 0.98, 1 - 1e-5]])
    for p in ps:
        if 0 < p < 1:
            assert erf_phi(inv_normal_cdf(p)) == pytest.approx(p, abs=1e-7)


def test_quantile_against_bisection():
    for p in np.linspace(0.001, 0.999, 101):
        assert inv_normal_cdf(p) == pytest.approx(bisect_quantile(p), abs=1e-8)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_quantile_domain(p):
    with pytest.raises(ValueError):
        inv_normal_cdf(p)


def test_normal_cdf_matches_erf():
    for x in np.linspace(-6, 6, 61):
        assert normal_cdf(x) == pytest.approx(erf_phi(x), abs=1e-14)


# -- upper bound ------------------------------------------------------------------------

def test_upper_bound_examples():
    assert upper_bound(0.08, 1000, 0.05) == pytest.approx(0.09411, abs=1e-5)
    assert upper_bound(0.0, 1000, 0.05) == 0.0
    assert upper_bound(0.3, 50, 0.5) == pytest.approx(0.3, abs=1e-12)


@given(st.floats(0.0, 1.0), st.integers(1, 10_000), st.floats(0.001, 0.5))
def test_upper_bound_dominates_estimate(q, n, beta):
    assert upper_bound(q, n, beta) >= q - 1e-15


def test_upper_bound_rejects_bad_input():
    for args in ((-0.1, 10, 0.05), (0.1, 0, 0.05), (0.1, 10, 0.0), (0.1, 10, 1.0)):
        with pytest.raises(ValueError):
            upper_bound(*args)


# -- binomial and theta -------------------------------------------------------------------

def test_binom_examples():
    assert binom_cdf(1, 0.5, 2) == 0.25
    assert binom_cdf(0, 0.3, 7) == 0.0
    assert binom_cdf(8, 0.3, 7) == 1.0
    assert binom_cdf(1, 0.5, 2, inclusive=True) == pytest.approx(0.75)


def _direct(k, q, n):
    return sum(math.comb(n, r) * q ** r * (1 - q) ** (n - r) for r in range(k))


@given(st.integers(0, 40), st.floats(0.0, 1.0))
def test_binom_matches_direct_sum(n, q):
    for k in range(n + 2):
        assert binom_cdf(k, q, n) == pytest.approx(_direct(k, q, n), abs=1e-12)


@given(st.integers(1, 60), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_binom_monotone(n, q1, q2):
    lo, hi = sorted((q1, q2))
    vals = [binom_cdf(k, lo, n) for k in range(n + 2)]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
    for k in range(1, n + 2):
        assert binom_cdf(k, hi, n) <= binom_cdf(k, lo, n) + 1e-12


def test_binom_large_n_is_stable():
    val = binom_cdf(5000, 0.5, 10_000)
    assert 0.49 < val < 0.5


def test_theta_examples():
    assert theta(0.7, 20, 0.1) >= 1 - 1e-6
    assert 1.0 - theta(0.7, 20, 0.1) < 1e-9
    assert theta(0.0, 20, 0.1) == 0.0
    assert theta(0.5, 20, 0.0) == 1.0
    assert theta(0.0, 20, 0.1, inclusive=True) == pytest.approx(0.9 ** 20)
    # floor(0.3 * 10) = 3 violations allowed
    assert theta(0.3, 10, 0.2) == pytest.approx(_direct(3, 0.2, 10))


# -- lower bound ----------------------------------------------------------------------------

def test_lower_bound_examples():
    rep = lower_bound([-3, -5, -4], 1.0, 0.05)
    assert (rep.L, rep.bound) == (3, -3.0)
    assert rep.objectives_sorted == [-5.0, -4.0, -3.0]
    rep = lower_bound([-5, -4, -3], 0.6, 0.05)
    assert (rep.L, rep.bound) == (1, -5.0)
    assert binom_cdf(1, 0.6, 3) == pytest.approx(0.064)


def test_lower_bound_unreachable_is_flagged():
    rep = lower_bound([-1.0, -2.0], 0.0, 0.05, inclusive=True)
    assert rep.L == 0 and rep.flagged and rep.bound == -math.inf
    assert '"-inf"' in rep.to_json()


def test_lower_bound_identical_runs():
    rep = lower_bound([-0.4] * 3, 1.0, 0.05)
    assert rep.bound == -0.4


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=30), st.floats(0.0, 1.0),
       st.floats(0.01, 0.5))
def test_lower_bound_index_is_maximal(objs, th, beta):
    rep = lower_bound(objs, th, beta)
    M = len(objs)
    ok = [L for L in range(1, M + 1) if _direct(L - 1, th, M) <= beta + 1e-12]
    if rep.L:
        assert rep.L == max(ok)
        assert rep.bound == sorted(objs)[rep.L - 1]
    else:
        assert not [L for L in ok if _direct(L - 1, th, M) < beta - 1e-12]


# -- dispatch checking ----------------------------------------------------------------------

def _three_bus():
    doc = {"base_mva": 1.0, "substation": "S", "buses": [
        {"id": "S", "dp": 0, "dq": 0, "gp": 0, "gq": 0, "qmin": 0, "grid_forming": False},
        {"id": "G", "dp": 0.1, "dq": 0.05, "gp": 0.8, "gq": 0.5, "qmin": 0.1, "grid_forming": True},
        {"id": "A", "dp": 0.3, "dq": 0.1, "gp": 0.0, "gq": 0.0, "qmin": 0, "grid_forming": False},
        {"id": "B", "dp": 0.2, "dq": 0.1, "gp": 0.2, "gq": 0.1, "qmin": 0, "grid_forming": False}],
        "lines": [
        {"from": "S", "to": "G", "r": 0.01, "x": 0.01, "pmax": 2, "qmax": 2},
        {"from": "G", "to": "A", "r": 0.05, "x": 0.08, "pmax": 0.5, "qmax": 0.5},
        {"from": "A", "to": "B", "r": 0.06, "x": 0.04, "pmax": 0.35, "qmax": 0.35}]}
    return load_network(doc)


def test_all_deenergized_is_always_feasible():
    net = load_fixture("five_bus")
    sol = sol_of([], [])
    scen = scen_for(net, [{"dp": {"A": 9.0}}, {}])
    assert estimate_violation(sol, net, scen) == 0.0
    rep = assess(sol, net, scen, 0.05, epsilon=0.0)
    assert rep.U == 0.0 and rep.feasible_at_epsilon


def test_overloaded_island_is_infeasible():
    net = _three_bus()
    sol = sol_of(["G", "A"], ["G-A"])
    xi = scen_for(net, [{"dp": {"A": 0.95}}])
    assert not scenario_feasible(sol, net, xi[0])


def test_three_of_ten_violate():
    net = _three_bus()
    sol = sol_of(["G", "A", "B"], ["G-A", "A-B"])
    rows = [{"dp": {"A": 0.2}} for _ in range(7)] + [{"gp": {"G": 0.1}} for _ in range(3)]
    order = [0, 7, 1, 2, 8, 3, 4, 9, 5, 6]
    est = violation_count(sol, net, scen_for(net, [rows[k] for k in order]))
    assert est.q_hat == pytest.approx(0.3)
    assert est.infeasible_index == [1, 4, 7]


def test_agrees_with_grid_search():
    net = _three_bus()
    sol = sol_of(["G", "A", "B"], ["G-A", "A-B"])
    chk = DispatchChecker(net, sol)
    lines = [l for l in net.lines if l.id in ("G-A", "A-B")]
    seen = set()
    for da in np.linspace(0.0, 0.6, 7):
        for db in np.linspace(0.0, 0.5, 6):
            for gg in np.linspace(0.2, 1.0, 5):
                xi = scen_for(net, [{"dp": {"A": da, "B": db}, "gp": {"G": gg}}])
                dp = {"G": 0.1, "A": da, "B": db}
                gp = {"G": gg, "A": 0.0, "B": 0.2}
                want = dispatch_feasible(net, ["G", "A", "B"], lines, dp,
                                         {"G": 0.05, "A": 0.1, "B": 0.1}, gp,
                                         {"G": 0.5, "A": 0.0, "B": 0.1})
                assert chk.feasible(xi[0]) == want
                seen.add(want)
    assert seen == {True, False}


def test_relaxed_rho_is_honored():
    net = _three_bus()
    xi = scen_for(net, [{"gp": {"G": 0.3}}])[0]
    sol = sol_of(["G", "A", "B"], ["G-A", "A-B"])
    assert not scenario_feasible(sol, net, xi)
    assert scenario_feasible(sol, net, xi, rho=0.7)
    assert scenario_feasible(sol_of(["G", "A", "B"], ["G-A", "A-B"], rho=0.7), net, xi)


def test_mismatched_solution_rejected():
    net = _three_bus()
    with pytest.raises(ValueError):
        DispatchChecker(net, sol_of(["G", "Z"], []))
    with pytest.raises(ValueError):
        DispatchChecker(net, sol_of(["G"], ["G-A"]))


def test_estimate_is_unbiased():
    # violation happens exactly when G's capacity falls under the island load 0.6
    net = _three_bus()
    sol = sol_of(["G", "A", "B"], ["G-A", "A-B"])
    rng = np.random.default_rng(11)
    q, n, reps = 0.25, 40, 60
    ests = []
    for _ in range(reps):
        bad = rng.random(n) < q
        rows = [{"gp": {"G": 0.2 if b else 0.8}} for b in bad]
        ests.append(estimate_violation(sol, net, scen_for(net, rows)))
    sigma = math.sqrt(q * (1 - q) / (n * reps))
    assert abs(np.mean(ests) - q) <= 3 * sigma


def test_upper_bound_exact_coverage():
    # probability over q_hat ~ Binomial(n, q) / n that U covers q, summed exactly
    q, n, beta = 0.10, 1000, 0.05
    cover = sum(math.comb(n, k) * q ** k * (1 - q) ** (n - k) for k in range(n + 1)
                if upper_bound(k / n, n, beta) >= q)
    assert 0.93 <= cover <= 0.96


def test_upper_bound_coverage():
    rng = np.random.default_rng(0)
    q, n, beta = 0.10, 1000, 0.05
    hits = sum(upper_bound(float((rng.random(n) < q).mean()), n, beta) >= q for _ in range(500))
    assert hits / 500 >= 0.93
