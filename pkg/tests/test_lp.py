import math

import numpy as np
import pytest
import scipy.sparse as sp

from gridpart.lp import INFEASIBLE, OPTIMAL, UNBOUNDED, SimplexSolver, solve_compiled, solve_lp
from gridpart.milp import CompiledModel, MilpModel
from oracles import tableau_lp


def test_single_variable():
    m = MilpModel()
    x = m.add_var("x", 0, 1)
    m.set_objective([(x, -1.0)])
    res = solve_lp(m)
    assert res.status == OPTIMAL and res.objective == pytest.approx(-1.0)


def test_contradictory_rows():
    m = MilpModel()
    x = m.add_var("x", -10, 10)
    m.add_constraint([(x, 1.0)], ">=", 2.0)
    m.add_constraint([(x, 1.0)], "<=", 1.0)
    assert solve_lp(m).status == INFEASIBLE


def test_unbounded():
    m = MilpModel()
    x = m.add_var("x", 0, math.inf)
    y = m.add_var("y", 0, 1)
    m.add_constraint([(x, 1.0), (y, -1.0)], ">=", 0.0)
    m.set_objective([(x, -1.0)])
    assert solve_lp(m).status == UNBOUNDED


def test_binaries_relaxed():
    m = MilpModel()
    a, b = m.add_binary("a"), m.add_binary("b")
    m.add_constraint([(a, 1.0), (b, 1.0)], "<=", 1.5)
    m.set_objective([(a, -1.0), (b, -1.0)])
    assert solve_lp(m).objective == pytest.approx(-1.5)


def random_lp(rng, n, m):
    A = rng.normal(size=(m, n)) * (rng.random((m, n)) < 0.6)
    lo = -rng.uniform(0, 3, n)
    hi = rng.uniform(0, 3, n)
    x0 = rng.uniform(lo, hi)
    act = A @ x0
    row_lo = np.full(m, -math.inf)
    row_hi = np.full(m, math.inf)
    for i in range(m):
        kind = rng.integers(0, 4)
        if kind in (0, 2):
            row_lo[i] = act[i] - rng.uniform(0, 1)
        if kind in (1, 2):
            row_hi[i] = act[i] + rng.uniform(0, 1)
        if kind == 3:
            row_lo[i] = row_hi[i] = act[i]
    c = rng.normal(size=n)
    return c, A, row_lo, row_hi, lo, hi


def kkt_ok(c, A, row_lo, row_hi, lo, hi, res):
    x, y, d = res.x, res.duals, res.reduced_costs
    act = A @ x
    assert np.all(x >= lo - 1e-7) and np.all(x <= hi + 1e-7)
    assert np.all(act >= row_lo - 1e-7) and np.all(act <= row_hi + 1e-7)
    assert np.allclose(c - A.T @ y, d, atol=1e-6)
    for j in range(len(c)):
        if d[j] > 1e-6:
            assert abs(x[j] - lo[j]) <= 1e-6
        elif d[j] < -1e-6:
            assert abs(x[j] - hi[j]) <= 1e-6
    for i in range(len(y)):
        if y[i] > 1e-6:
            assert abs(act[i] - row_lo[i]) <= 1e-6
        elif y[i] < -1e-6:
            assert abs(act[i] - row_hi[i]) <= 1e-6


def test_random_lps_match_tableau_oracle():
    rng = np.random.default_rng(2718)
    for _ in range(200):
        n, m = int(rng.integers(2, 9)), int(rng.integers(1, 8))
        c, A, row_lo, row_hi, lo, hi = random_lp(rng, n, m)
        s = SimplexSolver(sp.csr_matrix(A), c, row_lo, row_hi, lo, hi)
        status = s.solve()
        ref_status, ref_obj = tableau_lp(c, A, row_lo, row_hi, lo, hi)
        assert status == OPTIMAL and ref_status == "optimal"
        res = s.result(status)
        assert res.objective == pytest.approx(ref_obj, abs=1e-7)
        kkt_ok(c, A, row_lo, row_hi, lo, hi, res)


def test_tableau_oracle_sanity():
    # max x + y on the unit box with x + y <= 1.5
    st, obj = tableau_lp([-1, -1], [[1, 1]], [-math.inf], [1.5], [0, 0], [1, 1])
    assert st == "optimal" and obj == pytest.approx(-1.5)
    st, _ = tableau_lp([1], [[1]], [2], [math.inf], [0], [1])
    assert st == "infeasible"


def test_warm_start_after_bound_change():
    rng = np.random.default_rng(4)
    for _ in range(30):
        c, A, row_lo, row_hi, lo, hi = random_lp(rng, 6, 5)
        cm = CompiledModel(c, sp.csr_matrix(A), row_lo, row_hi, lo, hi, np.zeros(6, bool))
        first = solve_compiled(cm)
        j = int(rng.integers(0, 6))
        hi2 = hi.copy()
        hi2[j] = (lo[j] + first.x[j]) / 2
        cm2 = CompiledModel(c, cm.A, row_lo, row_hi, lo, hi2, cm.is_int)
        warm = solve_compiled(cm2, warm=first.basis)
        cold_status, cold_obj = tableau_lp(c, A, row_lo, row_hi, lo, hi2)
        assert warm.status == cold_status
        if warm.status == OPTIMAL:
            assert warm.objective == pytest.approx(cold_obj, abs=1e-7)


def test_lp_deterministic():
    rng = np.random.default_rng(6)
    c, A, row_lo, row_hi, lo, hi = random_lp(rng, 8, 6)
    a = SimplexSolver(sp.csr_matrix(A), c, row_lo, row_hi, lo, hi)
    b = SimplexSolver(sp.csr_matrix(A), c, row_lo, row_hi, lo, hi)
    a.solve()
    b.solve()
    assert np.array_equal(a.x, b.x) and a.iterations == b.iterations
