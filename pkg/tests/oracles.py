"""Independent reference implementations used by the tests.

Nothing here imports the solver, the LP kernel or the formulation; the
oracles work from raw arrays or network data so they can disagree with the
package when it is wrong.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import linprog


# -- union-find ---------------------------------------------------------------------

class DSU:
    def __init__(self, n):
        self.p = list(range(n))

    def find(self, a):
        while self.p[a] != a:
            a = self.p[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.p[ra] = rb
        return True


def is_forest(n, edges):
    d = DSU(n)
    return all(d.union(a, b) for a, b in edges)


def spanning_trees(n, edges):
    """Index sets of all spanning trees (brute force over (n-1)-subsets)."""
    out = set()
    for sub in itertools.combinations(range(len(edges)), n - 1):
        if is_forest(n, [edges[e] for e in sub]):
            out.add(frozenset(sub))
    return out


def reaches(n, edges, on_nodes, on_edges, sources):
    """BFS: does every energized vertex reach an energized source over energized edges?"""
    adj = [[] for _ in range(n)]
    for k, (a, b) in enumerate(edges):
        if on_edges[k]:
            adj[a].append(b)
            adj[b].append(a)
    seen = set(s for s in sources if on_nodes[s])
    queue = list(seen)
    while queue:
        u = queue.pop()
        for w in adj[u]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return all(k in seen for k in range(n) if on_nodes[k])


# -- dense two-phase tableau simplex ---------------------------------------------------

def _pivot(T, r, c):
    T[r] /= T[r, c]
    for i in range(T.shape[0]):
        if i != r and T[i, c] != 0.0:
            T[i] -= T[i, c] * T[r]


def _tableau_min(T, basis, n_cols, eps=1e-10):
    """Bland's rule on a tableau whose last row holds reduced costs (objective row)."""
    while True:
        cost = T[-1, :n_cols]
        enter = next((j for j in range(n_cols) if cost[j] < -eps), None)
        if enter is None:
            return "optimal"
        col = T[:-1, enter]
        rhs = T[:-1, -1]
        ratios = [(rhs[i] / col[i], basis[i], i) for i in range(len(col)) if col[i] > eps]
        if not ratios:
            return "unbounded"
        _, _, r = min(ratios)
        _pivot(T, r, enter)
        basis[r] = enter


def tableau_lp(c, A, row_lo, row_hi, lo, hi):
    """min c@x, row_lo <= A x <= row_hi, lo <= x <= hi (finite bounds).  Returns (status, obj)."""
    c = np.asarray(c, float)
    A = np.asarray(A, float)
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    n = len(c)
    rows, rhs, kinds = [], [], []
    shift = A @ lo
    for i in range(A.shape[0]):
        if math.isfinite(row_hi[i]):
            rows.append(A[i])
            rhs.append(row_hi[i] - shift[i])
            kinds.append(1.0)
        if math.isfinite(row_lo[i]):
            rows.append(A[i])
            rhs.append(row_lo[i] - shift[i])
            kinds.append(-1.0)
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        rows.append(e)
        rhs.append(hi[j] - lo[j])
        kinds.append(1.0)
    m = len(rows)
    # columns: y (n), slacks (m), artificials (m)
    T = np.zeros((m + 1, n + 2 * m + 1))
    for i in range(m):
        T[i, :n] = rows[i]
        T[i, n + i] = kinds[i]
        T[i, -1] = rhs[i]
        if T[i, -1] < 0:
            T[i, :-1] *= -1
            T[i, -1] *= -1
        T[i, n + m + i] = 1.0
    basis = [n + m + i for i in range(m)]
    T[-1, :] = -T[:-1, :].sum(axis=0)
    T[-1, n + m:n + 2 * m] = 0.0
    _tableau_min(T, basis, n + 2 * m)
    if T[-1, -1] < -1e-8:
        return "infeasible", math.inf
    # drive artificials out of the basis where possible
    for r, b in enumerate(basis):
        if b >= n + m:
            for j in range(n + m):
                if abs(T[r, j]) > 1e-9:
                    _pivot(T, r, j)
                    basis[r] = j
                    break
    T2 = np.zeros((m + 1, n + m + 1))
    T2[:-1, :-1] = T[:-1, :n + m]
    T2[:-1, -1] = T[:-1, -1]
    cost = np.concatenate([c, np.zeros(m)])
    T2[-1, :-1] = cost
    for r, b in enumerate(basis):
        if b < n + m and cost[b] != 0.0:
            T2[-1] -= cost[b] * T2[r]
    keep = [r for r, b in enumerate(basis) if b < n + m]
    T2 = np.vstack([T2[keep], T2[-1:]])
    basis = [basis[r] for r in keep]
    st = _tableau_min(T2, basis, n + m)
    if st != "optimal":
        return st, -math.inf
    return "optimal", float(-T2[-1, -1] + c @ lo)


# -- network dispatch and brute-force partitioning -------------------------------------

def dispatch_feasible(net, buses, lines, demand_p, demand_q, gen_p, gen_q, rho=1.0):
    """LinDistFlow dispatch over energized ``buses``/``lines`` solved with scipy's HiGHS LP.

    Values are dicts keyed by bus id.  Loads may be curtailed to ``rho`` of demand.
    """
    buses = list(buses)
    if not buses:
        return True
    pos = {b: k for k, b in enumerate(buses)}
    nb, nl = len(buses), len(lines)
    # columns: v, pg, qg, pd, qd per bus; P, Q per line
    n = 5 * nb + 2 * nl
    V, PG, QG, PD, QD = (lambda k, o=o: o * nb + k for o in range(5))
    P = lambda e: 5 * nb + e
    Q = lambda e: 5 * nb + nl + e
    A, b = [], []
    for k, bus in enumerate(buses):
        rp, rq = np.zeros(n), np.zeros(n)
        rp[PG(k)], rp[PD(k)] = 1.0, -1.0
        rq[QG(k)], rq[QD(k)] = 1.0, -1.0
        for e, l in enumerate(lines):
            if l.from_bus == bus:
                rp[P(e)] -= 1.0
                rq[Q(e)] -= 1.0
            if l.to_bus == bus:
                rp[P(e)] += 1.0
                rq[Q(e)] += 1.0
        A += [rp, rq]
        b += [0.0, 0.0]
    for e, l in enumerate(lines):
        row = np.zeros(n)
        row[V(pos[l.from_bus])], row[V(pos[l.to_bus])] = 1.0, -1.0
        row[P(e)], row[Q(e)] = -l.r, -l.x
        A.append(row)
        b.append(0.0)
    bounds = [None] * n
    for k, bus in enumerate(buses):
        bd = net.bus(bus)
        bounds[V(k)] = (0.95, 1.05)
        bounds[PG(k)] = (0.0, gen_p[bus])
        bounds[QG(k)] = (-bd.q_min_absorb, gen_q[bus])
        bounds[PD(k)] = (rho * demand_p[bus], demand_p[bus])
        bounds[QD(k)] = (rho * demand_q[bus], demand_q[bus])
    for e, l in enumerate(lines):
        bounds[P(e)] = (-l.p_max, l.p_max)
        bounds[Q(e)] = (-l.q_max, l.q_max)
    if any(lo > hi for lo, hi in bounds):
        return False
    res = linprog(np.zeros(n), A_eq=np.array(A), b_eq=np.array(b), bounds=bounds, method="highs")
    return res.status == 0


def brute_force_partition(net, dp=None, dq=None, gp=None, gq=None):
    """Best served load over every spanning forest and every choice of powered islands.

    Returns (objective, energized bus set).  Objective is minus the served load.
    """
    verts = [b.id for b in net.buses if b.id != net.substation_id]
    vi = {v: k for k, v in enumerate(verts)}
    lines = [l for l in net.lines if l.from_bus in vi and l.to_bus in vi]
    dp = dp or {v: net.bus(v).nominal_demand_p for v in verts}
    dq = dq or {v: net.bus(v).nominal_demand_q for v in verts}
    gp = gp or {v: net.bus(v).gen_cap_p for v in verts}
    gq = gq or {v: net.bus(v).gen_cap_q for v in verts}
    gf = {v for v in verts if net.bus(v).grid_forming}
    best, best_set = 0.0, frozenset()
    cache = {}
    for r in range(len(lines) + 1):
        for sub in itertools.combinations(range(len(lines)), r):
            chosen = [lines[e] for e in sub]
            d = DSU(len(verts))
            if not all(d.union(vi[l.from_bus], vi[l.to_bus]) for l in chosen):
                continue
            comps = {}
            for v in verts:
                comps.setdefault(d.find(vi[v]), []).append(v)
            islands = [c for c in comps.values() if gf & set(c)]
            # a line may only be energized when both ends are
            for pick in itertools.product((False, True), repeat=len(islands)):
                on = frozenset(v for c, p in zip(islands, pick) if p for v in c)
                if any((l.from_bus in on) != (l.to_bus in on) for l in chosen):
                    continue
                on_lines = tuple(l for l in chosen if l.from_bus in on)
                served = sum(dp[v] for v in on)
                if -served >= best - 1e-12:
                    continue
                key = (on, on_lines)
                if key not in cache:
                    cache[key] = dispatch_feasible(net, sorted(on, key=vi.get), on_lines,
                                                   dp, dq, gp, gq)
                if cache[key]:
                    best, best_set = -served, on
    return best, best_set


def random_network_doc(rng, max_nodes=8, max_edges=10):
    """Connected random feeder document with a substation and at least one grid-former."""
    n = int(rng.integers(3, max_nodes + 1))
    ids = ["S"] + [f"N{k}" for k in range(1, n)]
    edges = set()
    for k in range(1, n):
        edges.add((int(rng.integers(0, k)), k))
    extra = int(rng.integers(0, max_edges - len(edges) + 1))
    for _ in range(extra * 3):
        if len(edges) >= len(edges) + extra or len(edges) >= max_edges:
            break
        a, b = sorted(int(v) for v in rng.choice(n, 2, replace=False))
        edges.add((a, b))
    gfs = set(int(v) for v in rng.choice(np.arange(1, n), int(rng.integers(1, min(3, n - 1) + 1)),
                                         replace=False))
    buses = []
    for k, bid in enumerate(ids):
        if k == 0:
            buses.append({"id": bid, "dp": 0.0, "dq": 0.0, "gp": 0.0, "gq": 0.0, "qmin": 0.0,
                          "grid_forming": False})
            continue
        dp = 0.0 if rng.random() < 0.25 else round(float(rng.uniform(0.05, 0.6)), 3)
        gp = round(float(rng.uniform(0.2, 1.0)), 3) if k in gfs or rng.random() < 0.2 else 0.0
        buses.append({"id": bid, "dp": dp, "dq": round(0.3 * dp, 4), "gp": gp,
                      "gq": round(0.5 * gp, 4), "qmin": round(0.1 * gp, 4),
                      "grid_forming": k in gfs})
    lines = []
    for a, b in sorted(edges):
        lines.append({"from": ids[a], "to": ids[b], "r": round(float(rng.uniform(0.005, 0.05)), 4),
                      "x": round(float(rng.uniform(0.005, 0.05)), 4),
                      "pmax": round(float(rng.uniform(0.2, 1.5)), 3),
                      "qmax": round(float(rng.uniform(0.2, 1.5)), 3), "normally_open": False})
    return {"name": "random", "base_mva": 1.0, "substation": "S", "buses": buses, "lines": lines}


def radial_configurations(net):
    """Every (energized buses, energized lines) pair that is a forest of powered islands."""
    verts = [b.id for b in net.buses if b.id != net.substation_id]
    vi = {v: k for k, v in enumerate(verts)}
    lines = [l for l in net.lines if l.from_bus in vi and l.to_bus in vi]
    gf = {v for v in verts if net.bus(v).grid_forming}
    seen = set()
    for r in range(len(lines) + 1):
        for sub in itertools.combinations(range(len(lines)), r):
            chosen = [lines[e] for e in sub]
            d = DSU(len(verts))
            if not all(d.union(vi[l.from_bus], vi[l.to_bus]) for l in chosen):
                continue
            comps = {}
            for v in verts:
                comps.setdefault(d.find(vi[v]), []).append(v)
            islands = [c for c in comps.values() if gf & set(c)]
            for pick in itertools.product((False, True), repeat=len(islands)):
                on = frozenset(v for c, p in zip(islands, pick) if p for v in c)
                if any((l.from_bus in on) != (l.to_bus in on) for l in chosen):
                    continue
                key = (on, frozenset(l.id for l in chosen if l.from_bus in on))
                if key not in seen:
                    seen.add(key)
                    yield on, [l for l in chosen if l.from_bus in on]


def chance_optimum(net, points, probs, epsilon):
    """Exact optimum of the chance-constrained partition problem over a finite distribution.

    ``points`` are dicts with keys dp, dq, gp, gq (each keyed by bus id).  A
    partition is admissible when the probability of the points without a
    dispatch is at most ``epsilon``; the objective is minus the expected load
    served over the points that have one.
    """
    best = 0.0
    for on, lines in radial_configurations(net):
        ok = [dispatch_feasible(net, sorted(on), lines, p["dp"], p["dq"], p["gp"], p["gq"])
              for p in points]
        if sum(pr for pr, o in zip(probs, ok) if not o) > epsilon + 1e-12:
            continue
        val = -sum(pr * sum(p["dp"][v] for v in on) for pr, p, o in zip(probs, points, ok) if o)
        best = min(best, val)
    return best
