"""Primal heuristic for the partitioning MILPs.

Turns a fractional LP point into complete binary assignments.  A bus set is
scored by energizing a maximum-weight spanning forest over it (LP line values
as weights), switching off islands without a grid-former, and checking which
scenarios admit a dispatch.  Bus sets come from thresholding the LP bus
values and, on the first call, from randomized greedy growth out of the
grid-formers.  A local search then adds frontier buses or swaps them for
lighter ones while dispatch stays possible.  The solver re-solves the
continuous part of every candidate and validates it, so a poor guess only
costs time.
"""

from __future__ import annotations

import numpy as np

from .formulation import DesignVars, PartitionSolution, SaaConfig, grid_formers_of
from .lp import LpNumericalError
from .milp import MilpModel
from .network import FeederNetwork, PartitionGraph
from .validation import DispatchChecker, load_buses

THRESHOLDS = (0.5, 0.9, 0.99, 0.1)
ROOT_LPS = 12000      # dispatch LPs the first call may spend
NODE_LPS = 120        # ... and every later call
PATIENCE = 150        # random restarts without improvement before giving up


class _DisjointSet:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[max(ra, rb)] = min(ra, rb)
        return True


class PartitionHeuristic:
    """Callable for :attr:`SolveOptions.rounding` on models from the formulation builders."""

    def __init__(self, m: MilpModel, net: FeederNetwork, seed: int = 0,
                 root_lps: int = ROOT_LPS, node_lps: int = NODE_LPS):
        self.net = net
        self.g: PartitionGraph = m.notes["graph"]
        self.d: DesignVars = m.notes["design"]
        self.svs = m.notes["scenario_vars"]
        self.scenarios = m.notes["scenarios"]
        if list(self.g.vertices) != load_buses(net):
            raise ValueError("partition graph and network disagree on bus order")
        self.rho = float(m.notes.get("rho", 1.0))
        gamma = m.notes.get("gamma")
        n = len(self.svs)
        self.need = SaaConfig(gamma).min_retained(n) if gamma is not None else n
        self.gf = np.array([v in set(grid_formers_of(net, self.g)) for v in self.g.vertices])
        self.src, self.dst = self.g.edge_endpoints()
        self.gp = np.array([xi.gp for xi in self.scenarios], dtype=float)
        self.dp = np.array([xi.dp for xi in self.scenarios], dtype=float)
        c = dict(m.objective)
        # served-load value of bus k in scenario a
        self.worth = np.array([[-c.get(sv.p_d[k].index, 0.0) * xi.dp[k]
                                for k in range(self.g.n_vertices)]
                               for sv, xi in zip(self.svs, self.scenarios)])
        self.gain = self.worth.sum(axis=0)
        self.nbrs: list[list[int]] = [[] for _ in range(self.g.n_vertices)]
        for a, b in zip(self.src, self.dst):
            self.nbrs[a].append(int(b))
            self.nbrs[b].append(int(a))
        self.rng = np.random.default_rng(seed)
        self.root_lps, self.node_lps = root_lps, node_lps
        self.budget = 0
        self.calls = 0
        self._seen: set = set()
        self._scores: dict = {}

    def __call__(self, x: np.ndarray) -> list[np.ndarray]:
        first = self.calls == 0
        self.calls += 1
        self.budget = self.root_lps if first else self.node_lps
        self._scores = {}  # forests depend on x, so scores are only reusable within a call
        bn_lp = np.array([x[v.index] for v in self.d.b_n])
        found = []
        for t in THRESHOLDS:
            on = bn_lp >= t
            if on.tobytes() in self._seen:
                continue
            self._seen.add(on.tobytes())
            res = self.repair(on, bn_lp, x)
            if res is not None:
                found.append(res)
        if first:
            reserve = self.budget // 4
            self.budget -= reserve
            best, stale = max((r[3] for r in found), default=-np.inf), 0
            while self.budget > 0 and stale < PATIENCE:
                res = self.random_growth(x)
                if res[3] > best + 1e-12:
                    best, stale = res[3], 0
                    found.append(res)
                else:
                    stale += 1
            self.budget += reserve
        if not found:
            return []
        found.sort(key=lambda r: -r[3])
        best = self.improve(found[0], x)
        out = [self.assemble(best, x)]
        out += [self.assemble(r, x) for r in found[1:3]]
        return out

    # -- scoring -----------------------------------------------------------------------
    def forest(self, on: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Max-weight spanning forest of the energized buses; islands lacking a grid-former go dark."""
        nv = self.g.n_vertices
        ds = _DisjointSet(nv)
        w = np.array([x[v.index] for v in self.d.b_e])
        be = np.zeros(self.g.n_edges, dtype=bool)
        for e in np.lexsort((np.arange(len(w)), -w)):
            a, b = self.src[e], self.dst[e]
            if on[a] and on[b] and ds.union(a, b):
                be[e] = True
        powered = {ds.find(k) for k in np.flatnonzero(on & self.gf)}
        on &= np.array([ds.find(k) in powered for k in range(nv)])
        be &= on[self.src] & on[self.dst]
        return be

    def retained(self, on: np.ndarray, be: np.ndarray) -> np.ndarray:
        """Per-scenario dispatch feasibility of the partition."""
        ok = np.ones(len(self.scenarios), dtype=bool)
        if not on.any():
            return ok
        sol = PartitionSolution(0.0, [v for v, o in zip(self.g.vertices, on) if o],
                                [self.g.edge_id(e) for e in np.flatnonzero(be)], [], [], [],
                                rho=self.rho)
        chk = DispatchChecker(self.net, sol, self.rho)
        for a, xi in enumerate(self.scenarios):
            try:
                ok[a] = chk.feasible(xi)
            except LpNumericalError:
                ok[a] = False
        self.budget -= len(self.scenarios)
        return ok

    def score(self, on: np.ndarray, x: np.ndarray):
        """(on, be, retained, value) after pruning dark islands; value is -inf if too few kept."""
        key = on.tobytes()
        if key in self._scores:
            return self._scores[key]
        res = self._score(on.copy(), x)
        self._scores[key] = res
        return res

    def _score(self, on: np.ndarray, x: np.ndarray):
        be = self.forest(on, x)
        ok = self.retained(on, be)
        if ok.sum() < self.need:
            return on, be, ok, -np.inf
        return on, be, ok, float(self.worth[ok][:, on].sum())

    def balanced(self, on: np.ndarray) -> bool:
        """Cheap screen: enough scenarios where every island's generation covers its minimum load."""
        ds = _DisjointSet(self.g.n_vertices)
        for a, b in zip(self.src, self.dst):
            if on[a] and on[b]:
                ds.union(a, b)
        roots = np.array([ds.find(k) for k in range(self.g.n_vertices)])
        ok = np.ones(len(self.scenarios), dtype=bool)
        for r in np.unique(roots[on]):
            members = on & (roots == r)
            ok &= self.gp[:, members].sum(axis=1) + 1e-9 >= self.rho * self.dp[:, members].sum(axis=1)
        return ok.sum() >= self.need

    def frontier(self, on: np.ndarray) -> list[int]:
        near = {j for k in np.flatnonzero(on) for j in self.nbrs[k] if not on[j]}
        near |= set(np.flatnonzero(self.gf & ~on).tolist())
        return sorted(near)

    # -- search ------------------------------------------------------------------------
    def repair(self, on: np.ndarray, bn_lp: np.ndarray, x: np.ndarray):
        """Drop the least convincing buses until enough scenarios survive."""
        on = on.copy()
        while self.budget > 0:
            res = self.score(on, x)
            if np.isfinite(res[3]):
                return res
            on = res[0].copy()
            cands = np.flatnonzero(on & ~self.gf)
            if cands.size == 0:
                on[:] = False
                continue
            k = min(cands, key=lambda k: (bn_lp[k], -self.gain[k], k))
            on[k] = False
        return None

    def random_growth(self, x: np.ndarray):
        """Grow from the grid-formers in random order, generator buses first."""
        has_gen = self.gp.max(axis=0) > 0
        cur = self.score(self.gf.copy(), x)
        while self.budget > 0:
            on = cur[0]
            order = self.frontier(on)
            self.rng.shuffle(order)
            order.sort(key=lambda k: not has_gen[k])
            moved = False
            for a in order:
                trial = on.copy()
                trial[a] = True
                if not self.balanced(trial):
                    continue
                res = self.score(trial, x)
                if res[3] >= cur[3] - 1e-12 and res[0].sum() > on.sum():
                    cur, moved = res, True
                    break
                if self.budget <= 0:
                    break
            if not moved:
                break
        return cur

    def improve(self, best, x: np.ndarray):
        """First-improvement search over single additions and one-for-one swaps."""
        while self.budget > 0:
            on = best[0]
            front = self.frontier(on)
            moves = [(self.gain[a], a, -1) for a in front]
            removable = np.flatnonzero(on & ~self.gf & (self.gain > 0))
            moves += [(self.gain[a] - self.gain[r], a, int(r)) for a in front for r in removable
                      if self.gain[a] > self.gain[r] + 1e-12]
            moves.sort(key=lambda mv: (-mv[0], mv[1], mv[2]))
            moved = False
            for _, a, r in moves:
                if self.budget <= 0:
                    break
                trial = on.copy()
                trial[a] = True
                if r >= 0:
                    trial[r] = False
                if not self.balanced(trial):
                    continue
                res = self.score(trial, x)
                grew = r < 0 and res[0].sum() > on.sum()
                if res[3] > best[3] + 1e-12 or (grew and res[3] >= best[3] - 1e-12):
                    best, moved = res, True
                    break
            if not moved:
                break
        return best

    def spanning(self, be: np.ndarray, x: np.ndarray) -> np.ndarray:
        ds = _DisjointSet(self.g.n_vertices)
        theta = np.zeros(self.g.n_edges, dtype=bool)
        for e in np.flatnonzero(be):
            ds.union(self.src[e], self.dst[e])
            theta[e] = True
        w = np.array([x[v.index] for v in self.d.theta])
        for e in np.lexsort((np.arange(len(w)), -w)):
            if not theta[e] and ds.union(self.src[e], self.dst[e]):
                theta[e] = True
        return theta

    def assemble(self, res, x: np.ndarray) -> np.ndarray:
        on, be, ok, _ = res
        cand = np.array(x, dtype=float)
        for v, val in zip(self.d.b_n, on):
            cand[v.index] = float(val)
        for v, val in zip(self.d.b_e, be):
            cand[v.index] = float(val)
        for v, val in zip(self.d.theta, self.spanning(be, x)):
            cand[v.index] = float(val)
        for sv, val in zip(self.svs, ok):
            if sv.z is not None:
                cand[sv.z.index] = float(val)
        return cand
