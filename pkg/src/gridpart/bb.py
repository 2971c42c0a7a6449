"""LP-based branch-and-bound for :class:`MilpModel`, plus an external-solver seam.

Search is best-first with plunging: after branching, the child on the side the
LP value leans towards is solved immediately (warm-started from the parent
basis through the dual simplex) and the dive continues until it is pruned;
then the open node with the smallest bound is taken.  Reduced-cost fixing
tightens binaries inside each subtree.
"""

from __future__ import annotations

import heapq
import logging
import math
import os
import shlex
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .lp import (INFEASIBLE, OPTIMAL, UNBOUNDED, BasisState, LpNumericalError, SimplexSolver)
from .milp import MilpModel, evaluate, export_mps, mps_names

log = logging.getLogger(__name__)

OPTIMAL_STATUS = "optimal"
FEASIBLE = "feasible"
INFEASIBLE_STATUS = "infeasible"
TIME_LIMIT = "time_limit"


class BackendError(RuntimeError):
    pass


@dataclass
class SolveOptions:
    time_limit: float = math.inf
    gap_tolerance: float = 1e-6
    int_tol: float = 1e-6
    branching: str = "most_fractional"   # or "priority": priority class first, then most fractional
    node_order: str = "best_first"       # or "depth_first"
    seed: int = 0
    node_limit: int | None = None
    priorities: Sequence[int] | None = None
    log_interval: float = 10.0
    heuristics: bool = True
    heuristic_every: int = 200
    # model-specific rounding: LP point -> candidate points whose integer parts get tried
    rounding: Callable[[np.ndarray], Sequence[np.ndarray]] | None = None
    rounding_every: int = 50

    def __post_init__(self):
        if not (self.gap_tolerance > 0 and self.int_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.time_limit <= 0:
            raise ValueError("time_limit must be positive")
        if self.branching not in ("most_fractional", "priority"):
            raise ValueError(f"unknown branching rule {self.branching!r}")
        if self.node_order not in ("best_first", "depth_first"):
            raise ValueError(f"unknown node order {self.node_order!r}")


@dataclass
class MilpResult:
    status: str
    x: np.ndarray | None
    objective: float
    bound: float
    gap: float
    nodes: int = 0
    wall_time: float = 0.0
    lp_iterations: int = 0
    failed_nodes: int = 0
    bound_trace: list[float] = field(default_factory=list, repr=False)

    @property
    def has_incumbent(self) -> bool:
        return self.x is not None

    def assignment(self, m: MilpModel) -> dict[str, float]:
        if self.x is None:
            return {}
        return {v.name: float(self.x[v.index]) for v in m.variables}


def relative_gap(incumbent: float, bound: float) -> float:
    if not math.isfinite(incumbent):
        return math.inf
    if not math.isfinite(bound):
        return math.inf
    return max(0.0, incumbent - bound) / max(1.0, abs(incumbent))


@dataclass(order=True)
class _Node:
    key: tuple
    bound: float = field(compare=False)
    depth: int = field(compare=False)
    changes: tuple = field(compare=False)      # ((col, lo, hi), ...) relative to the root box
    basis: BasisState | None = field(compare=False, default=None)


class _Search:
    def __init__(self, m: MilpModel, opt: SolveOptions):
        self.m = m
        self.opt = opt
        cm = m.compile()
        self.cm = cm
        lo, hi = cm.col_lo.copy(), cm.col_hi.copy()
        ints = cm.is_int
        lo[ints] = np.ceil(lo[ints] - opt.int_tol)
        hi[ints] = np.floor(hi[ints] + opt.int_tol)
        self.root_lo, self.root_hi = lo, hi
        self.ints = np.flatnonzero(ints)
        self.lp = SimplexSolver(cm.A, cm.c, cm.row_lo, cm.row_hi, lo, hi)
        self.n = len(cm.c)
        pri = np.zeros(self.n) if opt.priorities is None else np.asarray(opt.priorities, float)
        if pri.shape != (self.n,):
            raise ValueError("priorities must have one entry per variable")
        self.priority = pri
        self.rng = np.random.default_rng(opt.seed)
        self.incumbent: np.ndarray | None = None
        self.inc_obj = math.inf
        self.heap: list[_Node] = []
        self.counter = 0
        self.nodes = 0
        self.failed = 0
        self.lost_bound = math.inf     # smallest bound among abandoned nodes
        self.global_bound = -math.inf
        self.trace: list[float] = []
        self.t0 = time.perf_counter()
        self.last_log = self.t0
        self.next_heuristic = opt.heuristic_every
        self.next_rounding = 0

    # -- helpers ---------------------------------------------------------------
    def elapsed(self) -> float:
        return time.perf_counter() - self.t0

    def abs_gap(self) -> float:
        if not math.isfinite(self.inc_obj):
            return 0.0
        return self.opt.gap_tolerance * max(1.0, abs(self.inc_obj))

    def cutoff(self) -> float:
        return self.inc_obj - self.abs_gap() if math.isfinite(self.inc_obj) else math.inf

    def set_box(self, changes) -> None:
        lp = self.lp
        lp.lo[: self.n] = self.root_lo
        lp.hi[: self.n] = self.root_hi
        for j, lo, hi in changes:
            lp.lo[j] = max(lp.lo[j], lo)
            lp.hi[j] = min(lp.hi[j], hi)

    def solve_lp(self, warm: BasisState | None, use_cutoff: bool = True) -> tuple[str, float]:
        """Returns (status, objective); status may be 'cutoff' or 'failed'."""
        cut = self.cutoff() if use_cutoff and math.isfinite(self.cutoff()) else None
        for attempt in range(2):
            try:
                st = self.lp.solve(warm if attempt == 0 else None, cutoff=cut)
            except LpNumericalError as exc:
                log.debug("node LP failed (%s)%s", exc, ", retrying cold" if attempt == 0 else "")
                st = "failed"
            if st in (OPTIMAL, INFEASIBLE, UNBOUNDED, "cutoff"):
                obj = self.lp.objective() + self.cm.obj_offset if st == OPTIMAL else math.inf
                return st, obj
            # cold restart: forget the basis
            self.lp.state = None
        return "failed", math.nan

    def fractional(self, x: np.ndarray) -> np.ndarray:
        xi = x[self.ints]
        frac = np.abs(xi - np.round(xi))
        return self.ints[frac > self.opt.int_tol]

    def pick_branch(self, x: np.ndarray, cand: np.ndarray) -> int:
        f = x[cand] - np.floor(x[cand])
        score = np.minimum(f, 1.0 - f)
        if self.opt.branching == "priority":
            top = self.priority[cand].max()
            keep = self.priority[cand] == top
            cand, score = cand[keep], score[keep]
        best = score.max()
        # ties: lowest column index
        return int(cand[np.flatnonzero(score >= best - 1e-12)[0]])

    def try_incumbent(self, x: np.ndarray, changes, basis: BasisState | None) -> None:
        """Fix integers at their rounded values, polish continuous ones, and accept if valid."""
        xr = x.copy()
        xr[self.ints] = np.round(x[self.ints])
        fixed = tuple(changes) + tuple((int(j), xr[j], xr[j]) for j in self.ints)
        self.set_box(fixed)
        st, obj = self.solve_lp(basis, use_cutoff=False)
        if st == OPTIMAL:
            cand = self.lp.x[: self.n].copy()
            cand[self.ints] = xr[self.ints]
            ev = evaluate(self.m, cand, tol=1e-6)
            if ev.feasible and ev.objective < self.inc_obj:
                self.accept(cand, ev.objective)
        self.set_box(changes)

    def heuristic_dive(self, changes, basis: BasisState | None) -> bool:
        """Fix-and-round dive outside the search tree; True if it improved the incumbent.

        Every step fixes the integer columns that are already integral, then
        rounds the fractional column with the highest priority (least
        fractional first).  An infeasible rounding is flipped once.
        """
        fixed = list(changes)
        before = self.inc_obj
        flipped = False
        for _ in range(2 * len(self.ints) + 2):
            if self.elapsed() > self.opt.time_limit:
                break
            self.set_box(fixed)
            st, obj = self.solve_lp(basis)
            if st != OPTIMAL or obj >= self.cutoff():
                if flipped or not fixed or fixed is changes:
                    break
                j, v, _ = fixed[-1]
                alt = self.root_lo[j] + self.root_hi[j] - v
                fixed[-1] = (j, alt, alt)
                flipped = True
                continue
            flipped = False
            x = self.lp.x[: self.n].copy()
            basis = self.lp.state.copy()
            frac = self.fractional(x)
            if frac.size == 0:
                self.try_incumbent(x, fixed, basis)
                break
            lo, hi = self.lp.lo[: self.n], self.lp.hi[: self.n]
            free = self.ints[lo[self.ints] < hi[self.ints]]
            settled = free[np.abs(x[free] - np.round(x[free])) <= self.opt.int_tol]
            fixed += [(int(j), float(np.round(x[j])), float(np.round(x[j]))) for j in settled]
            dist = np.abs(x[frac] - np.round(x[frac]))
            order = np.lexsort((frac, dist, -self.priority[frac]))
            j = int(frac[order[0]])
            v = float(np.round(x[j]))
            fixed.append((j, v, v))
        self.set_box(changes)
        return self.inc_obj < before

    def apply_rounding(self, x: np.ndarray, basis: BasisState | None, changes=()) -> None:
        if self.opt.rounding is None or self.nodes < self.next_rounding:
            return
        self.next_rounding = self.nodes + self.opt.rounding_every
        for cand in self.opt.rounding(x):
            self.try_incumbent(np.asarray(cand, dtype=float), (), basis)
        self.set_box(changes)

    def trivial_point(self) -> None:
        """Try every integer column at its lower bound."""
        fixed = tuple((int(j), self.root_lo[j], self.root_lo[j]) for j in self.ints)
        self.set_box(fixed)
        st, _ = self.solve_lp(None, use_cutoff=False)
        if st == OPTIMAL:
            x = self.lp.x[: self.n].copy()
            ev = evaluate(self.m, x, tol=1e-6)
            if ev.feasible and ev.objective < self.inc_obj:
                self.accept(x, ev.objective)
        self.set_box(())
        self.lp.state = None

    def accept(self, x: np.ndarray, obj: float) -> None:
        self.incumbent = x
        self.inc_obj = obj
        log.info("incumbent %.8g after %d nodes (%.1fs)", obj, self.nodes, self.elapsed())

    def push(self, bound: float, depth: int, changes, basis) -> None:
        self.counter += 1
        if self.opt.node_order == "depth_first":
            key = (-depth, self.counter)
        else:
            key = (bound, self.rng.random(), self.counter)
        heapq.heappush(self.heap, _Node(key, bound, depth, tuple(changes), basis))

    def open_bound(self, extra: float = math.inf) -> float:
        b = min(extra, self.lost_bound)
        if self.heap:
            b = min(b, min(nd.bound for nd in self.heap) if self.opt.node_order == "depth_first"
                    else self.heap[0].bound)
        return b

    def update_bound(self, extra: float = math.inf) -> None:
        b = self.open_bound(extra)
        if not math.isfinite(b):
            b = self.inc_obj
        b = min(b, self.inc_obj)
        if b > self.global_bound:
            self.global_bound = b
        self.trace.append(self.global_bound)

    def reduced_cost_fix(self, obj: float, changes) -> list:
        """Fix nonbasic binaries whose reduced cost alone exceeds the cutoff."""
        if not math.isfinite(self.inc_obj):
            return list(changes)
        res = self.lp.result(OPTIMAL)
        d = res.reduced_costs
        x = res.x
        room = self.cutoff() - obj
        lo, hi = self.lp.lo[: self.n], self.lp.hi[: self.n]
        out = list(changes)
        ints = self.ints
        free = lo[ints] < hi[ints]
        at_lo = free & (np.abs(x[ints] - lo[ints]) <= 1e-9) & (d[ints] > room)
        at_hi = free & (np.abs(x[ints] - hi[ints]) <= 1e-9) & (-d[ints] > room)
        for j in ints[at_lo]:
            out.append((int(j), lo[j], lo[j]))
        for j in ints[at_hi]:
            out.append((int(j), hi[j], hi[j]))
        return out

    # -- main loop ---------------------------------------------------------------
    def run(self) -> MilpResult:
        opt = self.opt
        self.set_box(())
        st, obj = self.solve_lp(None, use_cutoff=False)
        if st == INFEASIBLE:
            return self.finish(INFEASIBLE_STATUS)
        if st == UNBOUNDED:
            raise ValueError("LP relaxation is unbounded")
        if st == "failed":
            raise LpNumericalError("root LP could not be solved")
        self.nodes = 1
        self.global_bound = obj
        self.trace.append(obj)
        root_basis = self.lp.state.copy()
        self.apply_rounding(self.lp.x[: self.n].copy(), root_basis)
        if opt.heuristics:
            self.trivial_point()
            self.heuristic_dive((), root_basis)
        self.push(obj, 0, (), root_basis)
        # the root is re-solved from its stored basis when popped; cheap
        self.heap[0].bound = obj
        while self.heap:
            if self.elapsed() > opt.time_limit:
                return self.finish(TIME_LIMIT)
            if opt.node_limit is not None and self.nodes >= opt.node_limit:
                return self.finish(FEASIBLE if self.incumbent is not None else TIME_LIMIT)
            node = heapq.heappop(self.heap)
            if node.bound >= self.cutoff():
                continue
            if opt.heuristics and self.nodes >= self.next_heuristic:
                self.next_heuristic = self.nodes + opt.heuristic_every
                self.heuristic_dive(node.changes, node.basis)
            self.dive(node)
            self.update_bound()
            closed = relative_gap(self.inc_obj, self.global_bound) <= opt.gap_tolerance
            if self.incumbent is not None and closed:
                return self.finish(OPTIMAL_STATUS)
            if time.perf_counter() - self.last_log > opt.log_interval:
                self.last_log = time.perf_counter()
                log.info("nodes %d open %d bound %.8g incumbent %.8g", self.nodes, len(self.heap),
                         self.global_bound, self.inc_obj)
        if self.lost_bound < math.inf and self.lost_bound < self.inc_obj:
            return self.finish(FEASIBLE if self.incumbent is not None else TIME_LIMIT)
        return self.finish(OPTIMAL_STATUS if self.incumbent is not None else INFEASIBLE_STATUS)

    def dive(self, node: _Node) -> None:
        changes, basis, depth, parent_bound = node.changes, node.basis, node.depth, node.bound
        while True:
            if self.elapsed() > self.opt.time_limit:
                self.push(parent_bound, depth, changes, basis)
                return
            self.set_box(changes)
            st, obj = self.solve_lp(basis)
            self.nodes += 1
            if st == "failed":
                self.failed += 1
                self.lost_bound = min(self.lost_bound, parent_bound)
                log.warning("abandoned node at depth %d after LP failure", depth)
                return
            if st != OPTIMAL or obj >= self.cutoff():
                return
            x = self.lp.x[: self.n].copy()
            here = self.lp.state.copy()
            frac = self.fractional(x)
            if frac.size == 0:
                self.try_incumbent(x, changes, here)
                return
            changes = self.reduced_cost_fix(obj, changes)
            self.apply_rounding(x, here, changes)
            j = self.pick_branch(x, frac)
            down = tuple(changes) + ((j, self.root_lo[j], math.floor(x[j])),)
            up = tuple(changes) + ((j, math.ceil(x[j]), self.root_hi[j]),)
            first, second = (up, down) if x[j] - math.floor(x[j]) >= 0.5 else (down, up)
            self.push(obj, depth + 1, second, here)
            changes, basis, depth, parent_bound = first, here, depth + 1, obj
            # keep the global bound honest while diving
            self.update_bound(obj)

    def finish(self, status: str) -> MilpResult:
        if self.incumbent is None:
            inc = math.inf
            bound = self.global_bound if status != INFEASIBLE_STATUS else math.inf
        else:
            inc = self.inc_obj
            bound = min(self.global_bound, inc)
            if status == OPTIMAL_STATUS and not self.heap and self.lost_bound == math.inf:
                bound = max(bound, min(inc, self.open_bound()))
        return MilpResult(status, self.incumbent, inc, bound, relative_gap(inc, bound),
                          self.nodes, self.elapsed(), self.lp.iterations, self.failed, self.trace)


def solve_milp(m: MilpModel, opt: SolveOptions | None = None) -> MilpResult:
    """Minimize ``m`` by branch-and-bound on its LP relaxation."""
    return _Search(m, opt or SolveOptions()).run()


# -- external solvers --------------------------------------------------------------

_BACKEND_ARGS = "{mps} {sol} --time-limit {time_limit} --gap {gap}"


def builtin_backend() -> str:
    return f"{shlex.quote(sys.executable)} -m gridpart.backend builtin " + _BACKEND_ARGS


def highs_backend() -> str:
    return f"{shlex.quote(sys.executable)} -m gridpart.backend highs " + _BACKEND_ARGS


def write_solution_file(path, names: Sequence[str], x, objective: float, status: str,
                        bound: float | None = None) -> None:
    lines = [f"status {status}", f"objective {objective!r}"]
    if bound is not None:
        lines.append(f"bound {bound!r}")
    if x is not None:
        lines += [f"{n} {float(v)!r}" for n, v in zip(names, x)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_solution_file(text: str) -> tuple[str, float, float | None, dict[str, float]]:
    status, objective, bound, values = None, math.nan, None, {}
    for raw in text.splitlines():
        parts = raw.split()
        if not parts:
            continue
        if len(parts) != 2:
            raise BackendError(f"malformed solution line: {raw!r}")
        key, val = parts
        if key == "status":
            status = val
        elif key == "objective":
            objective = float(val)
        elif key == "bound":
            bound = float(val)
        else:
            values[key] = float(val)
    if status is None:
        raise BackendError("solution file has no status line")
    return status, objective, bound, values


def solve_via_backend(m: MilpModel, command: str, time_limit: float | None = None,
                      gap: float | None = None, keep_dir: str | os.PathLike | None = None) -> MilpResult:
    """Export ``m`` as MPS, run ``command`` and validate what comes back.

    ``command`` is a template with ``{mps}`` and ``{sol}`` placeholders; the
    optional ``{time_limit}`` and ``{gap}`` placeholders are filled when given.
    """
    t0 = time.perf_counter()
    names = mps_names(m)
    with tempfile.TemporaryDirectory(dir=keep_dir) as tmp:
        mps = Path(tmp) / "model.mps"
        sol = Path(tmp) / "model.sol"
        mps.write_text(export_mps(m))
        fields = {"mps": shlex.quote(str(mps)), "sol": shlex.quote(str(sol)),
                  "time_limit": repr(float(time_limit if time_limit is not None else math.inf)),
                  "gap": repr(float(gap if gap is not None else 1e-6))}
        cmd = command.format(**fields)
        env = dict(os.environ)
        src = str(Path(__file__).resolve().parent.parent)
        env["PYTHONPATH"] = src + (os.pathsep + env["PYTHONPATH"] if env.get("PYTHONPATH") else "")
        proc = subprocess.run(shlex.split(cmd), capture_output=True, text=True, env=env)
        if proc.returncode != 0 or not sol.exists():
            raise BackendError(f"backend failed with code {proc.returncode}: {proc.stderr.strip()[-500:]}")
        status, objective, bound, values = read_solution_file(sol.read_text())
    wall = time.perf_counter() - t0
    if status == INFEASIBLE_STATUS:
        return MilpResult(INFEASIBLE_STATUS, None, math.inf, math.inf, math.inf, wall_time=wall)
    if not values:
        return MilpResult(status, None, math.inf, bound if bound is not None else -math.inf,
                          math.inf, wall_time=wall)
    missing = [n for n in names if n not in values]
    if missing:
        raise BackendError(f"backend solution failed validation: missing {missing[:5]}")
    x = np.array([values[n] for n in names])
    ev = evaluate(m, x, tol=1e-6)
    if not ev.feasible:
        raise BackendError(f"backend solution failed validation: {ev.worst} violated by "
                           f"{ev.max_violation:.3g}")
    obj = ev.objective
    if bound is None:
        bound = obj if status == OPTIMAL_STATUS else -math.inf
    bound = min(bound, obj)
    return MilpResult(status, x, obj, bound, relative_gap(obj, bound), wall_time=wall)
