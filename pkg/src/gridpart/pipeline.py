"""Glue between scenarios, model building, solving and verification."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import lru_cache

from .bb import MilpResult, SolveOptions, highs_backend, solve_milp, solve_via_backend
from .formulation import (PartitionSolution, SaaConfig, branching_priority, build_deterministic,
                          build_saa, extract_solution, grid_formers_of)
from .heuristics import PartitionHeuristic
from .milp import MilpModel
from .network import FeederNetwork, check_topology, partition_graph
from .scenarios import (ProfileConfig, ScenarioSet, fit_clusters, sample_stratified, sample_uniform,
                        synthesize)
from .validation import DispatchChecker, load_buses

BACKENDS = ("builtin", "highs")


def derived_seed(base: int, *parts) -> int:
    """Stable 32-bit seed for a (base, part, ...) tuple."""
    text = ":".join(str(p) for p in (base,) + parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "little")


@lru_cache(maxsize=8)
def _population(doc_key: str, net: FeederNetwork, profile_seed: int, hours: int) -> ScenarioSet:
    return synthesize(net, ProfileConfig(hours=hours), seed=profile_seed)


def population(net: FeederNetwork, profile_seed: int = 0, hours: int = 8760) -> ScenarioSet:
    """The synthetic scenario population that training and assessment draws come from."""
    return _population(net.name, net, profile_seed, hours)


def draw(pool: ScenarioSet, n: int, seed: int, method: str = "uniform",
         clusters: int = 10) -> ScenarioSet:
    if method == "uniform":
        return sample_uniform(pool, n, seed)
    if method == "stratified":
        model = _cluster_model(pool, clusters)
        return sample_stratified(pool, model, n, seed)
    raise ValueError(f"unknown sampling method {method!r}")


_CLUSTERS: dict = {}


def _cluster_model(pool: ScenarioSet, k: int):
    key = (id(pool), k)
    if key not in _CLUSTERS:
        _CLUSTERS[key] = (pool, fit_clusters(pool, k))
    return _CLUSTERS[key][1]


def solve(m: MilpModel, backend: str = "builtin", time_limit: float = math.inf,
          gap: float = 1e-6, seed: int = 0, net: FeederNetwork | None = None) -> MilpResult:
    """Solve ``m``; with the built-in solver, ``net`` enables the partition heuristic."""
    if backend == "builtin":
        rounding = PartitionHeuristic(m, net, seed) if net is not None else None
        opt = SolveOptions(time_limit=time_limit, gap_tolerance=gap, seed=seed,
                           branching="priority", priorities=branching_priority(m),
                           rounding=rounding)
        return solve_milp(m, opt)
    command = highs_backend() if backend == "highs" else backend
    if "{mps}" not in command or "{sol}" not in command:
        raise ValueError(f"unknown backend {backend!r}")
    return solve_via_backend(m, command, time_limit=time_limit, gap=gap)


@dataclass
class PartitionRun:
    solution: PartitionSolution | None
    result: MilpResult
    model: MilpModel


def build(net: FeederNetwork, scenarios: ScenarioSet, gamma: float = 0.0, rho: float = 1.0,
          weights=None) -> MilpModel:
    if len(scenarios) == 1 and gamma == 0.0 and rho == 1.0:
        return build_deterministic(net, scenarios, weights)
    return build_saa(net, scenarios, SaaConfig(gamma, rho), weights)


def run_partition(net: FeederNetwork, scenarios: ScenarioSet, gamma: float = 0.0,
                  rho: float = 1.0, backend: str = "builtin", time_limit: float = math.inf,
                  gap: float = 1e-6, seed: int = 0, weights=None) -> PartitionRun:
    m = build(net, scenarios, gamma, rho, weights)
    res = solve(m, backend, time_limit, gap, seed, net)
    if res.x is None:
        return PartitionRun(None, res, m)
    aligned = scenarios.aligned(partition_graph(net).vertices)
    sol = extract_solution(m, res.x, scenarios=aligned, net=net)
    sol.solver = {"status": res.status, "bound": float(res.bound), "gap": float(res.gap),
                  "backend": backend if backend in BACKENDS else "command"}
    return PartitionRun(sol, res, m)


def verify(net: FeederNetwork, sol: PartitionSolution, scenarios: ScenarioSet) -> list[str]:
    """Problems found by re-checking ``sol`` independently of the solver; empty if sound."""
    problems = []
    g = partition_graph(net)
    try:
        bn, be = sol.masks(g)
    except ValueError as exc:
        return [str(exc)]
    rep = check_topology(g, bn, be, grid_formers_of(net, g))
    if not rep.is_forest:
        problems.append("energized lines contain a cycle")
    if rep.components_without_grid_former:
        problems.append(f"islands without a grid-former: {rep.components_without_grid_former}")
    if rep.dangling_energized_edges:
        problems.append(f"energized lines with a de-energized end: {rep.dangling_energized_edges}")
    if problems:
        return problems
    chk = DispatchChecker(net, sol)
    retained = sol.z if sol.z else [1] * len(scenarios)
    served = sol.per_scenario.get("served_p", [])
    for a, xi in enumerate(scenarios.aligned(load_buses(net))):
        if retained[a]:
            if not chk.feasible(xi):
                problems.append(f"retained scenario {a} has no feasible dispatch")
        elif served and abs(served[a]) > 1e-6:
            problems.append(f"dropped scenario {a} serves load {served[a]:.3g}")
    if sol.gamma is not None and sol.z:
        need = SaaConfig(sol.gamma).min_retained(len(sol.z))
        if sum(sol.z) < need:
            problems.append(f"only {sum(sol.z)} scenarios retained, {need} required")
    return problems
