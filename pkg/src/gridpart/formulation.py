"""Network-partitioning MILPs: deterministic and sample-average chance-constrained.

Each ``*_block`` function appends one family of rows to a :class:`MilpModel`.
Rows are named ``<family>[<index>]`` (with an ``@s<k>`` suffix for scenario
``k``) so a model dump can be read against the formulation.

Sign convention for line flows: ``P[e] > 0`` means power travelling from the
``from`` bus to the ``to`` bus, and every bus satisfies
``outflow - inflow = p_gen - p_load``.  Voltage then drops along the flow
direction: ``v_from - v_to = r*P + x*Q`` on energized lines.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components
import scipy.sparse as sp

from .milp import MilpModel, Variable, evaluate, mccormick_product
from .network import (FeederNetwork, PartitionGraph, check_topology, incidence_matrix,
                      partition_graph)
from .scenarios import Scenario, ScenarioSet

V_MIN, V_MAX = 0.95, 1.05
INT_TOL = 1e-6


@dataclass
class DesignVars:
    b_n: list[Variable]
    b_e: list[Variable]
    theta: list[Variable]
    f: list[Variable]
    f_prime: list[Variable]


@dataclass
class ScenarioVars:
    v: list[Variable]
    p_g: list[Variable]
    q_g: list[Variable]
    p_d: list[Variable]
    q_d: list[Variable]
    P: list[Variable]
    Q: list[Variable]
    u: list[Variable]
    z: Variable | None = None


@dataclass(frozen=True)
class SaaConfig:
    gamma: float = 0.0
    relax_fraction: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 < self.relax_fraction <= 1.0:
            raise ValueError(f"relax_fraction must lie in (0, 1], got {self.relax_fraction}")

    def min_retained(self, n: int) -> int:
        """Smallest admissible number of enforced scenarios, ceil((1-gamma)*n)."""
        return max(0, math.ceil((1.0 - self.gamma) * n - 1e-9))


def _sfx(alpha: int | None) -> str:
    return "" if alpha is None else f"@s{alpha}"


def grid_formers_of(net: FeederNetwork, g: PartitionGraph) -> list[str]:
    return [v for v in g.vertices if net.bus(v).grid_forming]


# -- design-level blocks -----------------------------------------------------------

def design_vars(m: MilpModel, g: PartitionGraph, n_grid_formers: int) -> DesignVars:
    nv = g.n_vertices
    fcap = max(nv - 1, 0)
    gcap = max(nv - n_grid_formers, 0)
    ids = [g.edge_id(k) for k in range(g.n_edges)]
    return DesignVars(
        b_n=[m.add_binary(f"bn[{v}]") for v in g.vertices],
        b_e=[m.add_binary(f"be[{e}]") for e in ids],
        theta=[m.add_binary(f"theta[{e}]") for e in ids],
        f=[m.add_var(f"f[{e}]", -fcap, fcap) for e in ids],
        f_prime=[m.add_var(f"fgf[{e}]", -gcap, gcap) for e in ids],
    )


def topology_block(m: MilpModel, g: PartitionGraph, d: DesignVars) -> list[int]:
    """An energized line needs both end buses energized."""
    src, dst = g.edge_endpoints()
    return [m.add_constraint([(d.b_n[src[k]], 1.0), (d.b_n[dst[k]], 1.0), (d.b_e[k], -2.0)],
                             ">=", 0.0, f"topo[{g.edge_id(k)}]")
            for k in range(g.n_edges)]


def radiality_block(m: MilpModel, g: PartitionGraph, d: DesignVars) -> list[int]:
    """Select a spanning tree with ``theta`` and keep energized lines inside it.

    Connectivity of the tree is certified by a unit-injection commodity flow
    ``f`` towards one reference vertex.  When the partition graph itself is
    disconnected each component gets its own reference vertex (its first
    vertex) and ``theta`` selects a spanning forest with one tree per component.
    """
    nv, ne = g.n_vertices, g.n_edges
    if nv == 0:
        raise ValueError("partition graph has no vertices")
    src, dst = g.edge_endpoints()
    adj = sp.coo_matrix((np.ones(ne), (src, dst)), shape=(nv, nv))
    n_comp, labels = connected_components(adj, directed=False)
    refs = {int(np.flatnonzero(labels == c)[0]) for c in range(n_comp)}
    Atilde = incidence_matrix(g).tocsc()
    handles = []
    for k in range(nv):
        if k in refs:
            continue
        col = Atilde[:, k]
        terms = [(d.f[e], val) for e, val in zip(col.indices, col.data)]
        # Atilde^T f = 1: every non-reference vertex pushes out one unit
        handles.append(m.add_constraint(terms, "==", 1.0, f"conn[{g.vertices[k]}]"))
    cap = nv - 1
    for e in range(ne):
        eid = g.edge_id(e)
        handles.append(m.add_constraint([(d.f[e], 1.0), (d.theta[e], -cap)], "<=", 0.0,
                                        f"treeflow_hi[{eid}]"))
        handles.append(m.add_constraint([(d.f[e], 1.0), (d.theta[e], cap)], ">=", 0.0,
                                        f"treeflow_lo[{eid}]"))
    handles.append(m.add_constraint([(t, 1.0) for t in d.theta], "==", float(nv - n_comp),
                                    "tree_size"))
    for e in range(ne):
        handles.append(m.add_constraint([(d.b_e[e], 1.0), (d.theta[e], -1.0)], "<=", 0.0,
                                        f"forest[{g.edge_id(e)}]"))
    return handles


def grid_forming_block(m: MilpModel, g: PartitionGraph, grid_formers: Iterable[str],
                       d: DesignVars) -> list[int]:
    """Every energized non-grid-forming bus must reach an energized grid-former.

    Each such bus injects one unit of a virtual commodity ``f'`` which may
    only travel over energized lines and is absorbed at grid-forming buses.
    """
    gf = set(grid_formers)
    if not gf:
        raise ValueError("at least one grid-forming bus is required")
    unknown = gf - set(g.vertices)
    if unknown:
        raise ValueError(f"grid-formers not in partition graph: {sorted(unknown)}")
    src, dst = g.edge_endpoints()
    out_edges: list[list[int]] = [[] for _ in g.vertices]
    in_edges: list[list[int]] = [[] for _ in g.vertices]
    for e in range(g.n_edges):
        out_edges[src[e]].append(e)
        in_edges[dst[e]].append(e)
    handles = []
    for k, vid in enumerate(g.vertices):
        if vid in gf:
            continue
        terms = [(d.f_prime[e], 1.0) for e in out_edges[k]] + \
                [(d.f_prime[e], -1.0) for e in in_edges[k]] + [(d.b_n[k], -1.0)]
        handles.append(m.add_constraint(terms, "==", 0.0, f"gf_balance[{vid}]"))
    cap = float(g.n_vertices - len(gf))
    for e in range(g.n_edges):
        eid = g.edge_id(e)
        handles.append(m.add_constraint([(d.f_prime[e], 1.0), (d.b_e[e], -cap)], "<=", 0.0,
                                        f"gf_flow_hi[{eid}]"))
        handles.append(m.add_constraint([(d.f_prime[e], 1.0), (d.b_e[e], cap)], ">=", 0.0,
                                        f"gf_flow_lo[{eid}]"))
    return handles


# -- per-scenario blocks ---------------------------------------------------------------

def scenario_vars(m: MilpModel, g: PartitionGraph, net: FeederNetwork, xi: Scenario,
                  alpha: int | None = None) -> ScenarioVars:
    s = _sfx(alpha)
    buses = [net.bus(v) for v in g.vertices]
    lines = g.lines
    return ScenarioVars(
        v=[m.add_var(f"v[{v}]{s}", 0.0, V_MAX) for v in g.vertices],
        p_g=[m.add_var(f"pg[{v}]{s}", 0.0, float(xi.gp[k])) for k, v in enumerate(g.vertices)],
        q_g=[m.add_var(f"qg[{v}]{s}", -b.q_min_absorb, float(xi.gq[k]))
             for k, (v, b) in enumerate(zip(g.vertices, buses))],
        p_d=[m.add_var(f"pd[{v}]{s}", 0.0, float(xi.dp[k])) for k, v in enumerate(g.vertices)],
        q_d=[m.add_var(f"qd[{v}]{s}", 0.0, float(xi.dq[k])) for k, v in enumerate(g.vertices)],
        P=[m.add_var(f"P[{g.edge_id(e)}]{s}", -l.p_max, l.p_max) for e, l in enumerate(lines)],
        Q=[m.add_var(f"Q[{g.edge_id(e)}]{s}", -l.q_max, l.q_max) for e, l in enumerate(lines)],
        u=[],
    )


def power_flow_block(m: MilpModel, g: PartitionGraph, net: FeederNetwork, xi: Scenario,
                     d: DesignVars, sv: ScenarioVars, alpha: int | None = None,
                     include_topology: bool = False) -> list[int]:
    """Voltage window, line limits, generation limits, nodal balance and LinDistFlow.

    The topology coupling rows do not depend on the scenario; pass
    ``include_topology=True`` for exactly one scenario (the builders do this).
    """
    nv, ne = g.n_vertices, g.n_edges
    for arr in (xi.gp, xi.gq, xi.dp, xi.dq):
        if len(arr) != nv:
            raise ValueError(f"scenario has {len(arr)} buses, graph has {nv}")
    s = _sfx(alpha)
    handles = topology_block(m, g, d) if include_topology else []
    add = m.add_constraint
    for k, vid in enumerate(g.vertices):
        bus = net.bus(vid)
        bn = d.b_n[k]
        handles.append(add([(sv.v[k], 1.0), (bn, -V_MIN)], ">=", 0.0, f"vwin_lo[{vid}]{s}"))
        handles.append(add([(sv.v[k], 1.0), (bn, -V_MAX)], "<=", 0.0, f"vwin_hi[{vid}]{s}"))
        handles.append(add([(sv.p_g[k], 1.0), (bn, -float(xi.gp[k]))], "<=", 0.0,
                           f"pgen_cap[{vid}]{s}"))
        handles.append(add([(sv.q_g[k], 1.0), (bn, -float(xi.gq[k]))], "<=", 0.0,
                           f"qgen_cap[{vid}]{s}"))
        handles.append(add([(sv.q_g[k], 1.0), (bn, bus.q_min_absorb)], ">=", 0.0,
                           f"qgen_absorb[{vid}]{s}"))
    for e, line in enumerate(g.lines):
        eid = g.edge_id(e)
        be = d.b_e[e]
        handles.append(add([(sv.P[e], 1.0), (be, -line.p_max)], "<=", 0.0, f"pcap_hi[{eid}]{s}"))
        handles.append(add([(sv.P[e], 1.0), (be, line.p_max)], ">=", 0.0, f"pcap_lo[{eid}]{s}"))
        handles.append(add([(sv.Q[e], 1.0), (be, -line.q_max)], "<=", 0.0, f"qcap_hi[{eid}]{s}"))
        handles.append(add([(sv.Q[e], 1.0), (be, line.q_max)], ">=", 0.0, f"qcap_lo[{eid}]{s}"))
    src, dst = g.edge_endpoints()
    out_edges: list[list[int]] = [[] for _ in range(nv)]
    in_edges: list[list[int]] = [[] for _ in range(nv)]
    for e in range(ne):
        out_edges[src[e]].append(e)
        in_edges[dst[e]].append(e)
    for k, vid in enumerate(g.vertices):
        for flow, gen, load, tag in ((sv.P, sv.p_g, sv.p_d, "pbal"), (sv.Q, sv.q_g, sv.q_d, "qbal")):
            terms = [(flow[e], 1.0) for e in out_edges[k]] + \
                    [(flow[e], -1.0) for e in in_edges[k]] + [(gen[k], -1.0), (load[k], 1.0)]
            handles.append(add(terms, "==", 0.0, f"{tag}[{vid}]{s}"))
    # the flow caps already zero P, Q on open lines, so only be*(v_i - v_j) needs a product
    for e, line in enumerate(g.lines):
        eid = g.edge_id(e)
        u = mccormick_product(m, d.b_e[e], [(sv.v[src[e]], 1.0), (sv.v[dst[e]], -1.0)],
                              -V_MAX, V_MAX, f"vdrop[{eid}]{s}")
        sv.u.append(u)
        handles.append(add([(u, 1.0), (sv.P[e], -line.r), (sv.Q[e], -line.x)], "==", 0.0,
                           f"ldf[{eid}]{s}"))
    return handles


def fixed_load_block(m: MilpModel, g: PartitionGraph, xi: Scenario, d: DesignVars,
                     sv: ScenarioVars, alpha: int | None = None) -> list[int]:
    """Inelastic loads: an energized bus consumes exactly its demand."""
    s = _sfx(alpha)
    handles = []
    for k, vid in enumerate(g.vertices):
        handles.append(m.add_constraint([(sv.p_d[k], 1.0), (d.b_n[k], -float(xi.dp[k]))], "==",
                                        0.0, f"pload[{vid}]{s}"))
        handles.append(m.add_constraint([(sv.q_d[k], 1.0), (d.b_n[k], -float(xi.dq[k]))], "==",
                                        0.0, f"qload[{vid}]{s}"))
    return handles


def chance_block(m: MilpModel, g: PartitionGraph, scenarios: ScenarioSet, cfg: SaaConfig,
                 d: DesignVars, svs: Sequence[ScenarioVars]) -> list[int]:
    """Sample-average version of the self-adequacy chance constraint.

    Per scenario ``a`` a binary ``z[a]`` marks it as enforced.  Enforced
    scenarios serve full demand at every energized bus; dropped ones serve
    nothing.  At least ``ceil((1-gamma) N)`` scenarios must be enforced.
    """
    n = len(scenarios)
    if len(svs) != n:
        raise ValueError("one ScenarioVars per scenario is required")
    rho = cfg.relax_fraction
    add = m.add_constraint
    handles = []
    for a, (xi, sv) in enumerate(zip(scenarios, svs)):
        s = _sfx(a)
        z = sv.z if sv.z is not None else m.add_binary(f"z[{a}]")
        sv.z = z
        for k, vid in enumerate(g.vertices):
            bn = d.b_n[k]
            for load, dem, tag in ((sv.p_d[k], float(xi.dp[k]), "p"), (sv.q_d[k], float(xi.dq[k]), "q")):
                handles.append(add([(load, 1.0), (bn, -dem)], "<=", 0.0, f"{tag}load_cap[{vid}]{s}"))
                if dem > 0.0:
                    big_m = rho * dem
                    # -load + rho*dem*bn <= M (1 - z)
                    handles.append(add([(load, -1.0), (bn, rho * dem), (z, big_m)], "<=", big_m,
                                       f"{tag}adequacy[{vid}]{s}"))
                handles.append(add([(load, 1.0), (z, -dem)], "<=", 0.0, f"{tag}load_drop[{vid}]{s}"))
    handles.append(add([(sv.z, 1.0) for sv in svs], ">=", float(cfg.min_retained(n)),
                       "retained_scenarios"))
    return handles


# -- builders ------------------------------------------------------------------------

def _objective(m: MilpModel, g: PartitionGraph, svs: Sequence[ScenarioVars],
               weights: Mapping[str, float] | None) -> None:
    w = [1.0 if weights is None else float(weights.get(v, 1.0)) for v in g.vertices]
    scale = 1.0 / len(svs)
    m.set_objective([(sv.p_d[k], -w[k] * scale) for sv in svs for k in range(g.n_vertices)])


def _design(m: MilpModel, net: FeederNetwork, g: PartitionGraph) -> DesignVars:
    gf = grid_formers_of(net, g)
    d = design_vars(m, g, len(gf))
    radiality_block(m, g, d)
    grid_forming_block(m, g, gf, d)
    return d


def build_deterministic(net: FeederNetwork, scenario: Scenario | ScenarioSet | None = None,
                        weights: Mapping[str, float] | None = None) -> MilpModel:
    """Maximize load served for one realization of demand and generation."""
    g = partition_graph(net)
    if scenario is None:
        scenario = ScenarioSet.nominal(net)
    if isinstance(scenario, ScenarioSet):
        if len(scenario) != 1:
            raise ValueError("build_deterministic takes exactly one scenario")
        scenario = scenario.aligned(g.vertices)[0]
    m = MilpModel(f"{net.name}-deterministic")
    d = _design(m, net, g)
    sv = scenario_vars(m, g, net, scenario)
    power_flow_block(m, g, net, scenario, d, sv, include_topology=True)
    fixed_load_block(m, g, scenario, d, sv)
    _objective(m, g, [sv], weights)
    m.notes.update(kind="deterministic", graph=g, design=d, scenario_vars=[sv], gamma=None,
                   rho=1.0, network=net.name, scenarios=[scenario])
    return m


def build_saa(net: FeederNetwork, scenarios: ScenarioSet, cfg: SaaConfig | None = None,
              weights: Mapping[str, float] | None = None) -> MilpModel:
    """Chance-constrained partitioning over ``N`` sampled scenarios."""
    cfg = cfg or SaaConfig()
    if len(scenarios) < 1:
        raise ValueError("build_saa needs at least one scenario")
    g = partition_graph(net)
    scenarios = scenarios.aligned(g.vertices)
    m = MilpModel(f"{net.name}-saa-N{len(scenarios)}")
    d = _design(m, net, g)
    svs = []
    for a, xi in enumerate(scenarios):
        sv = scenario_vars(m, g, net, xi, a)
        sv.z = m.add_binary(f"z[{a}]")
        power_flow_block(m, g, net, xi, d, sv, a, include_topology=(a == 0))
        svs.append(sv)
    chance_block(m, g, scenarios, cfg, d, svs)
    _objective(m, g, svs, weights)
    m.notes.update(kind="saa", graph=g, design=d, scenario_vars=svs, gamma=cfg.gamma,
                   rho=cfg.relax_fraction, network=net.name, scenarios=list(scenarios))
    return m


def branching_priority(m: MilpModel) -> np.ndarray:
    """Bus and line energization first, then scenario flags, then tree selection."""
    pri = np.zeros(m.num_vars, dtype=int)
    d: DesignVars | None = m.notes.get("design")
    if d is None:
        return pri
    for v in d.b_n:
        pri[v.index] = 3
    for v in d.b_e:
        pri[v.index] = 2
    for sv in m.notes.get("scenario_vars", []):
        if sv.z is not None:
            pri[sv.z.index] = 1
    return pri


# -- solutions ------------------------------------------------------------------------

@dataclass
class Microgrid:
    id: str
    buses: list[str]
    lines: list[str]
    grid_formers: list[str]


@dataclass
class PartitionSolution:
    objective: float
    energized_buses: list[str]
    energized_lines: list[str]
    microgrids: list[Microgrid]
    boundary_lines: list[str]
    z: list[int]
    gamma: float | None = None
    rho: float = 1.0
    per_scenario: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    network: str = ""

    def to_dict(self) -> dict:
        out = asdict(self)
        out["microgrids"] = [asdict(mg) for mg in self.microgrids]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "PartitionSolution":
        doc = dict(doc)
        doc["microgrids"] = [Microgrid(**mg) for mg in doc.get("microgrids", [])]
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in doc.items() if k in known})

    @classmethod
    def from_json(cls, text: str) -> "PartitionSolution":
        return cls.from_dict(json.loads(text))

    def masks(self, g: PartitionGraph) -> tuple[np.ndarray, np.ndarray]:
        """Energization vectors aligned with ``g``; raises on unknown ids."""
        on_b, on_l = set(self.energized_buses), set(self.energized_lines)
        unknown_b = on_b - set(g.vertices)
        ids = [g.edge_id(k) for k in range(g.n_edges)]
        unknown_l = on_l - set(ids)
        if unknown_b or unknown_l:
            raise ValueError(f"solution does not match network: unknown buses {sorted(unknown_b)}, "
                             f"lines {sorted(unknown_l)}")
        bn = np.array([v in on_b for v in g.vertices])
        be = np.array([e in on_l for e in ids])
        return bn, be


def _round_binaries(x: np.ndarray, vars_: Sequence[Variable]) -> np.ndarray:
    vals = np.array([x[v.index] for v in vars_], dtype=float)
    r = np.round(vals)
    if vals.size and np.max(np.abs(vals - r)) > INT_TOL:
        bad = vars_[int(np.argmax(np.abs(vals - r)))]
        raise ValueError(f"non-integral binary {bad.name} = {x[bad.index]!r}")
    return r.astype(int)


def _assignment_vector(model: MilpModel, assignment) -> np.ndarray:
    if isinstance(assignment, np.ndarray):
        return assignment.astype(float)
    if isinstance(assignment, Mapping):
        out = np.zeros(model.num_vars)
        for v in model.variables:
            for key in (v, v.index, v.name):
                try:
                    out[v.index] = assignment[key]
                    break
                except (KeyError, TypeError):
                    continue
            else:
                raise KeyError(f"assignment missing {v.name}")
        return out
    return np.asarray(assignment, dtype=float)


def microgrids_from_masks(net: FeederNetwork, g: PartitionGraph, bn: np.ndarray,
                          be: np.ndarray) -> tuple[list[Microgrid], list[str]]:
    gf = set(grid_formers_of(net, g))
    report = check_topology(g, bn, be, gf)
    edge_ids = [g.edge_id(k) for k in range(g.n_edges)]
    on_lines = [edge_ids[k] for k in np.flatnonzero(be)]
    mgs = []
    order = {v: k for k, v in enumerate(g.vertices)}
    for k, comp in enumerate(report.components, start=1):
        members = sorted(comp, key=order.__getitem__)
        lines = [e for e, (a, b) in zip(edge_ids, g.edges) if a in comp and b in comp and e in on_lines]
        mgs.append(Microgrid(f"MG{k}", members, lines, [v for v in members if v in gf]))
    energized = {v for v, on in zip(g.vertices, bn) if on}
    boundary = [l.id for l in net.lines if (l.from_bus in energized) != (l.to_bus in energized)]
    return mgs, boundary


def extract_solution(model: MilpModel, assignment, g: PartitionGraph | None = None,
                     scenarios: ScenarioSet | None = None,
                     net: FeederNetwork | None = None) -> PartitionSolution:
    """Read the partition (energized buses/lines, islands, boundary) off an assignment."""
    g = g or model.notes["graph"]
    if net is None:
        raise ValueError("extract_solution needs the FeederNetwork")
    x = _assignment_vector(model, assignment)
    d: DesignVars = model.notes["design"]
    svs: list[ScenarioVars] = model.notes["scenario_vars"]
    bn = _round_binaries(x, d.b_n).astype(bool)
    be = _round_binaries(x, d.b_e).astype(bool)
    mgs, boundary = microgrids_from_masks(net, g, bn, be)
    z = []
    per = {"served_p": [], "served_q": [], "gen_p": []}
    for sv in svs:
        if sv.z is not None:
            z.append(int(_round_binaries(x, [sv.z])[0]))
        per["served_p"].append(float(sum(x[v.index] for v in sv.p_d)))
        per["served_q"].append(float(sum(x[v.index] for v in sv.q_d)))
        per["gen_p"].append(float(sum(x[v.index] for v in sv.p_g)))
    obj = evaluate(model, x, tol=np.inf).objective
    edge_ids = [g.edge_id(k) for k in range(g.n_edges)]
    return PartitionSolution(
        objective=float(obj),
        energized_buses=[v for v, on in zip(g.vertices, bn) if on],
        energized_lines=[e for e, on in zip(edge_ids, be) if on],
        microgrids=mgs, boundary_lines=boundary, z=z,
        gamma=model.notes.get("gamma"), rho=float(model.notes.get("rho", 1.0)),
        per_scenario=per, network=net.name)


def solution_dot(net: FeederNetwork, sol: PartitionSolution) -> str:
    """Graphviz rendering: one colour per microgrid, grey elsewhere."""
    palette = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d",
               "#1f78b4", "#b2df8a", "#fb9a99"]
    colour = {}
    for k, mg in enumerate(sol.microgrids):
        for b in mg.buses:
            colour[b] = palette[k % len(palette)]
    gf = {b.id for b in net.buses if b.grid_forming}
    on_lines = set(sol.energized_lines)
    out = [f'graph "{net.name}" {{', "  node [style=filled, fontname=Helvetica];"]
    for b in net.buses:
        shape = "doublecircle" if b.id in gf else ("box" if b.id == net.substation_id else "circle")
        out.append(f'  "{b.id}" [shape={shape}, fillcolor="{colour.get(b.id, "#d0d0d0")}"];')
    for l in net.lines:
        if l.id in on_lines:
            attrs = f'color="{colour.get(l.from_bus, "black")}", penwidth=2.5'
        else:
            attrs = 'color="#a0a0a0"' + (", style=dashed" if l.normally_open else "")
        out.append(f'  "{l.from_bus}" -- "{l.to_bus}" [{attrs}];')
    out.append("}")
    return "\n".join(out) + "\n"
