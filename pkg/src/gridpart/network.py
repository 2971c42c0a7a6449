"""Feeder graph, the substation-free partition graph and topology checks."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


class NetworkError(ValueError):
    """Invalid network document or network invariant violation."""


@dataclass(frozen=True)
class Bus:
    id: str
    nominal_demand_p: float = 0.0
    nominal_demand_q: float = 0.0
    gen_cap_p: float = 0.0
    gen_cap_q: float = 0.0
    q_min_absorb: float = 0.0
    grid_forming: bool = False
    load_profile: str = "residential"
    gen_profile: str | None = None

    @property
    def generator_profile(self) -> str | None:
        """Profile family of the local generator, ``None`` when there is none."""
        if self.gen_profile is not None:
            return self.gen_profile
        if self.gen_cap_p <= 0.0 and self.gen_cap_q <= 0.0:
            return None
        return "constant" if self.grid_forming else "solar"


@dataclass(frozen=True)
class Line:
    from_bus: str
    to_bus: str
    r: float
    x: float
    p_max: float
    q_max: float
    normally_open: bool = False

    @property
    def id(self) -> str:
        return f"{self.from_bus}-{self.to_bus}"


@dataclass(frozen=True)
class FeederNetwork:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    substation_id: str
    base_mva: float = 1.0
    name: str = "feeder"

    def bus(self, bus_id: str) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    @property
    def bus_ids(self) -> list[str]:
        return [b.id for b in self.buses]

    def without_lines(self, line_ids: Iterable[str]) -> "FeederNetwork":
        drop = set(line_ids)
        return FeederNetwork(self.buses, tuple(l for l in self.lines if l.id not in drop),
                             self.substation_id, self.base_mva, self.name)

    @property
    def tie_lines(self) -> list[Line]:
        return [l for l in self.lines if l.normally_open]

    def to_document(self) -> dict:
        return {
            "name": self.name,
            "base_mva": self.base_mva,
            "substation": self.substation_id,
            "buses": [
                {"id": b.id, "dp": b.nominal_demand_p, "dq": b.nominal_demand_q,
                 "gp": b.gen_cap_p, "gq": b.gen_cap_q, "qmin": b.q_min_absorb,
                 "grid_forming": b.grid_forming, "load_profile": b.load_profile,
                 **({"gen_profile": b.gen_profile} if b.gen_profile else {})}
                for b in self.buses],
            "lines": [
                {"from": l.from_bus, "to": l.to_bus, "r": l.r, "x": l.x, "pmax": l.p_max,
                 "qmax": l.q_max, "normally_open": l.normally_open}
                for l in self.lines],
        }


@dataclass(frozen=True)
class PartitionGraph:
    vertices: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]
    lines: tuple[Line, ...] = field(repr=False)
    vertex_index: dict = field(repr=False, compare=False, default_factory=dict)
    edge_index: dict = field(repr=False, compare=False, default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        vi = self.vertex_index
        src = np.array([vi[a] for a, _ in self.edges], dtype=int)
        dst = np.array([vi[b] for _, b in self.edges], dtype=int)
        return src, dst

    def edge_id(self, k: int) -> str:
        a, b = self.edges[k]
        return f"{a}-{b}"


@dataclass
class TopologyReport:
    is_forest: bool
    components: list[set[str]]
    components_without_grid_former: list[set[str]]
    dangling_energized_edges: list[str]

    @property
    def ok(self) -> bool:
        return self.is_forest and not self.components_without_grid_former \
            and not self.dangling_energized_edges


# -- loading ------------------------------------------------------------------

_BUS_KEYS = {"id", "dp", "dq", "gp", "gq", "qmin", "grid_forming", "load_profile", "gen_profile"}
_LINE_KEYS = {"from", "to", "r", "x", "pmax", "qmax", "normally_open"}


def _nonneg(obj: dict, key: str, owner: str, default: float | None = 0.0) -> float:
    if key not in obj:
        if default is None:
            raise NetworkError(f"{owner}: missing field {key!r}")
        return default
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise NetworkError(f"{owner}: field {key!r} must be a number")
    val = float(val)
    if not math.isfinite(val) or val < 0:
        raise NetworkError(f"{owner}: field {key!r} must be finite and >= 0, got {val}")
    return val


def load_network(document: str | dict | Path) -> FeederNetwork:
    """Parse and validate a network document (JSON text, dict or file path)."""
    if isinstance(document, Path):
        document = document.read_text()
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise NetworkError(f"schema violation: not valid JSON ({exc})") from exc
    else:
        doc = document
    if not isinstance(doc, dict):
        raise NetworkError("schema violation: document must be an object")
    for key in ("buses", "lines", "substation"):
        if key not in doc:
            raise NetworkError(f"schema violation: missing top-level field {key!r}")
    if not isinstance(doc["buses"], list) or not isinstance(doc["lines"], list):
        raise NetworkError("schema violation: 'buses' and 'lines' must be lists")
    base = doc.get("base_mva", 1.0)
    if isinstance(base, bool) or not isinstance(base, (int, float)) or base <= 0:
        raise NetworkError("schema violation: 'base_mva' must be a positive number")

    buses, seen = [], set()
    for k, b in enumerate(doc["buses"]):
        if not isinstance(b, dict) or "id" not in b:
            raise NetworkError(f"schema violation: bus #{k} has no id")
        extra = set(b) - _BUS_KEYS
        if extra:
            raise NetworkError(f"schema violation: bus {b['id']}: unknown fields {sorted(extra)}")
        bid = str(b["id"])
        if bid in seen:
            raise NetworkError(f"duplicate bus id {bid}")
        seen.add(bid)
        owner = f"bus {bid}"
        gf = b.get("grid_forming", False)
        if not isinstance(gf, bool):
            raise NetworkError(f"schema violation: {owner}: 'grid_forming' must be boolean")
        buses.append(Bus(bid, _nonneg(b, "dp", owner), _nonneg(b, "dq", owner),
                         _nonneg(b, "gp", owner), _nonneg(b, "gq", owner),
                         _nonneg(b, "qmin", owner), gf,
                         str(b.get("load_profile", "residential")),
                         b.get("gen_profile")))

    lines, pairs = [], set()
    for k, l in enumerate(doc["lines"]):
        if not isinstance(l, dict) or "from" not in l or "to" not in l:
            raise NetworkError(f"schema violation: line #{k} needs 'from' and 'to'")
        extra = set(l) - _LINE_KEYS
        a, b = str(l["from"]), str(l["to"])
        owner = f"line {a}-{b}"
        if extra:
            raise NetworkError(f"schema violation: {owner}: unknown fields {sorted(extra)}")
        for end in (a, b):
            if end not in seen:
                raise NetworkError(f"{owner}: unknown bus {end}")
        if a == b:
            raise NetworkError(f"{owner}: self loop")
        key = frozenset((a, b))
        if key in pairs:
            raise NetworkError(f"duplicate edge {a}-{b}")
        pairs.add(key)
        no = l.get("normally_open", False)
        if not isinstance(no, bool):
            raise NetworkError(f"schema violation: {owner}: 'normally_open' must be boolean")
        lines.append(Line(a, b, _nonneg(l, "r", owner, None), _nonneg(l, "x", owner, None),
                          _nonneg(l, "pmax", owner, None), _nonneg(l, "qmax", owner, None), no))

    sub = str(doc["substation"])
    if sub not in seen:
        raise NetworkError(f"missing substation: bus {sub} not in bus list")
    if not any(b.grid_forming for b in buses):
        raise NetworkError("no grid-forming bus")
    net = FeederNetwork(tuple(buses), tuple(lines), sub, float(base),
                        str(doc.get("name", "feeder")))
    _check_connected(net)
    return net


def _check_connected(net: FeederNetwork) -> None:
    idx = {b.id: k for k, b in enumerate(net.buses)}
    n = len(idx)
    rows = [idx[l.from_bus] for l in net.lines]
    cols = [idx[l.to_bus] for l in net.lines]
    adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    ncomp, labels = connected_components(adj, directed=False)
    if ncomp > 1:
        stray = [b.id for b in net.buses if labels[idx[b.id]] != labels[idx[net.substation_id]]]
        raise NetworkError(f"disconnected base graph: buses {stray[:5]} unreachable from "
                           f"substation {net.substation_id}")


def load_fixture(name: str = "ieee37") -> FeederNetwork:
    """Load a network shipped with the package (``ieee37``, ``five_bus``)."""
    text = resources.files("gridpart.data").joinpath(f"{name}.json").read_text()
    return load_network(text)


# -- graph views --------------------------------------------------------------

def partition_graph(net: FeederNetwork) -> PartitionGraph:
    """Induced subgraph on every bus except the substation (input order kept)."""
    verts = tuple(b.id for b in net.buses if b.id != net.substation_id)
    vset = set(verts)
    kept = tuple(l for l in net.lines if l.from_bus in vset and l.to_bus in vset)
    edges = tuple((l.from_bus, l.to_bus) for l in kept)
    return PartitionGraph(verts, edges, kept,
                          {v: k for k, v in enumerate(verts)},
                          {e: k for k, e in enumerate(edges)})


def incidence_matrix(g: PartitionGraph) -> sp.csr_matrix:
    """Branch-bus incidence: row ``e=(i,j)`` holds +1 at ``i`` and -1 at ``j``."""
    ne, nv = g.n_edges, g.n_vertices
    src, dst = g.edge_endpoints()
    rows = np.repeat(np.arange(ne), 2)
    cols = np.empty(2 * ne, dtype=int)
    cols[0::2], cols[1::2] = src, dst
    vals = np.tile([1.0, -1.0], ne)
    return sp.csr_matrix((vals, (rows, cols)), shape=(ne, nv))


def reduced_incidence(Atilde: sp.spmatrix, ref: int = 0) -> sp.csr_matrix:
    """Drop the reference vertex column ``ref`` from an incidence matrix."""
    nv = Atilde.shape[1]
    if not 0 <= ref < nv:
        raise IndexError(f"reference column {ref} out of range for {nv} vertices")
    keep = np.array([k for k in range(nv) if k != ref], dtype=int)
    return sp.csr_matrix(Atilde)[:, keep]


def check_topology(g: PartitionGraph, energized_nodes: Sequence[bool],
                   energized_edges: Sequence[bool], grid_formers: Iterable[str]) -> TopologyReport:
    bn = np.asarray(energized_nodes, dtype=bool)
    be = np.asarray(energized_edges, dtype=bool)
    if bn.shape != (g.n_vertices,) or be.shape != (g.n_edges,):
        raise ValueError(f"size mismatch: got {bn.shape}/{be.shape}, graph has "
                         f"{g.n_vertices} vertices and {g.n_edges} edges")
    gf = set(grid_formers)
    src, dst = g.edge_endpoints()
    dangling = [g.edge_id(k) for k in np.flatnonzero(be & ~(bn[src] & bn[dst]))]
    live = be & bn[src] & bn[dst]
    on = np.flatnonzero(bn)
    n = g.n_vertices
    adj = sp.coo_matrix((np.ones(int(live.sum())), (src[live], dst[live])), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    comps: dict[int, list[int]] = {}
    for v in on:
        comps.setdefault(int(labels[v]), []).append(int(v))
    edge_count: dict[int, int] = {}
    for k in np.flatnonzero(live):
        lab = int(labels[src[k]])
        edge_count[lab] = edge_count.get(lab, 0) + 1
    components, orphan = [], []
    is_forest = True
    for lab in sorted(comps, key=lambda c: min(comps[c])):
        members = comps[lab]
        if edge_count.get(lab, 0) != len(members) - 1:
            is_forest = False
        names = {g.vertices[v] for v in members}
        components.append(names)
        if not names & gf:
            orphan.append(names)
    return TopologyReport(is_forest, components, orphan, dangling)
