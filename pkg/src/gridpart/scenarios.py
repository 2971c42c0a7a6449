"""Synthetic load/generation scenarios and the two sampling strategies.

The generator mimics annual hourly data: diurnal PV shapes scaled so the
annual maximum equals the rated capacity, and residential/commercial load
shapes scaled so the 75th percentile equals the bus's nominal spot load.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.cluster.hierarchy import cut_tree, linkage

from .network import FeederNetwork, partition_graph

LOAD_FAMILIES = ("residential", "commercial")
GEN_FAMILIES = ("solar", "constant")


@dataclass(frozen=True)
class Scenario:
    gp: np.ndarray
    gq: np.ndarray
    dp: np.ndarray
    dq: np.ndarray


@dataclass(frozen=True)
class ScenarioSet:
    """``S`` scenarios over a fixed bus ordering, stored as ``S x V`` arrays."""

    bus_ids: tuple[str, ...]
    gp: np.ndarray
    gq: np.ndarray
    dp: np.ndarray
    dq: np.ndarray
    seed: int | None = None
    provenance: str = ""
    source_index: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        shape = None
        for name in ("gp", "gq", "dp", "dq"):
            arr = np.array(getattr(self, name), dtype=float, ndmin=2)
            if arr.size == 0:
                arr = arr.reshape(0, len(self.bus_ids))
            if arr.shape[1] != len(self.bus_ids):
                raise ValueError(f"{name}: expected {len(self.bus_ids)} columns, got {arr.shape[1]}")
            if shape is not None and arr.shape != shape:
                raise ValueError("scenario arrays must share one shape")
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: entries must be finite and >= 0")
            shape = arr.shape
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.dp.shape[0]

    def __getitem__(self, k: int) -> Scenario:
        return Scenario(self.gp[k], self.gq[k], self.dp[k], self.dq[k])

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    def subset(self, index: Sequence[int], provenance: str = "", seed: int | None = None) -> "ScenarioSet":
        idx = np.asarray(index, dtype=int).reshape(-1)
        src = idx if self.source_index is None else self.source_index[idx]
        return ScenarioSet(self.bus_ids, self.gp[idx], self.gq[idx], self.dp[idx], self.dq[idx],
                           seed, provenance or self.provenance, src)

    @classmethod
    def from_scenarios(cls, bus_ids: Sequence[str], scenarios: Sequence[Scenario],
                       seed: int | None = None, provenance: str = "") -> "ScenarioSet":
        def stack(attr):
            if not scenarios:
                return np.zeros((0, len(bus_ids)))
            return np.vstack([getattr(s, attr) for s in scenarios])
        return cls(tuple(bus_ids), stack("gp"), stack("gq"), stack("dp"), stack("dq"),
                   seed, provenance)

    @classmethod
    def nominal(cls, net: FeederNetwork) -> "ScenarioSet":
        """One scenario at nominal demand and rated generation."""
        g = partition_graph(net)
        buses = [net.bus(v) for v in g.vertices]
        return cls(g.vertices,
                   [[b.gen_cap_p for b in buses]], [[b.gen_cap_q for b in buses]],
                   [[b.nominal_demand_p for b in buses]], [[b.nominal_demand_q for b in buses]],
                   None, "nominal")

    # -- serialization -------------------------------------------------------
    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario_idx", "bus_id", "gp", "gq", "dp", "dq"])
        for k in range(len(self)):
            for v, bus in enumerate(self.bus_ids):
                w.writerow([k, bus, repr(float(self.gp[k, v])), repr(float(self.gq[k, v])),
                            repr(float(self.dp[k, v])), repr(float(self.dq[k, v]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, seed: int | None = None, provenance: str = "") -> "ScenarioSet":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise ValueError("scenario CSV has no rows")
        missing = {"scenario_idx", "bus_id", "gp", "gq", "dp", "dq"} - set(rows[0])
        if missing:
            raise ValueError(f"scenario CSV missing columns {sorted(missing)}")
        bus_ids: list[str] = []
        for r in rows:
            if r["bus_id"] in bus_ids:
                break
            bus_ids.append(r["bus_id"])
        pos = {b: k for k, b in enumerate(bus_ids)}
        n_s = 1 + max(int(r["scenario_idx"]) for r in rows)
        arrs = {a: np.full((n_s, len(bus_ids)), np.nan) for a in ("gp", "gq", "dp", "dq")}
        for r in rows:
            k, v = int(r["scenario_idx"]), pos[r["bus_id"]]
            for a in arrs:
                arrs[a][k, v] = float(r[a])
        if any(np.isnan(a).any() for a in arrs.values()):
            raise ValueError("scenario CSV is incomplete: every (scenario, bus) pair needs a row")
        return cls(tuple(bus_ids), arrs["gp"], arrs["gq"], arrs["dp"], arrs["dq"], seed, provenance)

    def to_json(self) -> str:
        return json.dumps({
            "seed": self.seed, "provenance": self.provenance, "bus_ids": list(self.bus_ids),
            "gp": self.gp.tolist(), "gq": self.gq.tolist(),
            "dp": self.dp.tolist(), "dq": self.dq.tolist(),
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSet":
        doc = json.loads(text)
        n = len(doc["bus_ids"])

        def arr(key):
            a = np.asarray(doc[key], dtype=float)
            return a.reshape(-1, n)
        return cls(tuple(doc["bus_ids"]), arr("gp"), arr("gq"), arr("dp"), arr("dq"),
                   doc.get("seed"), doc.get("provenance", ""))

    def aligned(self, bus_ids: Sequence[str]) -> "ScenarioSet":
        """Reorder columns to ``bus_ids``; raises if a bus is missing."""
        if tuple(bus_ids) == self.bus_ids:
            return self
        pos = {b: k for k, b in enumerate(self.bus_ids)}
        try:
            cols = [pos[b] for b in bus_ids]
        except KeyError as exc:
            raise ValueError(f"scenario set has no column for bus {exc.args[0]}") from None
        return ScenarioSet(tuple(bus_ids), self.gp[:, cols], self.gq[:, cols], self.dp[:, cols],
                           self.dq[:, cols], self.seed, self.provenance, self.source_index)


# -- synthesis -------------------------------------------------------------------

@dataclass(frozen=True)
class ProfileConfig:
    hours: int = 8760
    noise: float = 0.15
    cloudiness: float = 0.35
    families: Mapping[str, str] = field(default_factory=dict)


def _residential(h, dow, day):
    morning = np.exp(-0.5 * ((h - 7.5) / 1.5) ** 2)
    evening = 1.4 * np.exp(-0.5 * ((h - 19.0) / 2.2) ** 2)
    base = 0.35 + 0.5 * morning + evening
    weekend = np.where(dow >= 5, 1.1, 1.0)
    season = 1.0 + 0.25 * np.cos(2 * np.pi * (day - 200) / 365.0)
    return base * weekend * season


def _commercial(h, dow, day):
    open_hours = 1.0 / (1.0 + np.exp(-(h - 8.0) * 2.0)) - 1.0 / (1.0 + np.exp(-(h - 18.0) * 2.0))
    base = 0.3 + 1.2 * open_hours
    weekend = np.where(dow >= 5, 0.45, 1.0)
    season = 1.0 + 0.3 * np.cos(2 * np.pi * (day - 200) / 365.0)
    return base * weekend * season


def _solar_shape(h, day):
    daylight = 12.0 + 2.5 * np.cos(2 * np.pi * (day - 172) / 365.0)
    sunrise = 12.5 - daylight / 2
    phase = (h + 0.5 - sunrise) / daylight
    bell = np.where((phase > 0) & (phase < 1), np.sin(np.pi * np.clip(phase, 0, 1)) ** 1.5, 0.0)
    season = 0.8 + 0.2 * np.cos(2 * np.pi * (day - 172) / 365.0)
    return bell * season


def synthesize(net: FeederNetwork, config: ProfileConfig | None = None, seed: int = 0) -> ScenarioSet:
    """Annual-style hourly scenarios for every non-substation bus."""
    cfg = config or ProfileConfig()
    if cfg.hours <= 0:
        raise ValueError(f"hours must be positive, got {cfg.hours}")
    g = partition_graph(net)
    rng = np.random.default_rng(seed)
    t = np.arange(cfg.hours)
    h, day = t % 24, t // 24
    dow = day % 7
    n_days = int(day[-1]) + 1
    V = g.n_vertices
    gp = np.zeros((cfg.hours, V))
    gq = np.zeros((cfg.hours, V))
    dp = np.zeros((cfg.hours, V))
    dq = np.zeros((cfg.hours, V))
    # weather shared by every PV site, with a small site-specific jitter
    cloud_day = 1.0 - cfg.cloudiness * rng.beta(0.8, 1.6, size=n_days)
    cloud_hour = np.clip(1.0 + 0.1 * rng.standard_normal(cfg.hours), 0.5, 1.2)
    shape = _solar_shape(h, day)
    for v, bus_id in enumerate(g.vertices):
        bus = net.bus(bus_id)
        fam = cfg.families.get(bus_id, bus.load_profile)
        if fam not in LOAD_FAMILIES:
            raise ValueError(f"bus {bus_id}: unknown load profile family {fam!r}")
        maker = _residential if fam == "residential" else _commercial
        raw = maker(h, dow, day) * rng.lognormal(0.0, cfg.noise, size=cfg.hours)
        if bus.nominal_demand_p > 0:
            p75 = np.percentile(raw, 75)
            dp[:, v] = raw * (bus.nominal_demand_p / p75)
            dq[:, v] = dp[:, v] * (bus.nominal_demand_q / bus.nominal_demand_p)
        gfam = cfg.families.get(bus_id + ":gen", bus.generator_profile)
        if gfam is None:
            continue
        if gfam not in GEN_FAMILIES:
            raise ValueError(f"bus {bus_id}: unknown generation profile family {gfam!r}")
        if gfam == "constant":
            gp[:, v] = bus.gen_cap_p
            gq[:, v] = bus.gen_cap_q
        else:
            site = np.clip(1.0 + 0.05 * rng.standard_normal(cfg.hours), 0.8, 1.2)
            prof = shape * cloud_day[day] * cloud_hour * site
            peak = prof.max()
            norm = prof / peak if peak > 0 else prof
            gp[:, v] = norm * bus.gen_cap_p
            gq[:, v] = norm * bus.gen_cap_q
    return ScenarioSet(g.vertices, gp, gq, dp, dq, seed,
                       f"synthetic hours={cfg.hours} noise={cfg.noise} cloudiness={cfg.cloudiness}")


# -- sampling ---------------------------------------------------------------------

def sample_uniform(s: ScenarioSet, n: int, seed: int) -> ScenarioSet:
    """``n`` iid draws with replacement, each scenario equally likely."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n > 0 and len(s) == 0:
        raise ValueError("cannot sample from an empty scenario set")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(s), size=n) if n else np.zeros(0, dtype=int)
    return s.subset(idx, f"uniform n={n} from [{s.provenance}]", seed)


@dataclass(frozen=True)
class ClusterModel:
    mean: np.ndarray
    principal_axes: np.ndarray
    explained_variance: np.ndarray
    labels: np.ndarray
    k: int
    degenerate: bool = False
    method: str = "ward"

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        total = self.explained_variance.sum()
        if total <= 0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / total

    def project(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) @ self.principal_axes.T

    def reconstruction_error(self, features: np.ndarray) -> float:
        y = self.project(features)
        back = y @ self.principal_axes + self.mean
        return float(np.sum((features - back) ** 2))


def cluster_features(s: ScenarioSet) -> np.ndarray:
    """Flattened (dp, gp) feature vector per scenario."""
    return np.hstack([s.dp, s.gp])


def fit_clusters(s: ScenarioSet, k: int, pca_dims: int = 2, method: str = "ward",
                 features: np.ndarray | None = None) -> ClusterModel:
    """PCA projection followed by agglomerative clustering cut at ``k`` clusters."""
    if method not in ("ward", "average", "complete"):
        raise ValueError(f"unknown linkage {method!r}")
    if pca_dims < 1:
        raise ValueError("pca_dims must be >= 1")
    X = cluster_features(s) if features is None else np.asarray(features, dtype=float)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= {n} scenarios, got k={k}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / max(n - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = np.clip(evals[order], 0.0, None), evecs[:, order]
    degenerate = evals[0] <= 1e-14 * max(1.0, np.abs(X).max() ** 2)
    dims = min(pca_dims, X.shape[1])
    if degenerate:
        axes = np.zeros((1, X.shape[1]))
        ev = np.zeros(1)
    else:
        axes = evecs[:, :dims].T.copy()
        # deterministic sign: largest-magnitude component positive
        for a in axes:
            if a[np.argmax(np.abs(a))] < 0:
                a *= -1
        ev = evals[:dims]
    if k == 1 or n == 1:
        labels = np.zeros(n, dtype=int)
    else:
        Y = Xc @ axes.T
        Z = linkage(Y, method=method)
        raw = cut_tree(Z, n_clusters=k).reshape(-1)
        remap: dict[int, int] = {}
        labels = np.array([remap.setdefault(int(c), len(remap)) for c in raw], dtype=int)
    return ClusterModel(mean, axes, ev, labels, k, bool(degenerate), method)


def sample_stratified(s: ScenarioSet, m: ClusterModel, n: int, seed: int) -> ScenarioSet:
    """Equal numbers of with-replacement draws from every cluster."""
    if n % m.k != 0:
        raise ValueError(f"n={n} is not a multiple of k={m.k}")
    rng = np.random.default_rng(seed)
    per = n // m.k
    picks = []
    for c in range(m.k):
        members = np.flatnonzero(m.labels == c)
        if members.size == 0:
            raise ValueError(f"cluster {c} is empty")
        if per:
            picks.append(rng.choice(members, size=per, replace=True))
    idx = np.concatenate(picks) if picks else np.zeros(0, dtype=int)
    return s.subset(idx, f"stratified n={n} k={m.k} from [{s.provenance}]", seed)
