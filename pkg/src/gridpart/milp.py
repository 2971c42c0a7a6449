"""Solver-neutral MILP model: variables, sparse linear rows, linear objective.

Models are built once by a single writer and then treated as read-only.  The
compiled array form (:class:`CompiledModel`) is what the LP/B&B kernels and
the MPS writer consume.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

import numpy as np
import scipy.sparse as sp

INF = math.inf
FEAS_TOL = 1e-6

CONTINUOUS = "continuous"
BINARY = "binary"
SENSES = ("<=", "==", ">=")


@dataclass(frozen=True)
class Variable:
    index: int
    name: str
    kind: str = CONTINUOUS
    lower: float = 0.0
    upper: float = INF

    @property
    def is_binary(self) -> bool:
        return self.kind == BINARY


@dataclass(frozen=True)
class LinearConstraint:
    terms: tuple[tuple[int, float], ...]
    sense: str
    rhs: float
    name: str


Terms = Union[Mapping[Variable, float], Iterable[tuple[Variable, float]]]


def _merge_terms(terms: Terms) -> tuple[tuple[int, float], ...]:
    items = terms.items() if isinstance(terms, Mapping) else terms
    acc: dict[int, float] = {}
    for var, coef in items:
        idx = var.index if isinstance(var, Variable) else int(var)
        coef = float(coef)
        if not math.isfinite(coef):
            raise ValueError(f"non-finite coefficient {coef} on variable {idx}")
        acc[idx] = acc.get(idx, 0.0) + coef
    return tuple((i, c) for i, c in acc.items() if c != 0.0)


@dataclass
class EvalResult:
    feasible: bool
    max_violation: float
    objective: float
    worst: str = ""


@dataclass
class CompiledModel:
    """Array form: ``min c@x  s.t.  row_lo <= A@x <= row_hi, col_lo <= x <= col_hi``."""

    c: np.ndarray
    A: sp.csr_matrix
    row_lo: np.ndarray
    row_hi: np.ndarray
    col_lo: np.ndarray
    col_hi: np.ndarray
    is_int: np.ndarray
    obj_offset: float = 0.0

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape


class MilpModel:
    """Minimization MILP with continuous and binary variables."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.variables: list[Variable] = []
        self.constraints: list[LinearConstraint] = []
        self.objective: tuple[tuple[int, float], ...] = ()
        self.notes: dict[str, object] = {}
        self._names: dict[str, int] = {}

    # -- construction -------------------------------------------------------
    def add_var(self, name: str, lower: float = 0.0, upper: float = INF,
                kind: str = CONTINUOUS) -> Variable:
        if kind not in (CONTINUOUS, BINARY):
            raise ValueError(f"unknown variable kind {kind!r}")
        lower, upper = float(lower), float(upper)
        if math.isnan(lower) or math.isnan(upper) or lower > upper:
            raise ValueError(f"variable {name}: invalid bounds [{lower}, {upper}]")
        if kind == BINARY and (lower < 0.0 or upper > 1.0):
            raise ValueError(f"binary {name}: bounds must lie within [0, 1]")
        if name in self._names:
            raise ValueError(f"duplicate variable name {name!r}")
        var = Variable(len(self.variables), name, kind, lower, upper)
        self.variables.append(var)
        self._names[name] = var.index
        return var

    def add_binary(self, name: str) -> Variable:
        return self.add_var(name, 0.0, 1.0, BINARY)

    def add_constraint(self, terms: Terms, sense: str, rhs: float,
                       name: str = "") -> int:
        if sense not in SENSES:
            raise ValueError(f"unknown sense {sense!r}")
        merged = _merge_terms(terms)
        n = len(self.variables)
        for idx, _ in merged:
            if not 0 <= idx < n:
                raise ValueError(f"constraint {name!r} references unknown variable {idx}")
        rhs = float(rhs)
        if not math.isfinite(rhs):
            raise ValueError(f"constraint {name!r}: non-finite rhs")
        self.constraints.append(
            LinearConstraint(merged, sense, rhs, name or f"c{len(self.constraints)}"))
        return len(self.constraints) - 1

    def set_objective(self, terms: Terms) -> None:
        merged = _merge_terms(terms)
        for idx, _ in merged:
            if not 0 <= idx < len(self.variables):
                raise ValueError(f"objective references unknown variable {idx}")
        self.objective = merged

    def var(self, name: str) -> Variable:
        return self.variables[self._names[name]]

    @property
    def num_vars(self) -> int:
        return len(self.variables)

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    # -- views --------------------------------------------------------------
    def compile(self) -> CompiledModel:
        n, m = len(self.variables), len(self.constraints)
        c = np.zeros(n)
        for idx, coef in self.objective:
            c[idx] = coef
        rows, cols, vals = [], [], []
        row_lo = np.full(m, -INF)
        row_hi = np.full(m, INF)
        for r, con in enumerate(self.constraints):
            for idx, coef in con.terms:
                rows.append(r)
                cols.append(idx)
                vals.append(coef)
            if con.sense in ("<=", "=="):
                row_hi[r] = con.rhs
            if con.sense in (">=", "=="):
                row_lo[r] = con.rhs
        A = sp.csr_matrix((vals, (rows, cols)), shape=(m, n))
        col_lo = np.array([v.lower for v in self.variables], dtype=float)
        col_hi = np.array([v.upper for v in self.variables], dtype=float)
        is_int = np.array([v.is_binary for v in self.variables], dtype=bool)
        return CompiledModel(c, A, row_lo, row_hi, col_lo, col_hi, is_int)

    def relaxed(self) -> "MilpModel":
        """Copy with every binary turned into a continuous variable on its bounds."""
        out = MilpModel(self.name + "_relaxed")
        for v in self.variables:
            out.add_var(v.name, v.lower, v.upper, CONTINUOUS)
        out.constraints = list(self.constraints)
        out.objective = self.objective
        out.notes = dict(self.notes)
        return out

    def dump(self) -> str:
        """Human-readable listing of the model, one row per line."""
        names = [v.name for v in self.variables]

        def fmt(terms):
            return " ".join(f"{c:+.12g} {names[i]}" for i, c in terms) or "0"

        lines = [f"model {self.name}: {self.num_vars} vars, {self.num_constraints} rows",
                 f"minimize {fmt(self.objective)}"]
        for con in self.constraints:
            lines.append(f"{con.name}: {fmt(con.terms)} {con.sense} {con.rhs:.12g}")
        for v in self.variables:
            lines.append(f"{v.name} {v.kind} [{v.lower:.12g}, {v.upper:.12g}]")
        return "\n".join(lines) + "\n"


# -- linearization --------------------------------------------------------------

def mccormick_product(m: MilpModel, x: Variable, y, y_lo: float, y_hi: float,
                      name: str | None = None) -> Variable:
    """Add ``z = x*y`` for binary ``x`` and bounded continuous ``y``.

    ``y`` is a variable or a linear expression given as ``(variable, coef)``
    pairs.  The four envelope inequalities pin ``z`` to ``0`` when ``x = 0``
    and to ``y`` when ``x = 1``, so with a binary ``x`` the linearization is
    exact.
    """
    if not x.is_binary:
        raise ValueError(f"{x.name} is not binary")
    y_lo, y_hi = float(y_lo), float(y_hi)
    if not (math.isfinite(y_lo) and math.isfinite(y_hi)):
        raise ValueError("product factor must have finite bounds")
    if y_lo > y_hi:
        raise ValueError("product factor bounds: y_lo > y_hi")
    y_terms = [(y, 1.0)] if isinstance(y, Variable) else list(y)
    label = y.name if isinstance(y, Variable) else "expr"
    name = name or f"mc[{x.name}*{label}]"
    z = m.add_var(name, min(0.0, y_lo), max(0.0, y_hi))
    neg_y = [(v, -c) for v, c in y_terms]
    # x*y_lo <= z <= x*y_hi
    m.add_constraint([(z, 1.0), (x, -y_lo)], ">=", 0.0, f"{name}_lo")
    m.add_constraint([(z, 1.0), (x, -y_hi)], "<=", 0.0, f"{name}_hi")
    # y + (x-1)*y_hi <= z <= y + (x-1)*y_lo
    m.add_constraint([(z, 1.0), *neg_y, (x, -y_hi)], ">=", -y_hi, f"{name}_ylo")
    m.add_constraint([(z, 1.0), *neg_y, (x, -y_lo)], "<=", -y_lo, f"{name}_yhi")
    return z


# -- evaluation ---------------------------------------------------------------

def _as_vector(m: MilpModel, a) -> np.ndarray:
    if isinstance(a, np.ndarray):
        if a.shape != (m.num_vars,):
            raise ValueError(f"assignment has shape {a.shape}, expected ({m.num_vars},)")
        return a.astype(float)
    if isinstance(a, Mapping):
        out = np.empty(m.num_vars)
        for v in m.variables:
            for key in (v, v.index, v.name):
                try:
                    out[v.index] = a[key]
                    break
                except (KeyError, TypeError):
                    continue
            else:
                raise KeyError(f"assignment missing value for {v.name}")
        return out
    arr = np.asarray(a, dtype=float)
    if arr.shape != (m.num_vars,):
        raise ValueError(f"assignment has shape {arr.shape}, expected ({m.num_vars},)")
    return arr


def evaluate(m: MilpModel, a, tol: float = FEAS_TOL) -> EvalResult:
    """Check an assignment against bounds, integrality and every row."""
    x = _as_vector(m, a)
    worst, worst_name = 0.0, ""
    for v in m.variables:
        val = x[v.index]
        viol = max(v.lower - val, val - v.upper, 0.0)
        if v.is_binary:
            viol = max(viol, abs(val - round(val)))
        if viol > worst:
            worst, worst_name = viol, v.name
    for con in m.constraints:
        lhs = math.fsum(coef * x[i] for i, coef in con.terms)
        if con.sense == "<=":
            viol = lhs - con.rhs
        elif con.sense == ">=":
            viol = con.rhs - lhs
        else:
            viol = abs(lhs - con.rhs)
        if viol > worst:
            worst, worst_name = viol, con.name
    obj = math.fsum(coef * x[i] for i, coef in m.objective)
    return EvalResult(worst <= tol, worst, obj, worst_name)


# -- MPS ------------------------------------------------------------------------

_BAD = re.compile(r"[^A-Za-z0-9_.\[\]\-+,:()]")


def _sanitize(names: Sequence[str], prefix: str) -> list[str]:
    out, seen = [], set()
    for k, raw in enumerate(names):
        s = _BAD.sub("_", raw) or f"{prefix}{k}"
        if s[0] == "$":
            s = "_" + s
        base, n = s, 1
        while s in seen:
            s = f"{base}~{n}"
            n += 1
        seen.add(s)
        out.append(s)
    return out


def _num(x: float) -> str:
    return repr(float(x))


def export_mps(m: MilpModel) -> str:
    """Serialize to free-format MPS.  Binaries are written with ``BV`` bounds."""
    vnames = _sanitize([v.name for v in m.variables], "x")
    rnames = _sanitize([c.name for c in m.constraints], "r")
    obj_name = "obj"
    while obj_name in rnames:
        obj_name = "_" + obj_name
    lines = [f"NAME {_sanitize([m.name], 'model')[0]}", "OBJSENSE", "    MIN", "ROWS", f" N  {obj_name}"]
    code = {"<=": "L", ">=": "G", "==": "E"}
    for con, rn in zip(m.constraints, rnames):
        lines.append(f" {code[con.sense]}  {rn}")
    cols: list[list[tuple[str, float]]] = [[] for _ in m.variables]
    for idx, coef in m.objective:
        cols[idx].append((obj_name, coef))
    for con, rn in zip(m.constraints, rnames):
        for idx, coef in con.terms:
            cols[idx].append((rn, coef))
    lines.append("COLUMNS")
    for v, vn in zip(m.variables, vnames):
        entries = cols[v.index] or [(obj_name, 0.0)]
        for rn, coef in entries:
            lines.append(f"    {vn} {rn} {_num(coef)}")
    lines.append("RHS")
    for con, rn in zip(m.constraints, rnames):
        if con.rhs != 0.0:
            lines.append(f"    RHS {rn} {_num(con.rhs)}")
    lines.append("BOUNDS")
    for v, vn in zip(m.variables, vnames):
        lo, hi = v.lower, v.upper
        if v.is_binary:
            lines.append(f" BV BND {vn}")
            if lo != 0.0:
                lines.append(f" LO BND {vn} {_num(lo)}")
            if hi != 1.0:
                lines.append(f" UP BND {vn} {_num(hi)}")
            continue
        if lo == hi:
            lines.append(f" FX BND {vn} {_num(lo)}")
        elif lo == -INF and hi == INF:
            lines.append(f" FR BND {vn}")
        else:
            if lo == -INF:
                lines.append(f" MI BND {vn}")
            elif lo != 0.0:
                lines.append(f" LO BND {vn} {_num(lo)}")
            if hi != INF:
                lines.append(f" UP BND {vn} {_num(hi)}")
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"


def mps_names(m: MilpModel) -> list[str]:
    """Variable names exactly as :func:`export_mps` writes them."""
    return _sanitize([v.name for v in m.variables], "x")


def read_mps(text: str) -> MilpModel:
    """Parse the free-format MPS subset written by :func:`export_mps`.

    Supports N/L/G/E rows, RHS (including an objective constant, which is
    ignored), MARKER integer blocks and the LO/UP/FX/FR/MI/PL/BV bound types.
    """
    section = None
    model_name = "model"
    maximize = False
    obj_row = None
    row_sense: dict[str, str] = {}
    row_order: list[str] = []
    col_order: list[str] = []
    col_entries: dict[str, list[tuple[str, float]]] = {}
    col_int: dict[str, bool] = {}
    rhs: dict[str, float] = {}
    bounds: dict[str, list[float]] = {}
    in_int = False
    for raw in text.splitlines():
        if not raw.strip() or raw.startswith("*"):
            continue
        tok = raw.split()
        if not raw[0].isspace():
            section = tok[0].upper()
            if section == "NAME" and len(tok) > 1:
                model_name = tok[1]
            if section == "OBJSENSE" and len(tok) > 1:
                maximize = tok[1].upper() in ("MAX", "MAXIMIZE")
            if section == "ENDATA":
                break
            continue
        if section == "OBJSENSE":
            maximize = tok[0].upper() in ("MAX", "MAXIMIZE")
        elif section == "ROWS":
            kind, name = tok[0].upper(), tok[1]
            if kind == "N":
                if obj_row is None:
                    obj_row = name
                continue
            row_sense[name] = {"L": "<=", "G": ">=", "E": "=="}[kind]
            row_order.append(name)
        elif section == "COLUMNS":
            if len(tok) >= 3 and tok[1].strip("'").upper() == "MARKER":
                in_int = tok[2].strip("'").upper() == "INTORG"
                continue
            col = tok[0]
            if col not in col_entries:
                col_order.append(col)
                col_entries[col] = []
                col_int[col] = in_int
            for k in range(1, len(tok) - 1, 2):
                col_entries[col].append((tok[k], float(tok[k + 1])))
        elif section == "RHS":
            pairs = tok[1:] if len(tok) % 2 == 1 else tok
            for k in range(0, len(pairs) - 1, 2):
                rhs[pairs[k]] = float(pairs[k + 1])
        elif section == "BOUNDS":
            kind, col = tok[0].upper(), tok[2]
            val = float(tok[3]) if len(tok) > 3 else None
            b = bounds.setdefault(col, [0.0, INF])
            if kind == "LO":
                b[0] = val
            elif kind == "UP":
                b[1] = val
            elif kind == "FX":
                b[0] = b[1] = val
            elif kind == "FR":
                b[0], b[1] = -INF, INF
            elif kind == "MI":
                b[0] = -INF
            elif kind == "PL":
                b[1] = INF
            elif kind == "BV":
                b[0], b[1] = 0.0, 1.0
                col_int[col] = True
            else:
                raise ValueError(f"unsupported bound type {kind}")
        elif section in ("RANGES",):
            raise ValueError("RANGES section is not supported")
    m = MilpModel(model_name)
    handles = {}
    for col in col_order:
        lo, hi = bounds.get(col, [0.0, INF])
        if col_int.get(col) and col not in bounds:
            hi = 1.0
        kind = BINARY if col_int.get(col) else CONTINUOUS
        handles[col] = m.add_var(col, lo, hi, kind)
    row_terms: dict[str, list[tuple[Variable, float]]] = {r: [] for r in row_order}
    obj_terms = []
    for col in col_order:
        for row, coef in col_entries[col]:
            if row == obj_row:
                obj_terms.append((handles[col], -coef if maximize else coef))
            else:
                row_terms[row].append((handles[col], coef))
    for r in row_order:
        m.add_constraint(row_terms[r], row_sense[r], rhs.get(r, 0.0), r)
    m.set_objective(obj_terms)
    return m
