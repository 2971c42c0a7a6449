"""Bounded-variable revised simplex.

Problems are handled in the form ``A x - s = 0`` with box bounds on both the
structural columns ``x`` and the row activities ``s``, so the all-logical
basis ``B = -I`` is always a valid starting point.  The basis inverse is kept
as a sparse LU factorization (SuperLU) followed by a product-form eta file,
refactorized every ``refactor_every`` pivots.

Two pivoting engines share that machinery:

* primal simplex with a composite phase 1 (minimize the sum of bound
  infeasibilities of the basic variables), used for cold starts;
* dual simplex, used whenever the starting basis is dual feasible, which is
  the case after a bound change in branch-and-bound.

Both use Dantzig pricing with a two-pass Harris ratio test and switch to
Bland's rule after a run of degenerate pivots.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .milp import CompiledModel, MilpModel

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"

BASIC, AT_LO, AT_UP, FREE = 0, 1, 2, 3

PRIMAL_TOL = 1e-9
DUAL_TOL = 1e-9
PIVOT_TOL = 1e-7
DUAL_PIVOT_TOL = 1e-7
STABLE_PIVOT = 1e-6
COST_PERTURBATION = 1e-7
DEGEN_LIMIT = 60


class LpNumericalError(RuntimeError):
    """The simplex kernel lost numerical control and refuses to report a status."""


@dataclass
class BasisState:
    basis: np.ndarray
    status: np.ndarray

    def copy(self) -> "BasisState":
        return BasisState(self.basis.copy(), self.status.copy())


@dataclass
class LpResult:
    status: str
    objective: float
    x: np.ndarray
    duals: np.ndarray
    reduced_costs: np.ndarray
    iterations: int
    basis: BasisState | None = field(default=None, repr=False)


class _Factor:
    """LU of the basis matrix plus a product-form eta file."""

    def __init__(self, B: sp.csc_matrix):
        self.m = B.shape[0]
        try:
            self.lu = splu(B, permc_spec="COLAMD", options={"SymmetricMode": False})
        except RuntimeError as exc:
            raise LpNumericalError(f"singular basis: {exc}") from exc
        self.etas: list[tuple[int, np.ndarray, np.ndarray, float]] = []

    def ftran(self, a: np.ndarray) -> np.ndarray:
        x = self.lu.solve(a)
        for r, idx, vals, piv in self.etas:
            xr = x[r] / piv
            if xr != 0.0:
                x[idx] -= vals * xr
            x[r] = xr
        return x

    def btran(self, c: np.ndarray) -> np.ndarray:
        u = np.array(c, dtype=float)
        for r, idx, vals, piv in reversed(self.etas):
            u[r] = (u[r] - u[idx] @ vals) / piv
        return self.lu.solve(u, trans="T")

    def update(self, r: int, w: np.ndarray) -> None:
        idx = np.flatnonzero(w)
        idx = idx[idx != r]
        self.etas.append((r, idx, w[idx].copy(), float(w[r])))


class SimplexSolver:
    """Reusable LP state; bounds may be changed between :meth:`solve` calls."""

    def __init__(self, A, c, row_lo, row_hi, col_lo, col_hi,
                 refactor_every: int = 64, max_iter: int = 200_000):
        A = sp.csc_matrix(A, dtype=float)
        # an empty row keeps the basis nonempty when there are no constraints
        self._padded = A.shape[0] == 0
        if self._padded:
            A = sp.csc_matrix((1, A.shape[1]))
            row_lo, row_hi = np.zeros(1), np.zeros(1)
        self.m, self.n = A.shape
        m, n = self.m, self.n
        self.Aext = sp.hstack([A, -sp.identity(m, format="csc")], format="csc")
        self.AextT = self.Aext.T.tocsr()
        self.cost = np.concatenate([np.asarray(c, dtype=float), np.zeros(m)])
        self.lo = np.concatenate([np.asarray(col_lo, float), np.asarray(row_lo, float)])
        self.hi = np.concatenate([np.asarray(col_hi, float), np.asarray(row_hi, float)])
        if np.any(self.lo > self.hi):
            self._trivially_infeasible = True
        else:
            self._trivially_infeasible = False
        self.refactor_every = refactor_every
        self.max_iter = max_iter
        self.iterations = 0
        self.state: BasisState | None = None
        self.x = np.zeros(n + m)
        self.factor: _Factor | None = None

    # -- bounds --------------------------------------------------------------
    def set_col_bounds(self, j: int, lo: float, hi: float) -> None:
        self.lo[j], self.hi[j] = lo, hi

    def col_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lo[: self.n].copy(), self.hi[: self.n].copy()

    # -- basis bookkeeping -----------------------------------------------------
    def _slack_state(self) -> BasisState:
        n, m = self.n, self.m
        status = np.empty(n + m, dtype=np.int8)
        status[n:] = BASIC
        status[:n] = self._default_nonbasic(np.arange(n))
        return BasisState(np.arange(n, n + m), status)

    def _default_nonbasic(self, cols: np.ndarray) -> np.ndarray:
        lo, hi, c = self.lo[cols], self.hi[cols], self.cost[cols]
        fin_lo, fin_hi = np.isfinite(lo), np.isfinite(hi)
        st = np.full(len(cols), FREE, dtype=np.int8)
        st[fin_lo] = AT_LO
        st[fin_hi & (~fin_lo | (c < 0))] = AT_UP
        return st

    def _place_nonbasic(self) -> None:
        st = self.state.status
        nb = st != BASIC
        lo, hi = self.lo, self.hi
        # repair statuses that point at an infinite bound
        bad_lo = nb & (st == AT_LO) & ~np.isfinite(lo)
        st[bad_lo] = np.where(np.isfinite(hi[bad_lo]), AT_UP, FREE)
        bad_hi = nb & (st == AT_UP) & ~np.isfinite(hi)
        st[bad_hi] = np.where(np.isfinite(lo[bad_hi]), AT_LO, FREE)
        free_fin = nb & (st == FREE) & (np.isfinite(lo) | np.isfinite(hi))
        st[free_fin] = np.where(np.isfinite(lo[free_fin]), AT_LO, AT_UP)
        self.x[st == AT_LO] = lo[st == AT_LO]
        self.x[st == AT_UP] = hi[st == AT_UP]
        self.x[st == FREE] = 0.0

    def _refactor(self) -> None:
        basis = self.state.basis
        B = self.Aext[:, basis]
        try:
            self.factor = _Factor(B.tocsc())
        except LpNumericalError:
            log.debug("singular basis after %d iterations, restarting from slack basis",
                      self.iterations)
            self._repair_singular()
            self.factor = _Factor(self.Aext[:, self.state.basis].tocsc())
        self._compute_primal()

    def _repair_singular(self) -> None:
        basic = self.state.basis
        st = self.state.status
        st[basic] = self._default_nonbasic(basic)
        slack = np.arange(self.n, self.n + self.m)
        st[slack] = BASIC
        self.state.basis = slack.copy()
        self._place_nonbasic()

    def _compute_primal(self) -> None:
        basis = self.state.basis
        xn = self.x.copy()
        xn[basis] = 0.0
        rhs = -(self.Aext @ xn)
        self.x[basis] = self.factor.ftran(rhs)

    def _column(self, j: int) -> np.ndarray:
        col = np.zeros(self.m)
        start, end = self.Aext.indptr[j], self.Aext.indptr[j + 1]
        col[self.Aext.indices[start:end]] = self.Aext.data[start:end]
        return col

    def _pivot(self, r: int, q: int, w: np.ndarray, leave_status: int) -> None:
        basis = self.state.basis
        p = basis[r]
        self.state.status[p] = leave_status
        self.state.status[q] = BASIC
        basis[r] = q
        self.factor.update(r, w)
        if len(self.factor.etas) >= self.refactor_every:
            self._refactor()

    def _reduced_costs(self, cost_B: np.ndarray, cost_all: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        y = self.factor.btran(cost_B)
        d = cost_all - self.AextT @ y
        d[self.state.basis] = 0.0
        return y, d

    def _basic_infeasibility(self) -> np.ndarray:
        xb = self.x[self.state.basis]
        lo = self.lo[self.state.basis]
        hi = self.hi[self.state.basis]
        return np.maximum(lo - xb, xb - hi)

    # -- public entry ----------------------------------------------------------
    def solve(self, warm: BasisState | None = None, iter_limit: int | None = None,
              cutoff: float | None = None) -> str:
        """Solve from ``warm`` (or the current/slack basis).

        ``cutoff``: stop early with status ``"cutoff"`` once the dual simplex
        proves the objective exceeds this value.
        """
        if self._trivially_infeasible or np.any(self.lo > self.hi + PRIMAL_TOL):
            return INFEASIBLE
        if warm is not None:
            self.state = warm.copy()
        elif self.state is None:
            self.state = self._slack_state()
        self._place_nonbasic()
        self._refactor()
        limit = self.iterations + (iter_limit or self.max_iter)
        status = None
        for _attempt in range(4):
            if self._dual_feasible():
                try:
                    status = self._dual_simplex(limit, cutoff)
                    if status in (INFEASIBLE, ITERATION_LIMIT, "cutoff"):
                        return status
                except LpNumericalError as exc:
                    log.debug("dual simplex: %s; continuing with primal", exc)
                    self._refactor()
            try:
                status = self._primal_simplex(limit)
            except LpNumericalError as exc:
                if _attempt == 3:
                    raise
                log.debug("primal simplex: %s; restarting from slack basis", exc)
                self._repair_singular()
                self._refactor()
                continue
            if status != OPTIMAL:
                return status
            self._refactor()
            if np.max(self._basic_infeasibility(), initial=0.0) <= 1e-7 and self._dual_feasible(1e-7):
                return OPTIMAL
        return status

    def _dual_feasible(self, tol: float = DUAL_TOL) -> bool:
        _, d = self._reduced_costs(self.cost[self.state.basis], self.cost)
        st = self.state.status
        fixed = self.lo == self.hi
        bad = ((st == AT_LO) & (d < -tol) & ~fixed) | ((st == AT_UP) & (d > tol) & ~fixed) | \
              ((st == FREE) & (np.abs(d) > tol))
        return not np.any(bad)

    # -- primal simplex ----------------------------------------------------------
    def _primal_simplex(self, limit: int) -> str:
        st = self.state.status
        lo, hi = self.lo, self.hi
        degenerate = 0
        rejected: set[int] = set()
        while True:
            if self.iterations >= limit:
                return ITERATION_LIMIT
            basis = self.state.basis
            xb = self.x[basis]
            lob, hib = lo[basis], hi[basis]
            below = xb < lob - PRIMAL_TOL
            above = xb > hib + PRIMAL_TOL
            phase1 = bool(below.any() or above.any())
            if phase1:
                cost_B = above.astype(float) - below.astype(float)
                cost_all = np.zeros(self.n + self.m)
                cost_all[basis] = cost_B
            else:
                cost_B = self.cost[basis]
                cost_all = self.cost
            _, d = self._reduced_costs(cost_B, cost_all)
            fixed = lo == hi
            inc = ((st == AT_LO) | (st == FREE)) & (d < -DUAL_TOL) & ~fixed
            dec = ((st == AT_UP) | (st == FREE)) & (d > DUAL_TOL) & ~fixed
            elig = inc | dec
            if rejected:
                elig[list(rejected)] = False
            cand = np.flatnonzero(elig)
            if cand.size == 0:
                if rejected:
                    raise LpNumericalError("primal simplex found no stable pivot")
                return INFEASIBLE if phase1 else OPTIMAL
            bland = degenerate > DEGEN_LIMIT
            q = int(cand[0]) if bland else int(cand[np.argmax(np.abs(d[cand]))])
            direction = 1.0 if inc[q] else -1.0
            w = self.factor.ftran(self._column(q))
            delta = -direction * w
            t, r, target = self._primal_ratio(xb, lob, hib, delta, below, above, bland)
            flip = hi[q] - lo[q]
            if np.isfinite(flip) and flip <= t:
                t, r = flip, -1
            if not np.isfinite(t):
                if phase1:
                    raise LpNumericalError("unbounded ray in phase 1")
                return UNBOUNDED
            if r >= 0 and abs(w[r]) < STABLE_PIVOT * max(1.0, np.abs(w).max()):
                rejected.add(q)
                continue
            rejected.clear()
            self.iterations += 1
            degenerate = degenerate + 1 if t <= 1e-12 else 0
            self.x[basis] = xb + t * delta
            self.x[q] += direction * t
            if r < 0:
                st[q] = AT_UP if direction > 0 else AT_LO
                self.x[q] = hi[q] if direction > 0 else lo[q]
                continue
            leave = basis[r]
            self.x[leave] = target
            leave_status = AT_LO if target == lo[leave] else AT_UP
            if lo[leave] == -np.inf and hi[leave] == np.inf:
                leave_status = FREE
            self._pivot(r, q, w, leave_status)

    def _primal_ratio(self, xb, lob, hib, delta, below, above, bland):
        down = delta < -PIVOT_TOL
        up = delta > PIVOT_TOL
        # bound reached first in the direction of motion
        tgt = np.full(len(xb), np.nan)
        dmask = down & ~below
        tgt[dmask] = np.where(above[dmask], hib[dmask], lob[dmask])
        umask = up & ~above
        tgt[umask] = np.where(below[umask], lob[umask], hib[umask])
        ok = np.isfinite(tgt)
        if not ok.any():
            return np.inf, -1, np.nan
        idx = np.flatnonzero(ok)
        dist = np.abs(xb[idx] - tgt[idx])
        rate = np.abs(delta[idx])
        exact = dist / rate
        # feasible basics may not cross their bound; Harris relaxes this by PRIMAL_TOL
        relaxed = (dist + PRIMAL_TOL) / rate
        tmax = relaxed.min()
        elig = exact <= tmax
        if bland:
            tmin = exact.min()
            tie = np.flatnonzero(exact <= tmin + 1e-12)
            k = tie[np.argmin(self.state.basis[idx[tie]])]
        else:
            cands = np.flatnonzero(elig)
            k = cands[np.argmax(rate[cands])]
        return max(float(exact[k]), 0.0), int(idx[k]), float(tgt[idx[k]])

    # -- dual simplex ----------------------------------------------------------
    def _perturbed_costs(self) -> tuple[np.ndarray, float]:
        """Costs nudged towards dual feasibility to break dual degeneracy.

        Only boxed columns are perturbed, so the optimal value of the
        perturbed LP is within the returned slack of the true one.
        """
        lo, hi, st = self.lo, self.hi, self.state.status
        boxed = np.isfinite(lo) & np.isfinite(hi) & (lo < hi)
        rng = np.random.default_rng(0x5eed)
        mag = COST_PERTURBATION * (1.0 + np.abs(self.cost)) * rng.uniform(0.5, 1.0, len(self.cost))
        mag[~boxed] = 0.0
        sign = np.where(st == AT_UP, -1.0, 1.0)
        slack = float(np.sum(mag[boxed] * np.maximum(np.abs(lo[boxed]), np.abs(hi[boxed]))))
        return self.cost + sign * mag, slack

    def _dual_simplex(self, limit: int, cutoff: float | None) -> str:
        st = self.state.status
        lo, hi = self.lo, self.hi
        cost, slack = self._perturbed_costs()
        _, d = self._reduced_costs(cost[self.state.basis], cost)
        degenerate = 0
        since_check = 0
        rejected: set[int] = set()
        while True:
            if self.iterations >= limit:
                return ITERATION_LIMIT
            basis = self.state.basis
            xb = self.x[basis]
            infeas = np.maximum(lo[basis] - xb, xb - hi[basis])
            if rejected:
                infeas[list(rejected)] = 0.0
            r = int(np.argmax(infeas))
            if infeas[r] <= PRIMAL_TOL:
                if rejected:
                    raise LpNumericalError("dual simplex found no stable pivot")
                return OPTIMAL
            if cutoff is not None and since_check >= 10:
                since_check = 0
                # the perturbed dual objective bounds the true optimum up to `slack`
                if float(cost[: self.n] @ self.x[: self.n]) - slack > cutoff:
                    return "cutoff"
            since_check += 1
            p = basis[r]
            to_lower = xb[r] < lo[p]
            target = lo[p] if to_lower else hi[p]
            e = np.zeros(self.m)
            e[r] = 1.0
            rho = self.factor.btran(e)
            alpha = self.AextT @ rho
            fixed = lo == hi
            nb = (st != BASIC) & ~fixed
            a = alpha if to_lower else -alpha
            elig = nb & (((st == AT_LO) & (a < -DUAL_PIVOT_TOL)) | ((st == AT_UP) & (a > DUAL_PIVOT_TOL)) |
                         ((st == FREE) & (np.abs(a) > DUAL_PIVOT_TOL)))
            cand = np.flatnonzero(elig)
            if cand.size == 0:
                return INFEASIBLE
            ad = np.abs(alpha[cand])
            dd = np.abs(d[cand])
            exact = dd / ad
            bland = degenerate > DEGEN_LIMIT
            # long-step rule: walk breakpoints, flipping boxed columns while the
            # leaving row stays infeasible
            order = np.argsort(exact, kind="stable")
            width = (hi - lo)[cand]
            slope = infeas[r]
            pos = 0
            if not bland:
                while pos < len(order):
                    i = order[pos]
                    if not np.isfinite(width[i]) or slope - ad[i] * width[i] <= PRIMAL_TOL:
                        break
                    slope -= ad[i] * width[i]
                    pos += 1
                if pos == len(order):
                    return INFEASIBLE
            rest = order[pos:]
            if bland:
                tmin = exact.min()
                tie = np.flatnonzero(exact <= tmin + 1e-12)
                k = tie[np.argmin(cand[tie])]
            else:
                k = rest[0]
                for tol in (DUAL_TOL, 1e-7, 1e-6):
                    tmax = ((dd[rest] + tol) / ad[rest]).min()
                    ok = rest[exact[rest] <= tmax]
                    k = ok[np.argmax(ad[ok])]
                    if ad[k] >= 1e-3 * ad[rest].max():
                        break
            if ad[k] < STABLE_PIVOT * max(1.0, ad.max()):
                # every admissible pivot is tiny: leave this row for later
                rejected.add(r)
                continue
            q = int(cand[k])
            w = self.factor.ftran(self._column(q))
            if abs(w[r] - alpha[q]) > 1e-7 * (1.0 + abs(w[r])):
                if not self.factor.etas:
                    raise LpNumericalError(f"unstable dual pivot |w_r|={abs(w[r]):.3g}, "
                                           f"|alpha_q|={abs(alpha[q]):.3g}")
                self._refactor()
                _, d = self._reduced_costs(cost[self.state.basis], cost)
                continue
            self.iterations += 1
            rejected.clear()
            flips = cand[order[:pos]] if not bland else np.empty(0, dtype=int)
            if flips.size:
                up = st[flips] == AT_LO
                delta = np.where(up, width[order[:pos]], -width[order[:pos]])
                st[flips] = np.where(up, AT_UP, AT_LO).astype(np.int8)
                self.x[flips] += delta
                moved = self.Aext[:, flips] @ delta
                self.x[basis] -= self.factor.ftran(moved)
                xb = self.x[basis]
            theta_d = d[q] / alpha[q]
            degenerate = degenerate + 1 if abs(theta_d) <= 1e-12 else 0
            d -= theta_d * alpha
            d[q] = 0.0
            d[p] = -theta_d
            theta_p = (xb[r] - target) / w[r]
            self.x[basis] = xb - theta_p * w
            self.x[q] += theta_p
            self.x[p] = target
            leave_status = AT_LO if to_lower else AT_UP
            n_etas = len(self.factor.etas)
            self._pivot(r, q, w, leave_status)
            if len(self.factor.etas) < n_etas:  # refactorized: refresh duals
                _, d = self._reduced_costs(cost[self.state.basis], cost)

    # -- results -------------------------------------------------------------
    def objective(self) -> float:
        return float(self.cost[: self.n] @ self.x[: self.n])

    def result(self, status: str) -> LpResult:
        n = self.n
        if status == OPTIMAL:
            y, d = self._reduced_costs(self.cost[self.state.basis], self.cost)
            if self._padded:
                y = y[:0]
            return LpResult(status, self.objective(), self.x[:n].copy(), y, d[:n].copy(),
                            self.iterations, self.state.copy())
        nan = np.full(n, np.nan)
        obj = {INFEASIBLE: np.inf, UNBOUNDED: -np.inf}.get(status, np.nan)
        duals = np.full(self.m - self._padded, np.nan)
        return LpResult(status, obj, nan, duals, nan, self.iterations,
                        self.state.copy() if self.state is not None else None)


def solve_compiled(cm: CompiledModel, warm: BasisState | None = None,
                   iter_limit: int | None = None) -> LpResult:
    s = SimplexSolver(cm.A, cm.c, cm.row_lo, cm.row_hi, cm.col_lo, cm.col_hi)
    status = s.solve(warm, iter_limit)
    res = s.result(status)
    if status == OPTIMAL:
        res.objective += cm.obj_offset
    return res


def solve_lp(m: MilpModel | CompiledModel, iter_limit: int | None = None) -> LpResult:
    """Solve the LP relaxation of ``m`` (binaries relaxed to their bounds)."""
    cm = m.compile() if isinstance(m, MilpModel) else m
    return solve_compiled(cm, iter_limit=iter_limit)
