"""Out-of-sample checks for a fixed partition and the statistical bounds built on them.

The dispatch check solves a feasibility LP over the energized part of the
network only.  It is written directly against the network data rather than
through the formulation blocks, so it doubles as an independent check of the
optimization model.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .formulation import PartitionSolution, V_MAX, V_MIN
from .lp import INFEASIBLE, OPTIMAL, LpNumericalError, SimplexSolver
from .network import FeederNetwork
from .scenarios import Scenario, ScenarioSet

log = logging.getLogger(__name__)


def load_buses(net: FeederNetwork) -> list[str]:
    """Every bus except the substation, in network order."""
    return [b for b in net.bus_ids if b != net.substation_id]


class DispatchChecker:
    """Feasibility of the energized islands of ``sol`` under individual scenarios.

    Columns per energized bus: v, pg, qg, pd, qd; per energized line: P, Q.
    Rows: active and reactive balance at every energized bus and the voltage
    drop along every energized line.  Scenario data only moves column bounds.
    """

    def __init__(self, net: FeederNetwork, sol: PartitionSolution, rho: float | None = None):
        self.net = net
        self.rho = sol.rho if rho is None else rho
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must lie in (0, 1]")
        known = set(net.bus_ids)
        lines = {l.id: l for l in net.lines}
        bad = [b for b in sol.energized_buses if b not in known or b == net.substation_id]
        bad += [l for l in sol.energized_lines if l not in lines]
        if bad:
            raise ValueError(f"solution does not match network: {bad}")
        self.buses = [b for b in net.bus_ids if b in set(sol.energized_buses)]
        self.lines = [lines[l] for l in sol.energized_lines]
        for l in self.lines:
            if l.from_bus not in sol.energized_buses or l.to_bus not in sol.energized_buses:
                raise ValueError(f"energized line {l.id} has a de-energized end")
        self.order = load_buses(net)
        self._col_of_bus = {b: k for k, b in enumerate(self.order)}
        nb, nl = len(self.buses), len(self.lines)
        self.nb, self.nl = nb, nl
        n = 5 * nb + 2 * nl
        self.solver: SimplexSolver | None = None
        if nb == 0:
            return
        pos = {b: k for k, b in enumerate(self.buses)}
        iv, ipg, iqg, ipd, iqd = (np.arange(nb) + k * nb for k in range(5))
        iP = 5 * nb + np.arange(nl)
        iQ = 5 * nb + nl + np.arange(nl)
        rows, cols, vals = [], [], []

        def put(r, c, v):
            rows.append(r)
            cols.append(c)
            vals.append(v)

        # balance: outflow - inflow - gen + load = 0
        for k in range(nb):
            put(k, ipg[k], -1.0)
            put(k, ipd[k], 1.0)
            put(nb + k, iqg[k], -1.0)
            put(nb + k, iqd[k], 1.0)
        for e, l in enumerate(self.lines):
            i, j = pos[l.from_bus], pos[l.to_bus]
            put(i, iP[e], 1.0)
            put(j, iP[e], -1.0)
            put(nb + i, iQ[e], 1.0)
            put(nb + j, iQ[e], -1.0)
            r = 2 * nb + e
            put(r, iv[i], 1.0)
            put(r, iv[j], -1.0)
            put(r, iP[e], -l.r)
            put(r, iQ[e], -l.x)
        m = 2 * nb + nl
        A = sp.csc_matrix((vals, (rows, cols)), shape=(m, n))
        lo = np.zeros(n)
        hi = np.zeros(n)
        lo[iv], hi[iv] = V_MIN, V_MAX
        for e, l in enumerate(self.lines):
            lo[iP[e]], hi[iP[e]] = -l.p_max, l.p_max
            lo[iQ[e]], hi[iQ[e]] = -l.q_max, l.q_max
        for k, b in enumerate(self.buses):
            lo[iqg[k]] = -net.bus(b).q_min_absorb
        self.idx = (ipg, iqg, ipd, iqd)
        self.solver = SimplexSolver(A, np.zeros(n), np.zeros(m), np.zeros(m), lo, hi)
        self._basis = None

    def _bus_values(self, xi: Scenario | ScenarioSet, k: int | None = None):
        cols = [self._col_of_bus[b] for b in self.buses]
        if isinstance(xi, ScenarioSet):
            xi = xi.aligned(self.order)[k or 0]
        return (np.asarray(xi.gp)[cols], np.asarray(xi.gq)[cols],
                np.asarray(xi.dp)[cols], np.asarray(xi.dq)[cols])

    def feasible(self, xi: Scenario) -> bool:
        """True iff a dispatch exists; raises LpNumericalError on breakdown.

        A bare scenario lists its values in :func:`load_buses` order.
        """
        if self.solver is None:
            return True
        gp, gq, dp, dq = self._bus_values(xi)
        ipg, iqg, ipd, iqd = self.idx
        s = self.solver
        s.hi[ipg] = gp
        s.hi[iqg] = gq
        s.lo[ipd], s.hi[ipd] = self.rho * dp, dp
        s.lo[iqd], s.hi[iqd] = self.rho * dq, dq
        if np.any(s.lo[iqg] > s.hi[iqg]):
            return False
        for attempt in range(2):
            try:
                st = s.solve(self._basis if attempt == 0 else None)
            except LpNumericalError:
                if attempt == 1:
                    raise
                s.state = None
                continue
            if st == OPTIMAL:
                self._basis = s.state.copy()
                return True
            if st == INFEASIBLE:
                return False
            s.state = None
        raise LpNumericalError(f"dispatch LP ended with status {st}")


def scenario_feasible(sol: PartitionSolution, net: FeederNetwork, xi: Scenario,
                      rho: float | None = None) -> bool:
    """Does a dispatch exist for the fixed partition under scenario ``xi``?

    ``xi`` must be ordered like ``net.bus_ids``.
    """
    return DispatchChecker(net, sol, rho).feasible(xi)


@dataclass
class ViolationEstimate:
    q_hat: float
    n_infeasible: int
    n_failed: int
    n: int
    infeasible_index: list[int] = field(default_factory=list)


def violation_count(sol: PartitionSolution, net: FeederNetwork, scenarios: ScenarioSet,
                    rho: float | None = None) -> ViolationEstimate:
    if len(scenarios) < 1:
        raise ValueError("at least one scenario is required")
    chk = DispatchChecker(net, sol, rho)
    aligned = scenarios.aligned(load_buses(net))
    bad, failed = [], 0
    for a, xi in enumerate(aligned):
        try:
            ok = chk.feasible(xi)
        except LpNumericalError:
            # conservative: an unsolved check counts as a violation
            failed += 1
            ok = False
        if not ok:
            bad.append(a)
    return ViolationEstimate(len(bad) / len(aligned), len(bad), failed, len(aligned), bad)


def estimate_violation(sol: PartitionSolution, net: FeederNetwork, scenarios: ScenarioSet,
                       rho: float | None = None) -> float:
    """Fraction of ``scenarios`` under which the partition has no feasible dispatch."""
    return violation_count(sol, net, scenarios, rho).q_hat


# -- statistics ------------------------------------------------------------------------

_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def inv_normal_cdf(p: float) -> float:
    """Inverse standard normal CDF: rational initial guess plus one Halley step."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie strictly between 0 and 1, got {p}")
    lo_break = 0.02425
    if p < lo_break:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p <= 1.0 - lo_break:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    # Halley refinement; tail-aware residual keeps accuracy for p near 1
    for _ in range(2):
        if x > 0:
            e = 0.5 * math.erfc(x / math.sqrt(2.0)) - (1.0 - p)
            e = -e
        else:
            e = normal_cdf(x) - p
        u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
        x = x - u / (1.0 + 0.5 * x * u)
    return x


def upper_bound(q_hat: float, n_prime: int, beta: float) -> float:
    """Normal-approximation (1 - beta) upper confidence limit for a violation probability."""
    if not 0.0 <= q_hat <= 1.0:
        raise ValueError("q_hat must lie in [0, 1]")
    if n_prime < 1:
        raise ValueError("n_prime must be at least 1")
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    z = inv_normal_cdf(1.0 - beta)
    return q_hat + z * math.sqrt(q_hat * (1.0 - q_hat) / n_prime)


def binom_cdf(k: int, q: float, n: int, inclusive: bool = False) -> float:
    """Binomial CDF.

    Default: sum over r = 0 .. k-1 (so ``binom_cdf(0, ...) == 0``).  With
    ``inclusive=True`` the sum runs to ``k``.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    if n < 0:
        raise ValueError("n must be non-negative")
    top = k if inclusive else k - 1
    if top < 0:
        return 0.0
    if top >= n:
        return 1.0
    if q == 0.0:
        return 1.0
    if q == 1.0:
        return 0.0
    r = np.arange(top + 1)
    logs = (math.lgamma(n + 1) - np.array([math.lgamma(i + 1) + math.lgamma(n - i + 1) for i in r])
            + r * math.log(q) + (n - r) * math.log1p(-q))
    peak = logs.max()
    return float(min(1.0, math.exp(peak) * np.exp(logs - peak).sum()))


def theta(gamma: float, n_dprime: int, epsilon: float, inclusive: bool = False) -> float:
    """Probability that at most floor(gamma * N'') of N'' draws violate, at true risk epsilon."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if n_dprime < 1:
        raise ValueError("n_dprime must be at least 1")
    return binom_cdf(math.floor(gamma * n_dprime + 1e-9), epsilon, n_dprime, inclusive)


@dataclass
class ValidationReport:
    q_hat: float
    U: float
    beta: float
    n_prime: int
    epsilon: float | None = None
    feasible_at_epsilon: bool | None = None
    n_infeasible: int = 0
    n_failed: int = 0
    seed: int | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"


def make_report(q_hat: float, n_prime: int, beta: float, epsilon: float | None = None,
                **extra) -> ValidationReport:
    U = upper_bound(q_hat, n_prime, beta)
    ok = None if epsilon is None else bool(U <= epsilon)
    return ValidationReport(q_hat, U, beta, n_prime, epsilon, ok, **extra)


def assess(sol: PartitionSolution, net: FeederNetwork, scenarios: ScenarioSet, beta: float,
           epsilon: float | None = None, seed: int | None = None) -> ValidationReport:
    est = violation_count(sol, net, scenarios)
    return make_report(est.q_hat, est.n, beta, epsilon, n_infeasible=est.n_infeasible,
                       n_failed=est.n_failed, seed=seed)


@dataclass
class LowerBoundReport:
    objectives_sorted: list[float]
    theta: float
    L: int
    bound: float
    beta: float
    gamma: float | None = None
    epsilon: float | None = None
    M: int = 0
    n_dprime: int | None = None
    inclusive: bool = False
    flagged: bool = False

    def to_json(self) -> str:
        doc = asdict(self)
        if not math.isfinite(self.bound):
            doc["bound"] = "-inf"
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def lower_bound(objectives: Sequence[float], theta_value: float, beta: float,
                inclusive: bool = False, **params) -> LowerBoundReport:
    """Order-statistic lower bound from M independent SAA optima.

    L is the largest index in 1..M with ``binom_cdf(L-1, theta, M) <= beta``;
    the bound is the L-th smallest objective.  When no index qualifies the
    report carries ``L = 0``, ``bound = -inf`` and ``flagged = True``.
    """
    vals = sorted(float(v) for v in objectives)
    M = len(vals)
    if M < 1:
        raise ValueError("at least one objective is required")
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("objectives must be finite")
    if not 0.0 <= theta_value <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    L = 0
    for cand in range(1, M + 1):
        if binom_cdf(cand - 1, theta_value, M, inclusive) <= beta:
            L = cand
        else:
            break
    bound = vals[L - 1] if L >= 1 else -math.inf
    return LowerBoundReport(vals, theta_value, L, bound, beta, M=M, inclusive=inclusive,
                            flagged=L == 0, **params)
