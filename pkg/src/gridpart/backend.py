"""Backend executables speaking the MPS-in / solution-file-out protocol.

    python -m gridpart.backend builtin MODEL.mps OUT.sol [--time-limit T] [--gap G]
    python -m gridpart.backend highs   MODEL.mps OUT.sol [--time-limit T] [--gap G]

The solution file holds ``status <s>``, ``objective <v>``, optionally
``bound <v>``, and one ``<column name> <value>`` line per column.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from .bb import SolveOptions, solve_milp, write_solution_file
from .milp import mps_names, read_mps


def run_builtin(mps: Path, sol: Path, time_limit: float, gap: float) -> int:
    m = read_mps(mps.read_text())
    res = solve_milp(m, SolveOptions(time_limit=time_limit, gap_tolerance=gap))
    write_solution_file(sol, mps_names(m), res.x, res.objective, res.status, res.bound)
    return 0


def run_highs(mps: Path, sol: Path, time_limit: float, gap: float) -> int:
    import highspy

    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("threads", 1)
    h.setOptionValue("random_seed", 0)
    h.setOptionValue("mip_rel_gap", gap)
    if math.isfinite(time_limit):
        h.setOptionValue("time_limit", time_limit)
    if h.readModel(str(mps)) != highspy.HighsStatus.kOk:
        print(f"highs could not read {mps}", file=sys.stderr)
        return 1
    h.run()
    status = h.getModelStatus()
    info = h.getInfo()
    ms = highspy.HighsModelStatus
    if status == ms.kInfeasible:
        write_solution_file(sol, [], None, math.inf, "infeasible")
        return 0
    has_sol = info.primal_solution_status == 2
    label = {ms.kOptimal: "optimal", ms.kTimeLimit: "time_limit"}.get(status, "feasible")
    lp = h.getLp()
    names = list(lp.col_names_)
    x = list(h.getSolution().col_value) if has_sol else None
    obj = info.objective_function_value if has_sol else math.inf
    write_solution_file(sol, names, x, obj, label, info.mip_dual_bound)
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m gridpart.backend")
    ap.add_argument("engine", choices=["builtin", "highs"])
    ap.add_argument("mps", type=Path)
    ap.add_argument("sol", type=Path)
    ap.add_argument("--time-limit", type=float, default=math.inf)
    ap.add_argument("--gap", type=float, default=1e-6)
    a = ap.parse_args(argv)
    run = run_builtin if a.engine == "builtin" else run_highs
    return run(a.mps, a.sol, a.time_limit, a.gap)


if __name__ == "__main__":
    sys.exit(main())
