"""Command-line interface.

Exit codes: 0 success, 1 bad input (missing file, schema error, mismatched
files), 2 infeasible or failed verification, 3 time limit.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import pipeline
from .bb import INFEASIBLE_STATUS, TIME_LIMIT
from .formulation import PartitionSolution, SaaConfig, solution_dot
from .milp import export_mps
from .network import NetworkError, load_network
from .scenarios import ScenarioSet
from .validation import lower_bound, make_report, theta, violation_count

log = logging.getLogger("gridpart")

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_TIME = 0, 1, 2, 3

STUDY_KINDS = ("gamma_sweep", "switch_sweep", "scenario_count_sweep", "method_compare")
DEFAULT_GRID = {
    "gamma_sweep": "0,0.1,0.3,0.5",
    "switch_sweep": "0,1,2,3,4",
    "scenario_count_sweep": "5,10,20",
    "method_compare": "method1,method2",
}


class InputError(Exception):
    pass


# -- argument parsing --------------------------------------------------------------

def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="base random seed")
    p.add_argument("--threads", type=int, default=d(1), help="worker processes for batch runs")
    p.add_argument("--time-limit", type=float, default=d(math.inf), help="seconds per MILP solve")
    p.add_argument("--gap", type=float, default=d(1e-6), help="relative optimality gap")
    p.add_argument("--backend", default=d("builtin"),
                   help="builtin, highs, or a command template with {mps} and {sol}")
    p.add_argument("-v", "--verbose", action="count", default=d(0))


def _scenario_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("scenarios")
    g.add_argument("--scenarios", type=Path, help="scenario CSV/JSON used as the sampling pool")
    g.add_argument("--n", type=int, help="number of scenarios to draw (default: whole file, "
                                         "or the nominal scenario when no file is given)")
    g.add_argument("--sampling", choices=["uniform", "stratified"], default="uniform")
    g.add_argument("--clusters", type=int, default=10)
    g.add_argument("--profile-seed", type=int, default=0,
                   help="seed of the synthetic population when no scenario file is given")
    g.add_argument("--hours", type=int, default=8760, help="length of the synthetic population")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridpart", description="Partition a distribution feeder "
                                 "into self-adequate microgrids under uncertainty.")
    _global_flags(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        return p

    p = cmd("partition", "solve the partitioning problem and write the solution")
    p.add_argument("network", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--dot", type=Path)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--rho", type=float, default=1.0)
    _scenario_flags(p)

    p = cmd("assess", "estimate the violation probability of a solution")
    p.add_argument("solution", type=Path)
    p.add_argument("network", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-prime", type=int, default=1000)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--bernoulli", type=float, metavar="Q",
                   help="replace the dispatch check by Bernoulli(Q) outcomes")
    _scenario_flags(p)

    p = cmd("lower-bound", "order-statistic lower bound from repeated sample solves")
    p.add_argument("network", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--M", type=int, default=50, dest="M")
    p.add_argument("--n-dprime", type=int, default=20)
    p.add_argument("--gamma", type=float, default=0.7)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--inclusive-binom", action="store_true")
    _scenario_flags(p)

    p = cmd("study", "parameter sweeps with tidy CSV output")
    p.add_argument("kind", choices=STUDY_KINDS)
    p.add_argument("network", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--figure", type=Path, help="also render a PNG summary")
    p.add_argument("--grid", help="comma-separated grid values")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--n-prime", type=int, default=200)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--epsilon", type=float, default=0.1)
    _scenario_flags(p)

    p = cmd("synth", "synthesize or sample scenarios")
    p.add_argument("network", type=Path)
    p.add_argument("--out", type=Path, required=True)
    _scenario_flags(p)

    p = cmd("export-mps", "write the optimization model as free MPS")
    p.add_argument("network", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--rho", type=float, default=1.0)
    _scenario_flags(p)

    p = cmd("check", "validate a network file, and optionally a solution against it")
    p.add_argument("network", type=Path)
    p.add_argument("--solution", type=Path)
    _scenario_flags(p)
    return ap


# -- input helpers -------------------------------------------------------------------

def _read(path: Path) -> str:
    try:
        return path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _network(path: Path):
    try:
        return load_network(_read(path))
    except NetworkError as exc:
        raise InputError(f"{path}: {exc}") from exc


def _scenario_file(path: Path) -> ScenarioSet:
    text = _read(path)
    try:
        if path.suffix.lower() == ".json":
            return ScenarioSet.from_json(text)
        return ScenarioSet.from_csv(text, provenance=str(path.name))
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def _pool(net, args) -> ScenarioSet:
    if args.scenarios is not None:
        pool = _scenario_file(args.scenarios)
        try:
            return pool.aligned([v for v in net.bus_ids if v != net.substation_id])
        except (KeyError, ValueError) as exc:
            raise InputError(f"{args.scenarios}: scenarios do not match the network ({exc})") from exc
    return pipeline.population(net, args.profile_seed, args.hours)


def _training(net, args, *tag) -> ScenarioSet:
    """Scenarios for a solve: a sample when --n is given, else the file or the nominal point."""
    if args.n is None:
        if args.scenarios is not None:
            return _pool(net, args)
        return ScenarioSet.nominal(net)
    if args.n < 1:
        raise InputError("--n must be at least 1")
    return pipeline.draw(_pool(net, args), args.n, pipeline.derived_seed(args.seed, "train", *tag),
                         args.sampling, args.clusters)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# -- commands ------------------------------------------------------------------------

def cmd_partition(args) -> int:
    net = _network(args.network)
    scen = _training(net, args)
    try:
        SaaConfig(args.gamma, args.rho)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    run = pipeline.run_partition(net, scen, args.gamma, args.rho, args.backend, args.time_limit,
                                 args.gap, args.seed)
    res = run.result
    if res.status == INFEASIBLE_STATUS:
        print("problem is infeasible", file=sys.stderr)
        return EXIT_INFEASIBLE
    if run.solution is None:
        print(f"no feasible partition found ({res.status})", file=sys.stderr)
        return EXIT_TIME
    sol = run.solution
    sol.solver["epsilon"] = args.epsilon
    sol.solver["n_scenarios"] = len(scen)
    problems = pipeline.verify(net, sol, scen)
    if problems:
        for p in problems:
            print(f"verification failed: {p}", file=sys.stderr)
        return EXIT_INFEASIBLE
    _write(args.out, sol.to_json())
    if args.dot is not None:
        _write(args.dot, solution_dot(net, sol))
    print(f"{res.status}: objective {sol.objective:.6f}, {len(sol.microgrids)} microgrid(s), "
          f"gap {res.gap:.3g}")
    return EXIT_TIME if res.status == TIME_LIMIT else EXIT_OK


def _load_solution(path: Path) -> PartitionSolution:
    try:
        return PartitionSolution.from_json(_read(path))
    except (json.JSONDecodeError, TypeError, KeyError) as exc:
        raise InputError(f"{path}: not a solution file ({exc})") from exc


def cmd_assess(args) -> int:
    net = _network(args.network)
    sol = _load_solution(args.solution)
    if args.n_prime < 1:
        raise InputError("--n-prime must be at least 1")
    if not 0.0 < args.beta < 1.0:
        raise InputError("--beta must lie in (0, 1)")
    seed = pipeline.derived_seed(args.seed, "assess")
    if args.bernoulli is not None:
        rng = np.random.default_rng(seed)
        bad = int((rng.random(args.n_prime) < args.bernoulli).sum())
        rep = make_report(bad / args.n_prime, args.n_prime, args.beta, args.epsilon,
                          n_infeasible=bad, seed=args.seed)
    else:
        draws = pipeline.draw(_pool(net, args), args.n_prime, seed, args.sampling, args.clusters)
        try:
            est = violation_count(sol, net, draws)
        except ValueError as exc:
            raise InputError(f"{args.solution}: {exc}") from exc
        rep = make_report(est.q_hat, est.n, args.beta, args.epsilon, n_infeasible=est.n_infeasible,
                          n_failed=est.n_failed, seed=args.seed)
    _write(args.out, rep.to_json())
    print(f"q_hat {rep.q_hat:.5f}  U {rep.U:.5f}" +
          ("" if rep.feasible_at_epsilon is None else f"  feasible at epsilon: {rep.feasible_at_epsilon}"))
    return EXIT_OK


def _lb_job(job):
    net, scen, gamma, backend, time_limit, gap, seed = job
    run = pipeline.run_partition(net, scen, gamma, 1.0, backend, time_limit, gap, seed)
    return run.result.status, float(run.result.objective)


def _map(fn, jobs, threads: int):
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def cmd_lower_bound(args) -> int:
    net = _network(args.network)
    if args.M < 1 or args.n_dprime < 1:
        raise InputError("--M and --n-dprime must be at least 1")
    try:
        th = theta(args.gamma, args.n_dprime, args.epsilon, args.inclusive_binom)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    pool = _pool(net, args)
    jobs = []
    for i in range(args.M):
        scen = pipeline.draw(pool, args.n_dprime, pipeline.derived_seed(args.seed, "lb", i),
                             args.sampling, args.clusters)
        jobs.append((net, scen, args.gamma, args.backend, args.time_limit, args.gap,
                     pipeline.derived_seed(args.seed, "lb-solve", i)))
    outcomes = _map(_lb_job, jobs, args.threads)
    objs = []
    for i, (status, obj) in enumerate(outcomes):
        if status != "optimal":
            partial = {"aborted_at_run": i, "status": status, "objectives": objs,
                       "M": args.M, "n_dprime": args.n_dprime, "gamma": args.gamma}
            _write(args.out, json.dumps(partial, indent=1, sort_keys=True) + "\n")
            print(f"run {i} ended with status {status}; partial log written", file=sys.stderr)
            return EXIT_TIME if status == TIME_LIMIT else EXIT_INFEASIBLE
        objs.append(obj)
    rep = lower_bound(objs, th, args.beta, args.inclusive_binom, gamma=args.gamma,
                      epsilon=args.epsilon, n_dprime=args.n_dprime)
    _write(args.out, rep.to_json())
    print(f"theta {rep.theta:.6f}  L {rep.L}  bound {rep.bound:.6f}")
    return EXIT_OK


# -- studies -----------------------------------------------------------------------------

STUDY_COLUMNS = ["kind", "param", "repeat", "seed", "n_scenarios", "gamma", "status", "objective",
                 "bound", "gap", "q_hat", "U", "retained", "n_energized", "n_microgrids", "error"]
TIMING_COLUMNS = ["param", "repeat", "wall_time", "nodes"]


def study_jobs(kind: str, net, pool: ScenarioSet, grid: list[str], repeats: int, args) -> list[dict]:
    n = args.n or 10
    jobs = []
    ties = [l.id for l in net.tie_lines]
    for gi, gval in enumerate(grid):
        for r in range(repeats):
            job = {"kind": kind, "param": gval, "repeat": r, "gamma": args.gamma, "n": n,
                   "sampling": "uniform", "net": net,
                   "train_seed": pipeline.derived_seed(args.seed, "study", r),
                   "assess_seed": pipeline.derived_seed(args.seed, "assess", r),
                   "solve_seed": pipeline.derived_seed(args.seed, gi, r)}
            if kind == "gamma_sweep":
                job["gamma"] = float(gval)
            elif kind == "switch_sweep":
                k = int(gval)
                if not 0 <= k <= len(ties):
                    raise InputError(f"switch count {k} outside 0..{len(ties)}")
                job["net"] = net.without_lines(ties[k:])
            elif kind == "scenario_count_sweep":
                job["n"] = int(gval)
                job["train_seed"] = pipeline.derived_seed(args.seed, "study", gi, r)
            elif kind == "method_compare":
                if gval not in ("method1", "method2"):
                    raise InputError("method_compare grid values are method1 and method2")
                if gval == "method2":
                    job["gamma"] = 0.0
                    job["sampling"] = "stratified"
                job["train_seed"] = pipeline.derived_seed(args.seed, "study", gi, r)
            jobs.append(job)
    return jobs


def run_study_job(job: dict, pool: ScenarioSet, args) -> tuple[dict, dict]:
    import time

    t0 = time.perf_counter()
    row = {c: "" for c in STUDY_COLUMNS}
    row.update(kind=job["kind"], param=job["param"], repeat=job["repeat"], seed=job["solve_seed"],
               n_scenarios=job["n"], gamma=job["gamma"])
    nodes = ""
    try:
        scen = pipeline.draw(pool, job["n"], job["train_seed"], job["sampling"], args.clusters)
        run = pipeline.run_partition(job["net"], scen, job["gamma"], 1.0, args.backend,
                                     args.time_limit, args.gap, job["solve_seed"])
        res = run.result
        nodes = res.nodes
        row.update(status=res.status, objective=repr(float(res.objective)),
                   bound=repr(float(res.bound)), gap=repr(float(res.gap)))
        sol = run.solution
        if sol is not None:
            row.update(retained=sum(sol.z) if sol.z else len(scen),
                       n_energized=len(sol.energized_buses), n_microgrids=len(sol.microgrids))
            if args.n_prime > 0:
                draws = pipeline.draw(pool, args.n_prime, job["assess_seed"])
                est = violation_count(sol, job["net"], draws)
                rep = make_report(est.q_hat, est.n, args.beta, args.epsilon)
                row.update(q_hat=repr(rep.q_hat), U=repr(rep.U))
    except Exception as exc:  # a failed run is flagged, the study goes on
        log.warning("study run %s/%s failed: %s", job["param"], job["repeat"], exc)
        row.update(status="error", error=f"{type(exc).__name__}: {exc}")
    timing = {"param": job["param"], "repeat": job["repeat"],
              "wall_time": f"{time.perf_counter() - t0:.3f}", "nodes": nodes}
    return row, timing


def _study_worker(payload):
    job, pool, args = payload
    return run_study_job(job, pool, args)


def _csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def cmd_study(args) -> int:
    net = _network(args.network)
    if args.repeats < 1:
        raise InputError("--repeats must be at least 1")
    grid = [g.strip() for g in (args.grid or DEFAULT_GRID[args.kind]).split(",") if g.strip()]
    if not grid:
        raise InputError("empty grid")
    pool = _pool(net, args)
    jobs = study_jobs(args.kind, net, pool, grid, args.repeats, args)
    out = _map(_study_worker, [(j, pool, args) for j in jobs], args.threads)
    rows = [r for r, _ in out]
    _write(args.out, _csv(rows, STUDY_COLUMNS))
    _write(args.out.with_suffix(args.out.suffix + ".timing"), _csv([t for _, t in out], TIMING_COLUMNS))
    if args.figure is not None:
        from .plotting import study_figure

        args.figure.parent.mkdir(parents=True, exist_ok=True)
        study_figure(rows, args.kind, args.figure)
    failed = sum(r["status"] == "error" for r in rows)
    print(f"{len(rows)} runs written to {args.out}" + (f" ({failed} flagged)" if failed else ""))
    return EXIT_OK


def cmd_synth(args) -> int:
    net = _network(args.network)
    if args.n is None:
        s = _pool(net, args)
    else:
        s = _training(net, args)
    text = s.to_json() if args.out.suffix.lower() == ".json" else s.to_csv()
    _write(args.out, text)
    print(f"{len(s)} scenarios over {len(s.bus_ids)} buses written to {args.out}")
    return EXIT_OK


def cmd_export_mps(args) -> int:
    net = _network(args.network)
    scen = _training(net, args)
    try:
        m = pipeline.build(net, scen, args.gamma, args.rho)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    _write(args.out, export_mps(m))
    print(f"{m.num_vars} columns, {m.num_constraints} rows written to {args.out}")
    return EXIT_OK


def cmd_check(args) -> int:
    net = _network(args.network)
    gf = [b.id for b in net.buses if b.grid_forming]
    load = sum(b.nominal_demand_p for b in net.buses)
    print(f"network {net.name}: {len(net.buses)} buses, {len(net.lines)} lines "
          f"({len(net.tie_lines)} normally open), substation {net.substation_id}")
    print(f"grid-forming buses: {', '.join(gf)}; nominal load {load:.4f} p.u.")
    if args.solution is None:
        return EXIT_OK
    sol = _load_solution(args.solution)
    scen = _training(net, args)
    if sol.z and len(sol.z) != len(scen):
        # without the training scenarios only the topology can be checked
        scen = ScenarioSet.nominal(net)
        sol = PartitionSolution.from_dict({**sol.to_dict(), "z": [], "per_scenario": {}})
    try:
        problems = pipeline.verify(net, sol, scen)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if any("does not match" in p for p in problems):
        raise InputError(problems[0])
    for p in problems:
        print(f"problem: {p}")
    print("solution ok" if not problems else f"{len(problems)} problem(s)")
    return EXIT_INFEASIBLE if problems else EXIT_OK


COMMANDS = {"partition": cmd_partition, "assess": cmd_assess, "lower-bound": cmd_lower_bound,
            "study": cmd_study, "synth": cmd_synth, "export-mps": cmd_export_mps, "check": cmd_check}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
