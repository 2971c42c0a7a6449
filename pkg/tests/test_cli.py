import json
import subprocess
import sys
from pathlib import Path

import pytest

import gridpart
from gridpart.cli import main
from gridpart.formulation import PartitionSolution

DATA = Path(gridpart.__file__).parent / "data"
TWO, FIVE = DATA / "two_bus.json", DATA / "five_bus.json"
POINTS = DATA / "five_bus_points.csv"


def run(*argv):
    return main([str(a) for a in argv])


def test_partition_two_bus(tmp_path, capsys):
    out, dot = tmp_path / "sol.json", tmp_path / "sol.dot"
    assert run("partition", TWO, "--out", out, "--dot", dot) == 0
    sol = PartitionSolution.from_json(out.read_text())
    assert sol.objective == pytest.approx(-0.6, abs=1e-9)
    assert dot.read_text().startswith("graph")
    assert "optimal" in capsys.readouterr().out


def test_missing_network_exits_one(tmp_path, capsys):
    assert run("partition", tmp_path / "nope.json", "--out", tmp_path / "s.json") == 1
    assert "cannot read" in capsys.readouterr().err


def test_bad_schema_exits_one(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"buses": []}))
    assert run("check", bad) == 1
    assert run("partition", TWO, "--out", tmp_path / "s.json", "--gamma", "1.5") == 1


def test_saa_partition_from_file_is_deterministic(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"sol{k}.json"
        args = ["partition", FIVE, "--out", out, "--scenarios", POINTS, "--n", 6, "--gamma", 0.3,
                "--seed", 4]
        assert run(*args) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    sol = PartitionSolution.from_json(outs[0].decode())
    assert len(sol.z) == 6 and sum(sol.z) >= 5


def test_assess_and_check_round_trip(tmp_path):
    sol = tmp_path / "sol.json"
    assert run("partition", FIVE, "--out", sol) == 0
    reports = []
    for k in range(2):
        rep = tmp_path / f"rep{k}.json"
        assert run("assess", sol, FIVE, "--out", rep, "--scenarios", POINTS, "--n-prime", 50,
                   "--epsilon", 0.5, "--seed", 9) == 0
        reports.append(rep.read_bytes())
    assert reports[0] == reports[1]
    doc = json.loads(reports[0])
    assert 0.0 <= doc["q_hat"] <= 1.0 and doc["U"] >= doc["q_hat"] and doc["n_prime"] == 50
    assert run("check", FIVE, "--solution", sol) == 0


def test_assess_deenergized_and_beta_half(tmp_path):
    sol = tmp_path / "dark.json"
    sol.write_text(PartitionSolution(0.0, [], [], [], [], []).to_json())
    rep = tmp_path / "rep.json"
    assert run("assess", sol, FIVE, "--out", rep, "--scenarios", POINTS, "--n-prime", 20,
               "--epsilon", 0.0) == 0
    doc = json.loads(rep.read_text())
    assert doc["q_hat"] == 0.0 and doc["U"] == 0.0 and doc["feasible_at_epsilon"] is True
    assert run("assess", sol, FIVE, "--out", rep, "--bernoulli", 0.3, "--n-prime", 400,
               "--beta", 0.5) == 0
    doc = json.loads(rep.read_text())
    assert doc["U"] == pytest.approx(doc["q_hat"], abs=1e-12)


def test_assess_bernoulli_mode(tmp_path):
    sol = tmp_path / "dark.json"
    sol.write_text(PartitionSolution(0.0, [], [], [], [], []).to_json())
    rep = tmp_path / "rep.json"
    assert run("assess", sol, FIVE, "--out", rep, "--bernoulli", 0.1, "--n-prime", 1000) == 0
    assert 0.08 <= json.loads(rep.read_text())["U"] <= 0.13


def test_mismatched_solution_exits_one(tmp_path):
    sol = tmp_path / "sol.json"
    sol.write_text(PartitionSolution(0.0, ["Z"], [], [], [], []).to_json())
    assert run("assess", sol, FIVE, "--out", tmp_path / "r.json", "--scenarios", POINTS) == 1
    assert run("check", FIVE, "--solution", sol) == 1


def test_lower_bound_identical_scenarios(tmp_path):
    one = tmp_path / "one.csv"
    lines = POINTS.read_text().splitlines()
    one.write_text("\n".join(lines[:6]) + "\n")
    out = tmp_path / "lb.json"
    assert run("lower-bound", FIVE, "--out", out, "--scenarios", one, "--M", 3, "--n-dprime", 4,
               "--gamma", 0.5, "--epsilon", 0.0) == 0
    doc = json.loads(out.read_text())
    assert len(set(doc["objectives_sorted"])) == 1
    assert doc["bound"] == doc["objectives_sorted"][0]
    assert doc["theta"] == 1.0 and doc["L"] == 3


def test_lower_bound_echoes_parameters(tmp_path):
    out = tmp_path / "lb.json"
    assert run("lower-bound", FIVE, "--out", out, "--scenarios", POINTS, "--M", 4,
               "--n-dprime", 5, "--gamma", 0.7) == 0
    doc = json.loads(out.read_text())
    assert (doc["M"], doc["n_dprime"], doc["gamma"], doc["epsilon"]) == (4, 5, 0.7, 0.1)
    assert doc["objectives_sorted"] == sorted(doc["objectives_sorted"])


def test_synth_and_export(tmp_path):
    csv_out, json_out, mps = tmp_path / "s.csv", tmp_path / "s.json", tmp_path / "m.mps"
    assert run("synth", FIVE, "--out", csv_out, "--hours", 48) == 0
    assert len(csv_out.read_text().splitlines()) >= 49
    assert run("synth", FIVE, "--out", json_out, "--hours", 48, "--n", 5, "--seed", 2) == 0
    first = json_out.read_bytes()
    assert run("synth", FIVE, "--out", json_out, "--hours", 48, "--n", 5, "--seed", 2) == 0
    assert json_out.read_bytes() == first
    assert run("export-mps", FIVE, "--out", mps, "--scenarios", POINTS, "--n", 3,
               "--gamma", 0.3) == 0
    text = mps.read_text()
    assert text.startswith("NAME") and text.rstrip().endswith("ENDATA")


def test_study_with_figure(tmp_path):
    out, fig = tmp_path / "study.csv", tmp_path / "study.png"
    args = ["study", "gamma_sweep", FIVE, "--out", out, "--scenarios", POINTS, "--n", 4,
            "--grid", "0,0.25,0.5", "--repeats", 2, "--n-prime", 20, "--figure", fig]
    assert run(*args) == 0
    rows = out.read_text().splitlines()
    assert len(rows) == 1 + 3 * 2
    assert fig.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    first_csv, first_fig = out.read_bytes(), fig.read_bytes()
    assert run(*args) == 0
    assert out.read_bytes() == first_csv and fig.read_bytes() == first_fig
    assert Path(str(out) + ".timing").exists()


def test_study_objective_nesting(tmp_path):
    import csv

    out = tmp_path / "study.csv"
    assert run("study", "gamma_sweep", FIVE, "--out", out, "--scenarios", POINTS, "--n", 8,
               "--grid", "0,0.25,0.5", "--n-prime", 0) == 0
    objs = [float(r["objective"]) for r in csv.DictReader(out.open())]
    assert all(b <= a for a, b in zip(objs, objs[1:]))


def test_module_entry_point(tmp_path):
    out = tmp_path / "sol.json"
    proc = subprocess.run([sys.executable, "-m", "gridpart", "partition", str(TWO), "--out",
                           str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(out.read_text())["objective"] == pytest.approx(-0.6)
