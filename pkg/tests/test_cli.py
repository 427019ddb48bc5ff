import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from degenell.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(tmp_path, command, config, *extra):
    out = tmp_path / "out"
    code = main([command, "--config", str(config), "--out", str(out), "--quiet", *extra])
    return code, out


def write(tmp_path, text, name="case.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


SMALL_PROBLEM = """
[grid]
N = 16
M = 32
[operator]
a = [["1", "0"], ["0", "1"]]
b = ["0", "0"]
c = "-1"
f = "-1"
boundary = "1"
"""


def test_indicial_writes_roots(tmp_path):
    code, out = run(tmp_path, "indicial", CONFIGS / "example_case1_indicial.toml", "--scope", "boundary")
    assert code == 0
    rows = list(csv.reader(open(out / "roots.csv")))
    assert rows[0] == ["x1", "mu_minus", "mu_plus", "Q_exponent"]
    values = np.array([[float(v) for v in r] for r in rows[1:]])
    # a = 1, b = 0, c = -0.75: roots -1/2 and 3/2 at every boundary node
    np.testing.assert_allclose(values[:, -3], -0.5, atol=1e-12)
    np.testing.assert_allclose(values[:, -2], 1.5, atol=1e-12)
    report = json.loads((out / "indicial.json").read_text())
    assert report["scope"] == "boundary"


def test_indicial_requires_scope(tmp_path):
    code, _ = run(tmp_path, "indicial", CONFIGS / "example_case1_indicial.toml")
    assert code == 2


def test_manufacture_outputs_use_full_precision(tmp_path):
    code, out = run(tmp_path, "manufacture", CONFIGS / "manufactured_s15.toml")
    assert code == 0
    for name in ("u.csv", "f.csv", "grid.json", "case.json"):
        assert (out / name).exists()
    data = np.loadtxt(out / "u.csv", delimiter=",", skiprows=1)
    t = data[:, 1]
    # 17 significant digits round-trip doubles exactly
    np.testing.assert_array_equal(data[:, 2], (1 + t) * t**1.5)
    assert "5.9605554270092398e-08" in (out / "u.csv").read_text()


def test_solve_constant_problem(tmp_path):
    code, out = run(tmp_path, "solve", CONFIGS / "constant.toml")
    assert code == 0
    sol = np.loadtxt(out / "solution.csv", delimiter=",", skiprows=1)
    assert np.max(np.abs(sol[:, -1] - 1)) <= 1e-10
    report = json.loads((out / "report.json").read_text())
    assert report["mode"] == "both" and report["agreement_gap"] <= 1e-6
    assert (out / "residual.csv").exists() and (out / "grid.json").exists()


def test_solve_is_deterministic_under_seed(tmp_path):
    cfg = write(tmp_path, SMALL_PROBLEM)
    a = main(["solve", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "7", "--quiet"])
    b = main(["solve", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "7", "--quiet"])
    assert a == b == 0
    assert (tmp_path / "a" / "solution.csv").read_bytes() == (tmp_path / "b" / "solution.csv").read_bytes()


def test_analyze_manufactured_case(tmp_path):
    code, out = run(tmp_path, "analyze", CONFIGS / "manufactured_s15.toml")
    assert code == 0
    results = {r["op"]: r["result"] for r in json.loads((out / "analysis.json").read_text())["results"]}
    assert abs(results["decay"]["exponent"] - 1.5) <= 0.05
    assert results["log_factor"]["verdict"] == "clean"
    assert "error" not in results["weighted_norm"]
    assert (out / "profile_0.csv").exists()


def test_analyze_reads_solution_file(tmp_path):
    cfg = write(tmp_path, SMALL_PROBLEM)
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "s"), "--quiet"]) == 0
    shutil.copy(tmp_path / "s" / "solution.csv", tmp_path / "u.csv")
    cfg2 = write(tmp_path, SMALL_PROBLEM + '[input]\nsolution = "u.csv"\n[[analysis]]\nop = "tangential_bound"\n',
                 "analyze.toml")
    code, out = run(tmp_path, "analyze", cfg2)
    assert code == 0
    data = json.loads((out / "analysis.json").read_text())
    assert data["solution"].endswith("u.csv")
    assert data["results"][0]["result"]["sup"] <= 1e-8


def test_analyze_normal_trace(tmp_path):
    code, out = run(tmp_path, "analyze", CONFIGS / "linear_trace.toml")
    assert code == 0
    res = json.loads((out / "analysis.json").read_text())["results"][0]["result"]
    assert res["discrepancy"] <= 1e-3
    assert res["u1_range"][0] == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("name,expected", [
    ("barrier_sigma0_mu05.toml", 0), ("barrier_sigma05_mu1.toml", 0), ("barrier_K0_fails.toml", 1),
])
def test_barrier_certificates(tmp_path, name, expected):
    code, out = run(tmp_path, "barrier", CONFIGS / name)
    assert code == expected
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["passed"] is (expected == 0)
    assert cert["sample_size"] >= 100_000


def test_full_verify_corrupted_tolerance_fails(tmp_path):
    code, out = run(tmp_path, "full-verify", CONFIGS / "full_verify_corrupted.toml")
    assert code == 1
    summary = json.loads((out / "summary.json").read_text())
    first = next(c for c in summary["criteria"] if c["number"] == 1)
    assert first["passed"] is False


@pytest.mark.parametrize("text", [
    "",
    "[grid]\nN = 0\n",
    "[grid]\nN = 8\nM = 8\n[operator]\nc = \"-1 +\"\n[solve]\n",
    "[mystery]\nx = 1\n",
    "[solve]\nmode = \"sideways\"\n",
])
def test_configuration_errors_exit_2(tmp_path, text):
    code, _ = run(tmp_path, "solve", write(tmp_path, text))
    assert code == 2


def test_unknown_command_and_missing_file(tmp_path):
    assert main(["bogus"]) == 2
    assert main(["solve", "--config", str(tmp_path / "absent.toml"), "--out", str(tmp_path)]) == 2


def test_numerical_failure_exit_3(tmp_path):
    cfg = write(tmp_path, SMALL_PROBLEM + "[solve]\nmode = \"direct\"\nlinear_tol = 1e-300\n")
    code, _ = run(tmp_path, "solve", cfg)
    assert code == 3
