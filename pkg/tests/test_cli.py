import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from opfkit import oracle
from opfkit.cli import main

FIX = Path(__file__).parent / "fixtures"
GOLDEN = FIX / "golden"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv)
    return code, json.loads(out)


def same_shape(a, b, path="", rtol=1e-6, atol=1e-9):
    """Golden comparison: identical keys and types, floats within tolerance, other values equal."""
    if isinstance(a, dict):
        assert isinstance(b, dict) and list(a) == list(b), f"{path}: keys {list(a)} vs {list(b)}"
        for k in a:
            same_shape(a[k], b[k], f"{path}.{k}", rtol, atol)
    elif isinstance(a, list):
        assert isinstance(b, list) and len(a) == len(b), f"{path}: lengths differ"
        for i, (x, y) in enumerate(zip(a, b)):
            same_shape(x, y, f"{path}[{i}]", rtol, atol)
    elif isinstance(a, float) and not isinstance(b, bool) and isinstance(b, (int, float)):
        assert math.isclose(a, b, rel_tol=rtol, abs_tol=atol), f"{path}: {a} vs {b}"
    else:
        assert a == b, f"{path}: {a!r} vs {b!r}"


def test_check_feeder_golden(capsys):
    code, rep = run_json(capsys, "check", "--case", FIX / "feeder6.json", "--cost", "slack")
    assert code == 0
    assert rep["conditions"]["B"]["verdict"] == "pass"
    assert rep["conditions"]["B"]["B3"]["margin"] > 0
    golden = json.loads((GOLDEN / "check_feeder6.json").read_text())
    same_shape(rep, golden, rtol=1e-12, atol=1e-15)


def test_solve_then_certify(capsys, tmp_path):
    out = tmp_path / "r.json"
    code, rep = run_json(capsys, "solve", "--model", "bfm", "--case", FIX / "two_bus_exact.json", "--out", out)
    assert code == 0 and rep["status"] == "Optimal"
    hv = oracle.two_bus_bfm_curve(0.01 + 0.02j, -0.1 - 0.05j).roots[0]
    assert abs(rep["objective"] - 0.01 * hv.ell) < 1e-8
    golden = json.loads((GOLDEN / "solve_two_bus_bfm.json").read_text())
    for rec in (rep, golden):
        rec.pop("iterations")
        rec["certification"].pop("max_cone_gap")
    same_shape(rep, golden, rtol=1e-6, atol=1e-8)
    assert json.loads(out.read_text())["objective"] == rep["objective"]
    code, cert = run_json(capsys, "certify", "--case", FIX / "two_bus_exact.json", "--solution", out)
    assert code == 0 and cert["certification"]["verdict"] == "exact"


def test_bim_solve_certifies(capsys, tmp_path):
    out = tmp_path / "w.json"
    code, rep = run_json(capsys, "solve", "--model", "bim", "--case", FIX / "feeder6.json", "--cost", "slack",
                         "--out", out)
    assert code == 0 and rep["certification"]["model"] == "bim"
    code, cert = run_json(capsys, "certify", "--case", FIX / "feeder6.json", "--solution", out)
    assert cert["certification"]["verdict"] == "exact"


def test_tolerance_override(capsys, tmp_path, monkeypatch):
    out = tmp_path / "r.json"
    run(capsys, "solve", "--model", "bfm", "--case", FIX / "two_bus_exact.json", "--out", out)
    monkeypatch.setenv("OPFKIT_TOL", "1e-30")
    code, cert = run_json(capsys, "certify", "--case", FIX / "two_bus_exact.json", "--solution", out)
    assert code == 0 and cert["certification"]["tol"] == 1e-30
    assert cert["certification"]["verdict"] == "not_exact"
    monkeypatch.setenv("OPFKIT_TOL", "tight")
    code, _, err = run(capsys, "certify", "--case", FIX / "two_bus_exact.json", "--solution", out)
    assert code == 2 and "OPFKIT_TOL" in err


def test_malformed_case_is_domain_error(capsys):
    code, out, err = run(capsys, "solve", "--model", "bfm", "--case", FIX / "malformed.json")
    assert code == 1
    assert json.loads(out)["error"] == "CaseError" and "v_min" in err


def test_usage_errors(capsys, tmp_path):
    assert run(capsys, "solve", "--model", "bfm", "--case", FIX / "two_bus_exact.json", "--bogus")[0] == 2
    assert run(capsys, "solve", "--model", "bfm", "--case", tmp_path / "missing.json")[0] == 2
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys, "solve", "--model", "sdp", "--case", FIX / "two_bus_exact.json")[0] == 2


def test_convexify_triangle(capsys, tmp_path):
    out = tmp_path / "t.json"
    run(capsys, "solve", "--model", "bfm", "--case", FIX / "triangle.json", "--out", out)
    code, rep = run_json(capsys, "convexify", "--case", FIX / "triangle.json", "--solution", out)
    assert code == 0
    assert rep["shifters"] == [2] and rep["plan"]["tree"] == [0, 1]
    assert max(rep["residuals"].values()) < 1e-6
    assert rep["residual_without_shifters"] > 1e-3
    code, rep = run_json(capsys, "convexify", "--case", FIX / "triangle.json", "--solution", out, "--tree", 3)
    assert code == 0 and max(rep["residuals"].values()) < 1e-6


def test_convexify_rejects_bim_solution(capsys, tmp_path):
    out = tmp_path / "w.json"
    run(capsys, "solve", "--model", "bim", "--case", FIX / "triangle.json", "--out", out)
    assert run(capsys, "convexify", "--case", FIX / "triangle.json", "--solution", out)[0] == 1


def test_oracle_bounds_relaxation(capsys):
    code, rep = run_json(capsys, "oracle", "--case", FIX / "two_bus_exact.json", "--resolution", 101, "--polish")
    assert code == 0 and rep["feasible"]
    hv = oracle.two_bus_bfm_curve(0.01 + 0.02j, -0.1 - 0.05j).roots[0]
    assert rep["value"] >= 0.01 * hv.ell - 1e-6
    assert rep["value"] == pytest.approx(0.01 * hv.ell, abs=1e-7)


def test_angle_solve(capsys):
    code, rep = run_json(capsys, "solve", "--model", "angle", "--case", FIX / "angle_star.json",
                         "--cost", "active:1,2,0.5")
    assert code == 0 and rep["ellipse_residual"] < 1e-6
    assert -0.6 - 1e-6 <= rep["theta"][0] <= 0.4 + 1e-6


def test_geometry_csv(capsys, tmp_path):
    out = tmp_path / "curve.csv"
    code, rep = run_json(capsys, "geometry", "--two-bus-bfm", "z=0.01+0.02j,s1=-0.1-0.05j,samples=11", "--out", out)
    assert code == 0 and rep["rows"] == 11
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["ell", "v1", "p0", "q0", "exact"]
    assert len(rows) == 12 and rows[1][-1] == "1" and rows[-1][-1] == "1"
    out = tmp_path / "ell.csv"
    code, rep = run_json(capsys, "geometry", "--two-bus-ellipse", "g=3,b=4,samples=50", "--out", out)
    assert code == 0 and rep["pi_min_jk"] == pytest.approx(-2.0)
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    assert data.shape == (50, 3)
    assert run(capsys, "geometry", "--two-bus-ellipse", "g=3", "--out", out)[0] == 2
    assert run(capsys, "geometry", "--two-bus-bfm", "z=0.5+0.5j,s1=-5-5j", "--out", out)[0] == 1


def test_text_format(capsys):
    code, out, _ = run(capsys, "--format", "text", "check", "--case", FIX / "feeder6.json", "--cost", "slack")
    assert code == 0
    assert 'conditions.B.verdict: "pass"' in out.splitlines()
    code, out, _ = run(capsys, "check", "--case", FIX / "feeder6.json", "--format", "text")
    assert code == 0 and out.startswith("command: ")
