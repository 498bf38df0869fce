import json
import subprocess
import sys

import numpy as np
import pytest

from timecrisis.cli import main


def run_cli(*args):
    return main(list(args))


def test_simulate_linear(tmp_path, capsys):
    rc = run_cli("simulate", "--problem", "linear_payoff_1d", "--control", "1.0",
                 "--out", str(tmp_path), "--no-timestamp")
    out = capsys.readouterr().out
    assert rc == 0
    cost = float(out.splitlines()[0].split("=")[1])
    assert cost == pytest.approx(-1.0, abs=1e-8)
    assert (tmp_path / "trajectory.csv").exists()
    obj = json.loads((tmp_path / "crossings.json").read_text())
    assert obj["r"] == 1


def test_simulate_negative_control(tmp_path, capsys):
    rc = run_cli("simulate", "--problem", "linear_payoff_1d", "--control", "-1.0",
                 "--out", str(tmp_path), "--no-timestamp")
    out = capsys.readouterr().out
    assert rc == 0
    cost = float(out.splitlines()[0].split("=")[1])
    assert cost == pytest.approx(6.0, abs=1e-8)


def test_simulate_missing_control_is_usage_error(tmp_path, capsys):
    rc = run_cli("simulate", "--problem", "linear_payoff_1d", "--out", str(tmp_path))
    capsys.readouterr()
    assert rc == 2


def test_unknown_problem_is_usage_error(tmp_path, capsys):
    rc = run_cli("simulate", "--problem", "nope", "--control", "1.0", "--out", str(tmp_path))
    capsys.readouterr()
    assert rc == 2


def test_tangential_contact_exit_code(tmp_path, capsys):
    # u = +1 until the trajectory touches the boundary, then -1: exit 4
    csv = tmp_path / "u.csv"
    n = 2000
    vals = np.where(np.arange(n) < n // 2, 1.0, -1.0)
    csv.write_text("u_1\n" + "\n".join(str(v) for v in vals) + "\n")
    rc = run_cli("simulate", "--problem", "linear_payoff_1d", "--control", f"csv:{csv}",
                 "--out", str(tmp_path))
    err = capsys.readouterr().err
    assert rc == 4
    assert "assumption violation" in err


def test_solve_and_verify_and_report(tmp_path, capsys):
    rc = run_cli("solve", "--problem", "linear_payoff_1d", "--out", str(tmp_path), "--no-timestamp")
    out = capsys.readouterr().out
    assert rc == 0
    obj = json.loads((tmp_path / "solution.json").read_text())
    assert obj["objective"] == pytest.approx(-1.0, abs=1e-3)
    assert obj["tau"][0] == pytest.approx(1.0, abs=1e-3)
    assert (tmp_path / "iterations.csv").exists()

    rc = run_cli("verify", "--problem", "linear_payoff_1d", "--out", str(tmp_path),
                 "--no-timestamp", "--omega-samples", "20")
    out = capsys.readouterr().out
    assert rc == 0
    assert "vacuous" in out
    ver = json.loads((tmp_path / "verification.json").read_text())
    assert ver["passed"] is True
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["gamma"][0] == pytest.approx(-1.0, abs=1e-4)

    rc = run_cli("report", "--problem", "linear_payoff_1d", "--out", str(tmp_path),
                 "--no-timestamp", "--omega-samples", "20")
    out = capsys.readouterr().out
    assert rc == 0
    text = (tmp_path / "report.txt").read_text()
    assert "gamma = [-" in text
    assert "pass" in text


def test_solution_artifact_reused_by_verify(tmp_path, capsys):
    rc = run_cli("solve", "--problem", "quad_payoff_1d", "--out", str(tmp_path), "--no-timestamp")
    assert rc == 0
    sol_before = (tmp_path / "solution.json").read_bytes()
    rc = run_cli("verify", "--problem", "quad_payoff_1d", "--out", str(tmp_path),
                 "--no-timestamp", "--omega-samples", "10")
    capsys.readouterr()
    assert rc == 0
    assert (tmp_path / "solution.json").read_bytes() == sol_before


def test_artifact_problem_mismatch_rejected(tmp_path, capsys):
    rc = run_cli("solve", "--problem", "linear_payoff_1d", "--out", str(tmp_path), "--no-timestamp")
    assert rc == 0
    rc = run_cli("verify", "--problem", "quad_payoff_1d", "--out", str(tmp_path), "--no-timestamp")
    capsys.readouterr()
    assert rc == 2


def test_byte_identical_reruns(tmp_path, capsys):
    files = ["solution.json", "iterations.csv", "certificate.json", "costate.csv",
             "verification.json", "report.txt", "trajectory.csv", "crossings.json"]
    contents = []
    for sub in ("a", "b"):
        d = tmp_path / sub
        d.mkdir()
        assert run_cli("simulate", "--problem", "linear_payoff_1d", "--control", "1.0",
                       "--out", str(d), "--no-timestamp", "--seed", "7") == 0
        assert run_cli("solve", "--problem", "linear_payoff_1d", "--out", str(d),
                       "--no-timestamp", "--seed", "7") == 0
        assert run_cli("verify", "--problem", "linear_payoff_1d", "--out", str(d),
                       "--no-timestamp", "--seed", "7", "--omega-samples", "20") == 0
        assert run_cli("report", "--problem", "linear_payoff_1d", "--out", str(d),
                       "--no-timestamp", "--seed", "7", "--omega-samples", "20") == 0
        capsys.readouterr()
        contents.append({f: (d / f).read_bytes() for f in files})
    for f in files:
        assert contents[0][f] == contents[1][f], f"artifact {f} differs between runs"


def test_config_problem_through_cli(tmp_path, capsys):
    cfg = {
        "name": "toy_copy",
        "n": 1, "m": 1, "l": 2, "T": 2.0,
        "x0": [-1.0],
        "box": [[-1.0, 1.0]],
        "f": [[{"c": 1.0, "e": [0, 1]}]],
        "g": [[{"c": 1.0, "e": [1]}]],
        "c": [
            [{"c": 1.0, "e": [1]}, {"c": -1.0, "e": [0]}],
            [{"c": -1.0, "e": [1]}, {"c": -1.0, "e": [0]}],
        ],
        "phi": [[{"c": -2.0, "e": [1]}]],
    }
    cfg_path = tmp_path / "problem.json"
    cfg_path.write_text(json.dumps(cfg))
    rc = run_cli("simulate", "--config", str(cfg_path), "--control", "1.0",
                 "--out", str(tmp_path), "--no-timestamp")
    out = capsys.readouterr().out
    assert rc == 0
    assert float(out.splitlines()[0].split("=")[1]) == pytest.approx(-1.0, abs=1e-8)
    # solve on a config problem requires an explicit initialization
    rc = run_cli("solve", "--config", str(cfg_path), "--out", str(tmp_path / "s"))
    capsys.readouterr()
    assert rc == 2
    rc = run_cli("solve", "--config", str(cfg_path), "--init-tau", "1.5",
                 "--init-control", "0.5", "--out", str(tmp_path / "s"), "--no-timestamp")
    capsys.readouterr()
    assert rc == 0


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "timecrisis.cli", "--help"],
                         capture_output=True, text=True)
    assert res.returncode in (0, 2)
    assert "simulate" in res.stdout + res.stderr
