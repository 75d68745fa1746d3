import json

import numpy as np
import pytest

from conftest import hover_trajectory
from stlplan.cli import (EXIT_HALTED, EXIT_NOT_CONVERGED, EXIT_OK, EXIT_USAGE, EXIT_VIOLATED,
                         main)

HOVER = np.array([1.0, -0.5, 1.2])


@pytest.fixture(scope="module")
def hover_csv(tmp_path_factory, params):
    path = tmp_path_factory.mktemp("traj") / "hover.csv"
    hover_trajectory(params, HOVER, 80).to_csv(path)
    return path


def test_missing_trajectory_is_a_usage_error(tmp_path, capsys):
    assert main(["monitor", str(tmp_path / "nope.csv")]) == EXIT_USAGE
    assert "not found" in capsys.readouterr().err


def test_malformed_csv(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,x\n0,1\n", encoding="utf-8")
    assert main(["monitor", str(bad)]) == EXIT_USAGE


def test_bad_flag_is_exit_one_not_two(hover_csv):
    assert main(["monitor", str(hover_csv), "--lambda", "ten"]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE


def test_unknown_scenario(hover_csv):
    assert main(["monitor", str(hover_csv), "--scenario", "moon"]) == EXIT_USAGE


def test_hovering_trajectory_violates_the_mission(hover_csv, capsys):
    assert main(["monitor", str(hover_csv), "--scenario", "desk"]) == EXIT_VIOLATED
    out = capsys.readouterr().out
    assert out.startswith("exact robustness")
    for g in ("ws", "obs", "beh", "vr", "pr", "vel", "pro", "vis", "ho"):
        assert f"  {g} " in out


def test_check_formula(capsys):
    assert main(["check-formula", "G[0,2] ws.x_lo & F[0,1] ho.z_hi", "--scenario", "desk"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[1] == "depth 2, predicates 2, needs 21 samples at Ts = 0.1 s"
    assert main(["check-formula", "G[0,2] nope", "--scenario", "desk"]) == EXIT_USAGE
    assert main(["check-formula", "G[0,2] (a"]) == EXIT_USAGE
    assert main(["check-formula", "G[0,2] a", "--horizon", "10"]) == EXIT_USAGE


def test_check_formula_from_file(tmp_path):
    f = tmp_path / "f.stl"
    f.write_text("F[0,1] (a & b)", encoding="utf-8")
    assert main(["check-formula", "@" + str(f)]) == EXIT_OK


def test_risk_needs_two_samples(hover_csv, tmp_path):
    assert main(["risk", str(hover_csv), "--samples", "1", "--out", str(tmp_path)]) == EXIT_USAGE


def test_risk_is_reproducible(hover_csv, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["risk", str(hover_csv), "--samples", "300", "--seed", "4",
                     "--out", str(out)]) == EXIT_OK
    for name in ("risk_report.json", "risk_table.txt", "risk_histogram.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    rep = json.loads((a / "risk_report.json").read_text(encoding="utf-8"))
    assert rep["K"] == 300


def test_environment_override(hover_csv, tmp_path, monkeypatch):
    monkeypatch.setenv("STLPLAN_SAMPLES", "1")
    assert main(["risk", str(hover_csv), "--out", str(tmp_path)]) == EXIT_USAGE
    # an explicit flag wins over the environment
    assert main(["risk", str(hover_csv), "--samples", "50", "--out", str(tmp_path)]) == EXIT_OK
    monkeypatch.setenv("STLPLAN_VARIANCE_SET", "9")
    assert main(["risk", str(hover_csv), "--samples", "50", "--out", str(tmp_path)]) == EXIT_USAGE


def test_bad_impulse_spec(hover_csv, tmp_path):
    assert main(["simulate", str(hover_csv), "--impulse", "4.0:0,1", "--out", str(tmp_path)]) \
        == EXIT_USAGE
    assert main(["simulate", str(hover_csv), "--impulse", "99:0,1,0", "--out", str(tmp_path)]) \
        == EXIT_USAGE


def test_simulate_push_into_obstacle_halts(hover_csv, tmp_path, desk):
    dp = desk.obstacles[0].center - HOVER
    arg = "4.0:" + ",".join(repr(float(v)) for v in dp)
    assert main(["simulate", str(hover_csv), "--impulse", arg, "--out", str(tmp_path)]) \
        == EXIT_HALTED
    lines = (tmp_path / "events.csv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2 and lines[1].endswith("false")
    assert (tmp_path / "executed.csv").exists()


def test_short_infeasible_plan_exits_two(tmp_path):
    # 1.2 s is far too short for the desk mission
    code = main(["plan", "--horizon", "12", "--max-iter", "3", "--out", str(tmp_path)])
    assert code == EXIT_NOT_CONVERGED
    assert sorted(p.name for p in tmp_path.iterdir()) == ["plan_report.json", "trajectory.csv"]
    rep = json.loads((tmp_path / "plan_report.json").read_text(encoding="utf-8"))
    assert rep["N"] == 12 and rep["converged"] is False and "wall_time_s" not in rep
