import json
import re

import numpy as np
import pytest

from aerobat import __version__
from aerobat.cli import run
from aerobat.config import config_hash, load_config, params_equal
from aerobat.sim import read_trajectory_csv


def files(d):
    return {p.name: p.read_bytes() for p in d.iterdir()}


def test_simulate_happy_path(tmp_path):
    out = tmp_path / "a"
    assert run(["simulate", "--t-end", "0.2", "--out", str(out), "--aero-dump"]) == 0
    names = set(files(out))
    assert {"trajectory.csv", "summary.json", "manifest.json", "config.cfg",
            "aero_segments.csv"} <= names
    m = json.loads((out / "manifest.json").read_text())
    assert m["version"] == __version__ and m["subcommand"] == "simulate"
    assert m["config_hash"] == config_hash(load_config())
    data = read_trajectory_csv(out / "trajectory.csv")
    assert data["t"][-1] == pytest.approx(0.2)


def test_simulate_is_byte_identical(tmp_path):
    argv = ["simulate", "--t-end", "0.1", "--mode", "pitch-stabilized", "--seed", "5",
            "--set", "control.pitch_gain=0.01,0,0,0"]
    assert run(argv + ["--out", str(tmp_path / "a")]) == 0
    assert run(argv + ["--out", str(tmp_path / "b")]) == 0
    assert files(tmp_path / "a") == files(tmp_path / "b")


def test_override_recorded_and_round_trips(tmp_path):
    out = tmp_path / "o"
    assert run(["simulate", "--t-end", "0.02", "--out", str(out), "--set", "aero.chord=0.18"]) == 0
    m = json.loads((out / "manifest.json").read_text())
    assert m["overrides"] == ["aero.chord=0.18"]
    edited = load_config(None, {"aero.chord": "0.18"})
    assert params_equal(load_config((out / "config.cfg").read_text()), edited)
    assert m["config_hash"] == config_hash(edited)


def test_config_file_flag(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("[sim]\nt_end = 0.02\n")
    assert run(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert read_trajectory_csv(tmp_path / "o" / "trajectory.csv")["t"][-1] == pytest.approx(0.02)


def test_env_overrides_out(tmp_path, monkeypatch):
    monkeypatch.setenv("AEROBAT_OUT", str(tmp_path / "env"))
    assert run(["simulate", "--t-end", "0.01", "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "env" / "trajectory.csv").exists()
    assert not (tmp_path / "flag").exists()


@pytest.mark.parametrize("argv, flag", [
    (["simulate", "--bogus"], "--bogus"),
    (["simulate", "--set", "novalue"], "--set"),
    (["simulate", "--seed", "-1"], "--seed"),
    (["simulate", "--mode", "hover"], "--mode"),
    (["simulate", "--t-end", "0"], "--t-end"),
    (["fly"], "subcommand"),
    ([], "subcommand"),
])
def test_usage_errors_exit_2(argv, flag, capsys):
    assert run(argv) == 2
    assert flag in capsys.readouterr().err


def test_runtime_error_exit_1(tmp_path, capsys):
    assert run(["simulate", "--out", str(tmp_path), "--set", "aero.chord=-1"]) == 1
    err = capsys.readouterr().err
    assert "module config" in err
    assert re.search(r"\d{4}-\d\d-\d\dT\d\d:\d\d:\d\d", err)


def test_sensitivity(tmp_path):
    assert run(["sensitivity", "--n-crank", "36", "--out", str(tmp_path)]) == 0
    d = json.loads((tmp_path / "sensitivity.json").read_text())
    assert len(d["grid"]) == 17 and d["failed"] == {}
    assert min(d["p5_max_deviation"][1:]) > 0


def test_optimize_then_simulate_then_plot(tmp_path):
    g = tmp_path / "g"
    assert run(["optimize-gait", "--max-evals", "8", "--horizon", "0.05", "--seed", "7",
                "--out", str(g)]) == 0
    r = json.loads((g / "gait_result.json").read_text())
    assert r["seed"] == 7 and r["n_evals"] == 8 and len(r["x"]) == 5
    assert np.all(np.diff(np.minimum.accumulate(r["trace"])) <= 0)

    p = tmp_path / "p"
    assert run(["optimize-pitch", "--gait", str(g / "gait_result.json"), "--max-evals", "5",
                "--horizon", "0.05", "--out", str(p)]) == 0
    rp = json.loads((p / "pitch_result.json").read_text())
    np.testing.assert_allclose(rp["l_ref_zp"], r["x"][:4])
    assert rp["trace"][0] == rp["zero_gain_cost"]

    s = tmp_path / "s"
    assert run(["simulate", "--gait", str(g / "gait_result.json"), "--gains",
                str(p / "pitch_result.json"), "--mode", "pitch-stabilized", "--t-end", "0.05",
                "--out", str(s)]) == 0
    d = read_trajectory_csv(s / "trajectory.csv")
    assert d["pitch"][0] == pytest.approx(r["x"][4], abs=1e-12)

    f = tmp_path / "f"
    assert run(["plot", str(s / "trajectory.csv"), str(g / "gait_result.json"),
                "--out", str(f)]) == 0
    names = set(files(f))
    assert {"trajectory_pitch.svg", "trajectory_velocity.svg", "trajectory_fdc.svg",
            "trajectory_forces.svg", "gait_result_cost.svg"} <= names


def test_plot_missing_column_exit_1(tmp_path, capsys):
    csv = tmp_path / "x.csv"
    csv.write_text("t,pitch\n0.0,0.1\n1.0,0.2\n")
    assert run(["plot", str(csv), "--out", str(tmp_path / "o")]) == 1
    assert "'vx'" in capsys.readouterr().err


def test_wrong_result_file_exit_1(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"problem": "pitch", "x": [0, 0, 0, 0]}))
    assert run(["simulate", "--gait", str(bad), "--out", str(tmp_path / "o")]) == 1


def test_validate_quick(tmp_path, capsys):
    assert run(["validate", "--quick", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "PASS linkage_jacobian" in out and "FAIL" not in out
    d = json.loads((tmp_path / "validation.json").read_text())
    assert all(c["passed"] for c in d["checks"])
