import csv
import json
import math
import os

import numpy as np
import pytest

from stackwave import ConfigError
from stackwave.cli import main, parse_config_text, resolve, run_config, verify_suite


def write_cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_parse_comments_and_types():
    cfg = parse_config_text("# header\nk = 0.2  # speed\nT=4\n\ngrid.ny = 30\nleader.override_speed_check = true\n")
    assert cfg == {"k": 0.2, "T": 4.0, "grid.ny": 30, "leader.override_speed_check": True}


def test_parse_errors():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("grid.nz = 4")
    assert exc.value.key == "grid.nz"
    with pytest.raises(ConfigError):
        parse_config_text("grid.ny = 4.5")
    with pytest.raises(ConfigError):
        parse_config_text("k 0.2")
    with pytest.raises(ConfigError):
        parse_config_text("k = 0.1\nk = 0.2")


def test_missing_keys_listed():
    with pytest.raises(ConfigError) as exc:
        resolve({"k": 0.2}, "leader")
    msg = str(exc.value)
    assert "T" in msg and "leader.rho0" in msg and "leader.rho1" in msg


def test_unknown_key_exit_code(tmp_path, capsys):
    path = write_cfg(tmp_path, "k = 0.2\nT = 4\ngrid.nz = 50\n")
    assert main(["nash", "--config", path, "--out", str(tmp_path / "o")]) == 1
    assert "grid.nz" in capsys.readouterr().err


def test_list_outside_sweep(tmp_path):
    path = write_cfg(tmp_path, "k = 0.2\nT = 4\nfollower.sigma = 1,10\n")
    assert main(["nash", "--config", path, "--out", str(tmp_path / "o")]) == 1


def test_simulate_dalembert_probe(tmp_path):
    path = write_cfg(tmp_path, "k = 0\nT = 1\ncontrol.w1 = sine\nprobe.y = 0.25\nprobe.t = 0.5\n")
    out = tmp_path / "sim"
    assert main(["simulate", "--config", path, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["results"]["probe_value"] == pytest.approx(math.sqrt(0.5), abs=2e-3)
    rows = read_csv(out / "field.csv")
    assert rows[0][0] == "t" and len(rows) == summary["results"]["nt"] + 2


def test_nash_outputs(tmp_path):
    path = write_cfg(tmp_path, "k = 0.2\nT = 4\ngrid.ny = 30\ntarget.v2 = sine:1\ncontrol.w1 = bump:3\n")
    out = tmp_path / "nash"
    assert main(["nash", "--config", path, "--out", str(out)]) == 0
    for name in ("summary.json", "w1.csv", "w2.csv", "terminal.csv", "iters.csv"):
        assert (out / name).exists()
    summary = json.loads((out / "summary.json").read_text())
    res = summary["results"]
    assert all(math.isfinite(v) for v in res.values() if isinstance(v, float))
    assert res["stationarity"] < 1e-6 and res["nash_min_gap"] >= -1e-10
    assert summary["wall_time"] >= 0
    assert summary["rng"]["seed"] == 0


def test_csv_presets(tmp_path):
    y = np.linspace(0, 1, 21)
    np.savetxt(tmp_path / "v2.csv", np.sin(np.pi * y)[None, :], delimiter=",")
    path = write_cfg(tmp_path, f"k = 0.2\nT = 2\ngrid.ny = 20\ntarget.v2 = {tmp_path / 'v2.csv'}\n")
    a = run_config(path, "nash", str(tmp_path / "a"))
    path = write_cfg(tmp_path, "k = 0.2\nT = 2\ngrid.ny = 20\ntarget.v2 = sine:1\n", "b.cfg")
    b = run_config(path, "nash", str(tmp_path / "b"))
    assert a["results"]["J2"] == pytest.approx(b["results"]["J2"], rel=1e-12)


def test_nonconvergence_exit_code(tmp_path):
    path = write_cfg(tmp_path, "k = 0.2\nT = 4\ngrid.ny = 20\ntarget.v2 = sine:1\nfollower.max_iter = 1\nfollower.tol = 1e-14\n")
    assert main(["nash", "--config", path, "--out", str(tmp_path / "o")]) == 2


def test_leader_run(tmp_path):
    path = write_cfg(tmp_path, "k = 0.2\nT = 4\ngrid.ny = 24\nleader.rho0 = 0.05\nleader.rho1 = 0.05\n")
    out = tmp_path / "lead"
    assert main(["leader", "--config", path, "--out", str(out)]) == 0
    res = json.loads((out / "summary.json").read_text())["results"]
    assert res["inside"] and res["objective_monotone"] and res["vi_residual"] <= 1e-6
    rows = read_csv(out / "iters.csv")
    assert rows[0] == ["iter", "objective", "residual", "restart"]


def test_leader_speed_refusal(tmp_path, capsys):
    path = write_cfg(tmp_path, "k = 0.5\nT = 4\ngrid.ny = 20\nleader.rho0 = 0.05\nleader.rho1 = 0.05\n")
    assert main(["leader", "--config", path, "--out", str(tmp_path / "o")]) == 1
    assert "1 - 1/sqrt(e)" in capsys.readouterr().err


def test_run_uses_config_mode(tmp_path):
    path = write_cfg(tmp_path, "run.mode = simulate\nk = 0.1\nT = 1\ngrid.ny = 20\ncontrol.w1 = bump\n")
    assert main(["run", "--config", path, "--out", str(tmp_path / "o")]) == 0
    assert main(["nash", "--config", path, "--out", str(tmp_path / "o")]) == 1


SMALL = {"grid.ny": 20, "run.seed": 1}


def test_verify_fault_injection():
    report = verify_suite(SMALL, fault="flux_sign")
    checks = {c["name"]: c for c in report["checks"]}
    assert not checks["adjointness"]["passed"]
    assert not report["passed"]


def test_verify_deterministic(tmp_path):
    path = write_cfg(tmp_path, "grid.ny = 20\nrun.seed = 4\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["verify", "--config", path, "--out", str(a)]) == 0
    assert main(["verify", "--config", path, "--out", str(b)]) == 0
    assert (a / "verify.json").read_bytes() == (b / "verify.json").read_bytes()
    report = json.loads((a / "verify.json").read_text())
    assert report["passed"], report


def test_outputs_byte_identical(tmp_path):
    path = write_cfg(tmp_path, "k = 0.2\nT = 4\ngrid.ny = 20\ntarget.v2 = bump\ncontrol.w1 = sine:2\n")
    run_config(path, "nash", str(tmp_path / "a"))
    run_config(path, "nash", str(tmp_path / "b"))
    for name in ("w1.csv", "w2.csv", "terminal.csv", "iters.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_sweep_sigma_ladder(tmp_path):
    path = write_cfg(tmp_path, "k = 0.2\nT = 4\ngrid.ny = 20\ncontrol.w1 = bump:3\ntarget.v2 = sine:1\nfollower.sigma = 1,10,100,1000\n")
    out = tmp_path / "sw"
    assert main(["sweep", "--config", path, "--out", str(out), "--jobs", "2"]) == 0
    rows = read_csv(out / "sweep.csv")
    head = rows[0]
    w2 = [float(r[head.index("w2_norm")]) for r in rows[1:]]
    assert len(w2) == 4 and all(a > b for a, b in zip(w2, w2[1:]))


def test_single_point_sweep_equals_run(tmp_path):
    text = "k = 0.2\nT = 4\ngrid.ny = 20\ncontrol.w1 = bump:3\ntarget.v2 = sine:1\n"
    single = run_config(write_cfg(tmp_path, text), "nash", str(tmp_path / "one"))
    swept = run_config(write_cfg(tmp_path, text, "s.cfg"), "sweep", str(tmp_path / "sw"))
    rows = read_csv(tmp_path / "sw" / "sweep.csv")
    head = rows[0]
    assert len(rows) == 2
    assert float(rows[1][head.index("J2")]) == single["results"]["J2"]
    assert swept["results"]["runs"] == 1


def test_sweep_records_failures(tmp_path):
    path = write_cfg(tmp_path, "k = 0.2\nT = 4\ngrid.ny = 20,2\n")
    out = tmp_path / "sw"
    assert main(["sweep", "--config", path, "--out", str(out)]) == 0
    rows = read_csv(out / "sweep.csv")
    status = [r[rows[0].index("status")] for r in rows[1:]]
    assert status == ["ok", "ConfigError"]


def test_oracle_regen(tmp_path):
    assert main(["oracle", "regen", "--out", str(tmp_path / "g")]) == 1
    assert main(["oracle", "regen", "--confirm", "--out", str(tmp_path / "g")]) == 0
    assert len(os.listdir(tmp_path / "g")) >= 10
