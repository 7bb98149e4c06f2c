import json
import os

import numpy as np
import pytest

from tiltctl.cli import main
from tiltctl.controller import Gains
from tiltctl.harness import (ConfigError, Scenario, _take, _translation_profile,
                             compare_controllers, load_scenario,
                             make_reference, metrics_from_telemetry,
                             precheck_feasibility, run_scenario,
                             solve_lemniscate_omega, telemetry_columns,
                             write_run, MetricsReport)
from tiltctl.simulation import TetherConfig
from tiltctl.vehicle import VehicleParams

SCEN_DIR = os.path.join(os.path.dirname(__file__), "..", "scenarios")


@pytest.fixture
def params():
    return VehicleParams()


@pytest.fixture
def gains():
    return Gains()


def short_hover(**kw):
    kw.setdefault("kind", "hover_step")
    kw.setdefault("duration", 0.5)
    kw.setdefault("p_offset", [0.1, 0.0, -0.05])
    return Scenario(**kw)


def test_lemniscate_reference_initial_velocity():
    sc = Scenario(kind="lemniscate", speed=0.8, amp_x=0.4, amp_y=0.3)
    ref = make_reference(sc, 0.0)
    w = sc._omega
    assert np.allclose(ref.p_d, [0.0, 0.0, sc.height])
    assert np.allclose(ref.v_d, [0.4 * w, 0.6 * w, 0.0])


def test_roll_reference_initial_rate():
    sc = Scenario(kind="roll_oscillation", roll_amp_deg=50.0, roll_freq=0.5)
    ref = make_reference(sc, 0.0)
    expect = 2 * np.pi * 0.5 * np.deg2rad(50.0)
    assert np.allclose(ref.omega_d, [expect, 0.0, 0.0])
    assert np.allclose(ref.R_d, np.eye(3))


def test_lemniscate_speed_solver_accuracy():
    """Mean path speed over one period matches the target within 0.1%."""
    for target in (0.3, 0.8, 1.2):
        w = solve_lemniscate_omega(target, 0.4, 0.3)
        T = 2 * np.pi / w
        t = np.linspace(0.0, T, 20000)
        sc = Scenario(kind="lemniscate", speed=target)
        v = np.array([make_reference(sc, ti).v_d for ti in t])
        mean_speed = np.trapezoid(np.linalg.norm(v, axis=1), t) / T
        assert abs(mean_speed - target) / target < 1e-3


@pytest.mark.parametrize("kind", ["lemniscate", "roll_oscillation", "tether_drop"])
def test_reference_smoothness(kind):
    """Stated derivatives match finite differences of the level below."""
    sc = Scenario(kind=kind, speed=0.8)
    h = 1e-6
    rng = np.random.default_rng(0)
    for t in rng.uniform(0.05, 4.0, size=30):
        rm, r0, rp = (make_reference(sc, t + s) for s in (-h, 0.0, h))
        fd_v = (rp.p_d - rm.p_d) / (2 * h)
        fd_a = (rp.v_d - rm.v_d) / (2 * h)
        fd_j = (rp.a_d - rm.a_d) / (2 * h)
        assert np.allclose(fd_v, r0.v_d, atol=1e-5)
        assert np.allclose(fd_a, r0.a_d, atol=1e-4)
        assert np.allclose(fd_j, r0.j_d, atol=1e-2)
        fd_wd = (rp.omega_d - rm.omega_d) / (2 * h)
        assert np.allclose(fd_wd, r0.omega_dot_d, atol=1e-4)


def test_translation_profile_continuity():
    """The lateral move is C^2: position, velocity and acceleration are
    continuous across every phase boundary."""
    sc = Scenario(kind="tether_drop")
    knots = [sc.move_start, sc.move_start + sc.ramp_time,
             sc.move_start + sc.travel / sc.lateral_speed,
             sc.move_start + sc.travel / sc.lateral_speed + sc.ramp_time]
    h = 1e-9
    for tk in knots:
        lo = np.array(_translation_profile(tk - h, sc)[:3])
        hi = np.array(_translation_profile(tk + h, sc)[:3])
        assert np.allclose(lo, hi, atol=1e-6)
    # end of the move: exactly the commanded travel, at rest
    end = _translation_profile(100.0, sc)
    assert end == (sc.travel, 0.0, 0.0, 0.0)


def test_translation_profile_rejects_short_travel():
    sc = Scenario(kind="tether_drop", travel=0.05, lateral_speed=0.4,
                  ramp_time=0.5)
    with pytest.raises(ConfigError):
        _translation_profile(2.0, sc)


def test_scenario_validation():
    with pytest.raises(ConfigError):
        Scenario(kind="bogus")
    with pytest.raises(ConfigError):
        Scenario(measurement="psychic")
    with pytest.raises(ConfigError):
        solve_lemniscate_omega(-1.0, 0.4, 0.3)


def test_precheck_feasibility(params):
    # a 100 m/s lemniscate demands far more thrust than 4 rotors provide
    sc = Scenario(kind="lemniscate", speed=100.0)
    with pytest.raises(ConfigError):
        precheck_feasibility(sc, params)


def test_run_determinism(gains, params):
    sc = short_hover(init_jitter=0.01, seed=3)
    r1, m1 = run_scenario(sc, gains, params)
    r2, m2 = run_scenario(sc, gains, params)
    assert np.array_equal(r1, r2)
    assert m1.to_json() == m2.to_json()
    r3, _ = run_scenario(sc, gains, params, seed=4)
    assert not np.array_equal(r1, r3)


def test_run_divergence_flag(gains, params):
    # start far outside the divergence radius: flagged on the first tick
    sc = short_hover(p_offset=[6.0, 0.0, 0.0])
    rows, report = run_scenario(sc, gains, params)
    assert report.diverged
    assert rows.shape[0] == 1


def test_telemetry_layout(gains, params):
    sc = short_hover()
    rows, _ = run_scenario(sc, gains, params)
    cols = telemetry_columns(params.n)
    assert rows.shape[1] == len(cols) == 39 + 4 * params.n
    assert cols[0] == "t" and cols[-2] == "V" and cols[-1] == "sat_flag"
    # time column is the physics grid
    assert np.allclose(np.diff(rows[:, 0]), sc.dt_physics)
    # rotation rows stay orthonormal in the log
    R = rows[-1, 7:16].reshape(3, 3)
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-9)


def test_dual_path_metrics(gains, params, tmp_path):
    """Metrics recomputed from the CSV agree with the online accumulators."""
    sc = Scenario(kind="lemniscate", speed=0.6, duration=1.0, settle_time=0.2)
    out = tmp_path / "run"
    rows, report = run_scenario(sc, gains, params, out_dir=str(out))
    loaded = np.loadtxt(out / "telemetry.csv", delimiter=",", skiprows=1)
    assert np.array_equal(loaded, rows)  # %.17g round-trips float64 exactly
    pos, rot = metrics_from_telemetry(loaded, sc, gains, params)
    assert abs(pos - report.pos_rmse) <= 1e-9
    assert abs(rot - report.rot_rmse) <= 1e-9


def test_load_all_bundled_scenarios():
    tomls = sorted(f for f in os.listdir(SCEN_DIR) if f.endswith(".toml")
                   and not f.startswith("gains"))
    assert len(tomls) >= 5
    for name in tomls:
        sc, gains, params = load_scenario(os.path.join(SCEN_DIR, name))
        ref = make_reference(sc, 0.123)
        assert np.isfinite(ref.p_d).all()
        precheck_feasibility(sc, params)


def test_take_rejects_unknown_keys():
    with pytest.raises(ConfigError) as e:
        _take({"k_tp": 4.0, "k_banana": 1.0}, Gains)
    assert "k_banana" in str(e.value)


def test_load_scenario_tether_guard(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text('kind = "hover_step"\n[tether]\nlength = 0.8\n')
    with pytest.raises(ConfigError):
        load_scenario(str(bad))


def fake_run(dirpath, name, kind, controller, seed, pos, diverged=False,
             recovery=None):
    os.makedirs(dirpath, exist_ok=True)
    rep = MetricsReport(pos_rmse=pos, rot_rmse=pos / 2, diverged=diverged,
                        sat_duty=0.0, worst_margin=0.0,
                        recovery_time=recovery)
    with open(os.path.join(dirpath, "metrics.json"), "w") as fh:
        fh.write(rep.to_json())
    with open(os.path.join(dirpath, "meta.json"), "w") as fh:
        json.dump({"scenario": name, "kind": kind, "controller": controller,
                   "seed": seed, "duration": 1.0, "settle_time": 0.0}, fh)
    return dirpath


def test_compare_controllers_table(tmp_path):
    d1 = fake_run(str(tmp_path / "a"), "lem", "lemniscate", "proposed", 0, 0.02)
    d2 = fake_run(str(tmp_path / "b"), "lem", "lemniscate", "baseline", 0, 0.09)
    d3 = fake_run(str(tmp_path / "c"), "tether", "tether_drop", "proposed", 0,
                  0.03, recovery=0.76)
    d4 = fake_run(str(tmp_path / "d"), "tether", "tether_drop", "baseline", 0,
                  0.0, diverged=True)
    text, table = compare_controllers([d1, d2, d3, d4])
    assert len(table["rows"]) == 2
    lem = next(r for r in table["rows"] if r["scenario"] == "lem")
    assert lem["controllers"]["proposed"]["pos_rmse"] == 0.02
    assert "DIVERGED" in text
    assert "0.76" in text
    # the proposed side carries the star on the lemniscate row
    lem_line = next(l for l in text.splitlines() if l.startswith("lem"))
    assert "*" in lem_line.split("|")[1]


def test_cli_run_and_exit_codes(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("TILTCTL_OUT", raising=False)
    scen = tmp_path / "s.toml"
    scen.write_text('kind = "hover_step"\nduration = 0.2\n'
                    'p_offset = [0.1, 0.0, 0.0]\n')
    out = tmp_path / "out"
    assert main(["run", str(scen), "--out", str(out)]) == 0
    assert (out / "telemetry.csv").exists()
    assert (out / "metrics.json").exists()

    div = tmp_path / "d.toml"
    div.write_text('kind = "hover_step"\nduration = 0.2\n'
                   'p_offset = [6.0, 0.0, 0.0]\n')
    assert main(["run", str(div), "--out", str(tmp_path / "out2")]) == 1

    assert main(["run", str(tmp_path / "missing.toml")]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text('kind = "nope"\n')
    assert main(["run", str(bad)]) == 2


def test_cli_certify_exit_codes(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("TILTCTL_OUT", raising=False)
    ok = tmp_path / "ok.toml"
    ok.write_text("[gains]\nk_tp = 4.0\n")
    assert main(["certify", str(ok)]) == 0
    assert "ok: True" in capsys.readouterr().out

    # a 30% band on the stock quad is infeasible -> FAIL
    bad = tmp_path / "band.toml"
    bad.write_text("[band]\ndelta_f = 0.015\ndelta_theta = 0.03\n"
                   "[certify]\nn_samples = 50\n")
    assert main(["certify", str(bad)]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_cli_certify_bundled_robust_gains(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("TILTCTL_OUT", str(tmp_path / "cert"))
    path = os.path.join(SCEN_DIR, "gains_robust.toml")
    assert main(["certify", path, "--out", "ignored"]) == 0
    assert (tmp_path / "cert" / "certification.json").exists()
    doc = json.loads((tmp_path / "cert" / "certification.json").read_text())
    assert doc["feasible"]


def test_cli_compare(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("TILTCTL_OUT", raising=False)
    d1 = fake_run(str(tmp_path / "a"), "lem", "lemniscate", "proposed", 0, 0.02)
    d2 = fake_run(str(tmp_path / "b"), "lem", "lemniscate", "baseline", 0, 0.05)
    out = tmp_path / "cmp"
    assert main(["compare", d1, d2, "--out", str(out)]) == 0
    assert (out / "comparison.json").exists()
    assert (out / "comparison.txt").exists()


def test_estimated_measurement_smoke(gains, params):
    """Closed loop on estimated feedback stays bounded on a short hover."""
    sc = Scenario(kind="hover_step", duration=1.0, p_offset=[0.1, 0.0, 0.0],
                  measurement="estimated", accel_noise=0.02, gyro_noise=0.005,
                  seed=1)
    rows, report = run_scenario(sc, gains, params)
    assert not report.diverged
    assert np.linalg.norm(rows[-1, 1:4] - [0.0, 0.0, sc.height]) < 0.1
