"""Experiment harness: scenario configs, closed-loop runner, metrics, tables.

A scenario is one TOML file.  Running it produces a telemetry CSV (one row
per physics tick, fixed column order in the header comment) and a metrics
JSON; compare_controllers then merges several run directories into a
side-by-side table.
"""

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .controller import (BackstepController, BaselineController, Gains,
                         Measurement, Reference, compute_errors, ErrorState,
                         nominal_wrench)
from .geometry import exp_so3, rot_x, rotation_error
from .simulation import (DisturbanceProfile, DivergedError, RigidState,
                         SimConfig, TetherConfig, init_tether_state,
                         rigid_derivative, step, tether_wrench)
from .stability import lyapunov_V
from .vehicle import ActuatorState, VehicleParams, channel_from_actuators
from .estimation import WrenchEstimator

DIVERGENCE_RADIUS = 5.0  # m


class ConfigError(ValueError):
    pass


@dataclass
class Scenario:
    """Everything needed to reproduce one run, minus the controller gains."""

    kind: str = "hover_step"
    name: str = ""
    duration: float = 10.0
    settle_time: float = 0.0
    seed: int = 0
    # lemniscate
    speed: float = 0.8          # target mean path speed, m/s
    amp_x: float = 0.4
    amp_y: float = 0.3
    height: float = 1.2
    # roll oscillation
    roll_amp_deg: float = 50.0
    roll_freq: float = 0.5      # Hz
    # tether / lateral translation
    travel: float = 1.0
    lateral_speed: float = 0.4  # cruise speed, m/s
    ramp_time: float = 0.5      # s, smooth velocity ramps (keeps the ref C^2)
    move_start: float = 1.0     # s
    tether: TetherConfig = None
    # hover step initial offset
    p_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    att_axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    att_angle: float = 0.0      # rad
    init_jitter: float = 0.0    # std of seed-dependent initial p/v perturbation
    # plant-vs-controller mismatch and external disturbance
    alpha_f_true: float = None
    alpha_theta_true: float = None
    delta_p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    delta_R: np.ndarray = field(default_factory=lambda: np.zeros(3))
    # measurement
    measurement: str = "perfect"      # or "estimated"
    accel_noise: float = 0.0
    gyro_noise: float = 0.0
    # controller
    mu_d_dot_mode: str = "analytic"
    # timing
    dt_physics: float = 1e-3
    dt_ctrl_att: float = 5e-3
    dt_ctrl_pos: float = 1e-2
    # cached lemniscate frequency (rad/s), solved once
    _omega: float = None

    def __post_init__(self):
        self.p_offset = np.asarray(self.p_offset, float)
        self.att_axis = np.asarray(self.att_axis, float)
        self.delta_p = np.asarray(self.delta_p, float)
        self.delta_R = np.asarray(self.delta_R, float)
        if self.kind not in ("lemniscate", "roll_oscillation", "tether_drop",
                             "hover_step", "custom"):
            raise ConfigError(f"unknown scenario kind {self.kind!r}")
        if self.measurement not in ("perfect", "estimated"):
            raise ConfigError(f"unknown measurement mode {self.measurement!r}")
        if self.kind == "lemniscate":
            self._omega = solve_lemniscate_omega(self.speed, self.amp_x, self.amp_y)
        if self.kind == "tether_drop" and self.tether is None:
            self.tether = TetherConfig()
        if not self.name:
            self.name = self.kind


def solve_lemniscate_omega(speed, amp_x, amp_y, n_quad=4000):
    """Angular frequency for which the mean path speed equals the target.

    The figure-eight (amp_x sin wt, amp_y sin 2wt) has arc length per period
    independent of w, so mean speed is linear in w: w = 2 pi v / S1 where S1
    is the arc length at w = 1 (numerically integrated).
    """
    if speed <= 0:
        raise ConfigError("lemniscate speed must be positive")
    s = np.linspace(0.0, 2.0 * np.pi, n_quad)
    ds = np.hypot(amp_x * np.cos(s), 2.0 * amp_y * np.cos(2.0 * s))
    S1 = np.trapezoid(ds, s)
    return 2.0 * np.pi * speed / S1


def _translation_profile(t, sc):
    """C^2 lateral move: cosine velocity ramps around a constant-speed cruise.

    Returns x, x_dot, x_ddot, x_dddot for the commanded x displacement.
    """
    v, tr = sc.lateral_speed, sc.ramp_time
    cruise = sc.travel / v - tr            # ramps each contribute v*tr/2
    if cruise < 0:
        raise ConfigError("travel too short for the configured ramps")
    tau = t - sc.move_start
    w = np.pi / tr
    if tau <= 0:
        return 0.0, 0.0, 0.0, 0.0
    if tau < tr:  # ramp up: xd = v/2 (1 - cos(w tau))
        x = 0.5 * v * (tau - np.sin(w * tau) / w)
        return x, 0.5 * v * (1 - np.cos(w * tau)), 0.5 * v * w * np.sin(w * tau), \
            0.5 * v * w * w * np.cos(w * tau)
    x_ramp = 0.5 * v * tr
    tau -= tr
    if tau < cruise:
        return x_ramp + v * tau, v, 0.0, 0.0
    tau -= cruise
    if tau < tr:  # ramp down
        x = x_ramp + v * cruise + 0.5 * v * (tau + np.sin(w * tau) / w)
        return x, 0.5 * v * (1 + np.cos(w * tau)), -0.5 * v * w * np.sin(w * tau), \
            -0.5 * v * w * w * np.cos(w * tau)
    return sc.travel, 0.0, 0.0, 0.0


def make_reference(sc, t):
    """Closed-form reference (position, attitude, and their derivatives)."""
    if sc.kind == "lemniscate":
        w = sc._omega
        ax, ay, h = sc.amp_x, sc.amp_y, sc.height
        p = np.array([ax * np.sin(w * t), ay * np.sin(2 * w * t), h])
        v = np.array([ax * w * np.cos(w * t), 2 * ay * w * np.cos(2 * w * t), 0.0])
        a = np.array([-ax * w ** 2 * np.sin(w * t), -4 * ay * w ** 2 * np.sin(2 * w * t), 0.0])
        j = np.array([-ax * w ** 3 * np.cos(w * t), -8 * ay * w ** 3 * np.cos(2 * w * t), 0.0])
        return Reference(p_d=p, v_d=v, a_d=a, j_d=j)
    if sc.kind == "roll_oscillation":
        A = np.deg2rad(sc.roll_amp_deg)
        w = 2.0 * np.pi * sc.roll_freq
        phi = A * np.sin(w * t)
        phid = A * w * np.cos(w * t)
        phidd = -A * w ** 2 * np.sin(w * t)
        phiddd = -A * w ** 3 * np.cos(w * t)
        e1 = np.array([1.0, 0.0, 0.0])
        return Reference(p_d=np.array([0.0, 0.0, sc.height]),
                         R_d=rot_x(phi), omega_d=phid * e1,
                         omega_dot_d=phidd * e1, omega_ddot_d=phiddd * e1)
    if sc.kind == "tether_drop":
        x, xd, xdd, xddd = _translation_profile(t, sc)
        return Reference(p_d=np.array([x, 0.0, sc.height]),
                         v_d=np.array([xd, 0.0, 0.0]),
                         a_d=np.array([xdd, 0.0, 0.0]),
                         j_d=np.array([xddd, 0.0, 0.0]))
    # hover_step / custom: constant hover reference
    return Reference(p_d=np.array([0.0, 0.0, sc.height]))


def precheck_feasibility(sc, params, n_samples=400):
    """Reject references whose thrust demand exceeds the hardware envelope."""
    ts = np.linspace(0.0, sc.duration, n_samples)
    worst = 0.0
    for t in ts:
        ref = make_reference(sc, t)
        worst = max(worst, params.m * np.linalg.norm(
            ref.a_d + np.array([0.0, 0.0, params.g])))
    if worst > 0.9 * params.n * params.f_max_hw:
        raise ConfigError(
            f"reference demands {worst:.1f} N, beyond the rotor envelope")


@dataclass
class MetricsReport:
    pos_rmse: float
    rot_rmse: float
    diverged: bool
    sat_duty: float
    worst_margin: float
    decay_rate: float = None
    recovery_time: float = None
    drop_time: float = None
    final_time: float = 0.0
    final_e_pi: list = None
    final_e_ri: list = None

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


TELEMETRY_PREFIX = ["t", "p_x", "p_y", "p_z", "v_x", "v_y", "v_z",
                    "R_11", "R_12", "R_13", "R_21", "R_22", "R_23",
                    "R_31", "R_32", "R_33", "w_x", "w_y", "w_z"]


def telemetry_columns(n):
    cols = list(TELEMETRY_PREFIX)
    cols += [f"f_{i+1}" for i in range(n)]
    cols += [f"theta_{i+1}" for i in range(n)]
    for i in range(n):
        cols += [f"fc_{i+1}", f"thc_{i+1}"]
    cols += [f"mu_{i+1}" for i in range(6)]
    cols += [f"mud_{i+1}" for i in range(6)]
    cols += [f"emu_{i+1}" for i in range(6)]
    cols += ["V", "sat_flag"]
    return cols


def _initial_state(sc, rng):
    ref0 = make_reference(sc, 0.0)
    p = ref0.p_d + sc.p_offset
    v = np.zeros(3)
    if sc.init_jitter > 0:
        p = p + rng.normal(scale=sc.init_jitter, size=3)
        v = v + rng.normal(scale=sc.init_jitter, size=3)
    R = exp_so3(sc.att_axis / np.linalg.norm(sc.att_axis) * sc.att_angle) \
        if sc.att_angle else np.eye(3)
    return RigidState(p, v, R, np.zeros(3))


def run_scenario(sc, gains, params, controller="proposed", out_dir=None, seed=None):
    """Run one closed-loop scenario; returns (telemetry array, MetricsReport).

    Telemetry has one row per physics tick with the pinned column order
    (see telemetry_columns).  Deterministic per seed; if out_dir is given,
    telemetry.csv, metrics.json and meta.json are written there.
    """
    if seed is None:
        seed = sc.seed
    precheck_feasibility(sc, params)
    cfg = SimConfig(dt_physics=sc.dt_physics, dt_ctrl_pos=sc.dt_ctrl_pos,
                    dt_ctrl_att=sc.dt_ctrl_att, duration=sc.duration,
                    alpha_f_true=sc.alpha_f_true,
                    alpha_theta_true=sc.alpha_theta_true, seed=seed)
    rng = np.random.default_rng(seed)
    x = _initial_state(sc, rng)
    s = ActuatorState(np.full(params.n, params.hover_thrust()), np.zeros(params.n))
    tether = sc.tether if sc.kind == "tether_drop" else None
    d = DisturbanceProfile(sc.delta_p, sc.delta_R, tether)
    tstate = init_tether_state(x, tether) if tether is not None else None

    if controller == "proposed":
        ctrl = BackstepController(gains, params, mu_d_dot_mode=sc.mu_d_dot_mode)
    elif controller == "baseline":
        ctrl = BaselineController(gains, params)
    else:
        raise ConfigError(f"unknown controller {controller!r}")

    estimator = None
    if sc.measurement == "estimated":
        estimator = WrenchEstimator(params, accel_noise=sc.accel_noise,
                                    gyro_noise=sc.gyro_noise, rng=rng)

    n_steps = int(round(sc.duration / sc.dt_physics))
    n_att = int(round(sc.dt_ctrl_att / sc.dt_physics))
    n_pos = int(round(sc.dt_ctrl_pos / sc.dt_physics))
    n = params.n
    rows = np.empty((n_steps, 39 + 4 * n))
    diverged = False
    cmd = None
    ref = make_reference(sc, 0.0)
    pos_ref = ref
    # online metric accumulators (200 Hz, post-settle)
    sq_p = np.zeros(3)
    sq_R = np.zeros(3)
    n_metric = 0
    sat_ticks = 0
    ctrl_ticks = 0
    drop_time = None
    i = 0
    try:
        for i in range(n_steps):
            t = i * sc.dt_physics
            if i % n_pos == 0:
                pos_ref = make_reference(sc, t)
            if i % n_att == 0:
                att_ref = make_reference(sc, t)
                ref = Reference(p_d=pos_ref.p_d, v_d=pos_ref.v_d,
                                a_d=pos_ref.a_d, j_d=pos_ref.j_d,
                                R_d=att_ref.R_d, omega_d=att_ref.omega_d,
                                omega_dot_d=att_ref.omega_dot_d,
                                omega_ddot_d=att_ref.omega_ddot_d)

            # true accelerations at the current state (incl. disturbances)
            f_ext = tau_ext = None
            if tstate is not None:
                f_ext, tau_ext, _ = tether_wrench(x, tstate, d.tether)
            _, v_dot, omega_dot = rigid_derivative(x, s, d, params, f_ext, tau_ext)
            mu_true = params.B @ channel_from_actuators(s)

            if estimator is not None:
                estimator.update(x, v_dot, sc.dt_physics, t)

            if i % n_att == 0:
                if estimator is not None:
                    meas = Measurement(estimator.latest, estimator.latest_v_dot,
                                       estimator.latest_omega_dot)
                else:
                    meas = Measurement(mu_true, v_dot, omega_dot)
                cmd, diag = ctrl.update(x, s, meas, ref, sc.dt_ctrl_att)
                ctrl_ticks += 1
                sat_ticks += int(diag["saturated"])
                if t >= sc.settle_time:
                    e = diag["errors"]
                    sq_p += e.e_p ** 2
                    sq_R += e.e_R ** 2
                    n_metric += 1

            # logging: fresh errors against the held reference
            e_p, e_v, e_R, e_w = compute_errors(x, ref)
            e_log = ErrorState(e_p, e_v, e_R, e_w,
                               ctrl.integrals.e_pi, ctrl.integrals.e_ri)
            mu_d_log = nominal_wrench(e_log, x, ref, gains, params)
            e_log.e_mu = mu_true - mu_d_log
            V, _, _, _ = lyapunov_V(e_log, x, gains, params, R_d=ref.R_d,
                                    delta_p=sc.delta_p, delta_R=sc.delta_R)
            row = rows[i]
            row[0] = t
            row[1:4] = x.p
            row[4:7] = x.v
            row[7:16] = x.R.reshape(-1)
            row[16:19] = x.omega
            row[19:19 + n] = s.f
            row[19 + n:19 + 2 * n] = s.theta
            row[19 + 2 * n:19 + 4 * n] = cmd.u_c
            row[19 + 4 * n:25 + 4 * n] = mu_true
            row[25 + 4 * n:31 + 4 * n] = mu_d_log
            row[31 + 4 * n:37 + 4 * n] = e_log.e_mu
            row[37 + 4 * n] = V
            row[38 + 4 * n] = float(cmd.saturated)

            if np.linalg.norm(e_p) > DIVERGENCE_RADIUS:
                diverged = True
                i += 1
                break
            was_dropped = tstate.dropped if tstate is not None else False
            x, s, tstate = step(x, s, cmd, d, params, cfg, tstate)
            if tstate is not None and tstate.dropped and not was_dropped:
                drop_time = t
        else:
            i = n_steps
    except DivergedError:
        diverged = True
        i += 1
    rows = rows[:i]

    pos_rmse = float(np.mean(np.sqrt(sq_p / max(n_metric, 1))))
    rot_rmse = float(np.mean(np.sqrt(sq_R / max(n_metric, 1))))
    worst_margin = _worst_margin(rows, gains, n) if rows.shape[0] > 2 else 0.0
    recovery = None
    if sc.kind == "tether_drop" and drop_time is not None and not diverged:
        recovery = recovery_time(rows, sc, drop_time)
    report = MetricsReport(pos_rmse=pos_rmse, rot_rmse=rot_rmse,
                           diverged=diverged,
                           sat_duty=sat_ticks / max(ctrl_ticks, 1),
                           worst_margin=worst_margin,
                           recovery_time=recovery, drop_time=drop_time,
                           final_time=float(rows[-1, 0]) if rows.size else 0.0,
                           final_e_pi=list(map(float, ctrl.integrals.e_pi)),
                           final_e_ri=list(map(float, ctrl.integrals.e_ri)))
    if out_dir is not None:
        write_run(out_dir, sc, controller, seed, rows, report, params)
    return rows, report


def _worst_margin(rows, gains, n):
    """Largest dV/dt + k_mu |e_mu|^2 observed (crude Lyapunov margin)."""
    t = rows[:, 0]
    V = rows[:, 37 + 4 * n]
    e_mu = rows[:, 31 + 4 * n:37 + 4 * n]
    vdot = np.gradient(V, t)
    return float(np.max(vdot + gains.k_mu * np.sum(e_mu ** 2, axis=1)))


def recovery_time(rows, sc, drop_time, threshold=0.05, hold=0.5):
    """Seconds from payload drop until ||e_R|| stays below the threshold.

    The error must remain below the threshold for `hold` seconds (or to the
    end of the run) to count as recovered.  None if it never does.
    """
    t = rows[:, 0]
    after = t >= drop_time
    eR = np.empty(rows.shape[0])
    for k in np.flatnonzero(after):
        R = rows[k, 7:16].reshape(3, 3)
        R_d = make_reference(sc, _held(t[k], sc.dt_ctrl_att)).R_d
        eR[k] = np.linalg.norm(rotation_error(R, R_d))
    idx = np.flatnonzero(after)
    dt = t[1] - t[0]
    need = int(round(hold / dt))
    below = eR[idx] < threshold
    for j in range(below.size):
        if below[j] and np.all(below[j:min(j + need, below.size)]):
            return float(t[idx[j]] - drop_time)
    return None


def _held(t, dt_hold):
    return np.floor(t / dt_hold + 1e-9) * dt_hold


def metrics_from_telemetry(rows, sc, gains, params):
    """Recompute the RMSE metrics from logged telemetry (dual-path check).

    Replicates the 200 Hz control sampling and the 100 Hz position-reference
    hold exactly, so the result matches the online accumulators bitwise up
    to CSV round-trip.
    """
    n_att = int(round(sc.dt_ctrl_att / sc.dt_physics))
    sq_p = np.zeros(3)
    sq_R = np.zeros(3)
    count = 0
    for k in range(rows.shape[0]):
        t = rows[k, 0]
        if k % n_att != 0 or t < sc.settle_time:
            continue
        pos_ref = make_reference(sc, _held(t, sc.dt_ctrl_pos))
        att_ref = make_reference(sc, t)
        e_p = rows[k, 1:4] - pos_ref.p_d
        R = rows[k, 7:16].reshape(3, 3)
        e_R = rotation_error(R, att_ref.R_d)
        sq_p += e_p ** 2
        sq_R += e_R ** 2
        count += 1
    pos = float(np.mean(np.sqrt(sq_p / max(count, 1))))
    rot = float(np.mean(np.sqrt(sq_R / max(count, 1))))
    return pos, rot


def write_run(out_dir, sc, controller, seed, rows, report, params):
    os.makedirs(out_dir, exist_ok=True)
    header = ",".join(telemetry_columns(params.n))
    np.savetxt(os.path.join(out_dir, "telemetry.csv"), rows,
               delimiter=",", fmt="%.17g", header=header)
    with open(os.path.join(out_dir, "metrics.json"), "w") as fh:
        fh.write(report.to_json())
    meta = {"scenario": sc.name, "kind": sc.kind, "controller": controller,
            "seed": int(seed), "duration": sc.duration,
            "settle_time": sc.settle_time}
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_run(run_dir):
    with open(os.path.join(run_dir, "meta.json")) as fh:
        meta = json.load(fh)
    with open(os.path.join(run_dir, "metrics.json")) as fh:
        metrics = json.load(fh)
    return meta, metrics


def compare_controllers(run_dirs):
    """Merge run directories into a side-by-side table (text + JSON dict).

    Rows are (scenario, seed) pairs; columns are one block per controller
    with RMSEs, divergence marks, and a recovery-time column when any tether
    run is present.  The better position RMSE in each row is starred.
    """
    groups = {}
    has_tether = False
    for rd in run_dirs:
        meta, metrics = load_run(rd)
        key = (meta["scenario"], meta["seed"])
        groups.setdefault(key, {})[meta["controller"]] = metrics
        has_tether = has_tether or meta["kind"] == "tether_drop"
    table = {"rows": []}
    lines = []
    hdr = f"{'scenario':20s} {'seed':>4s}"
    for c in ("proposed", "baseline"):
        hdr += f" | {c:>9s} posRMSE rotRMSE"
        if has_tether:
            hdr += " recov"
    lines.append(hdr)
    for (name, seed), ctrls in sorted(groups.items()):
        row = {"scenario": name, "seed": seed, "controllers": ctrls}
        table["rows"].append(row)
        best = None
        vals = {c: m for c, m in ctrls.items() if not m["diverged"]}
        if vals:
            best = min(vals, key=lambda c: vals[c]["pos_rmse"])
        line = f"{name:20s} {seed:4d}"
        for c in ("proposed", "baseline"):
            m = ctrls.get(c)
            if m is None:
                line += " | " + " " * 28
                continue
            if m["diverged"]:
                cell = f"{'DIVERGED':>17s} {'--':>7s}"
            else:
                star = "*" if c == best else " "
                cell = f"{star}{m['pos_rmse']:8.4f} {m['rot_rmse']:8.4f}".rjust(25)
            line += " | " + cell
            if has_tether:
                rec = m.get("recovery_time")
                line += f" {rec:5.2f}" if rec is not None else "    --"
        lines.append(line)
    return "\n".join(lines) + "\n", table


# ---------------------------------------------------------------------------
# TOML scenario loading


def _take(d, cls, **extra):
    import dataclasses
    names = {f.name for f in dataclasses.fields(cls)}
    kw = {k: v for k, v in d.items() if k in names}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kw.update(extra)
    return cls(**kw)


def load_scenario(path):
    """Parse a scenario TOML into (Scenario, Gains, VehicleParams)."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    vehicle = doc.pop("vehicle", {})
    if "J" in vehicle:
        J = vehicle["J"]
        vehicle["J"] = np.diag(J) if np.ndim(J) == 1 else np.asarray(J, float)
    gains = _take(doc.pop("gains", {}), Gains)
    params = _take(vehicle, VehicleParams)
    tether = doc.pop("tether", None)
    flat = {}
    for key, val in doc.items():
        if isinstance(val, dict):
            flat.update(val)
        else:
            flat[key] = val
    sc = _take(flat, Scenario)
    if tether is not None:
        sc.tether = _take(tether, TetherConfig)
        if sc.kind != "tether_drop":
            raise ConfigError("tether table only valid for kind = 'tether_drop'")
    return sc, gains, params
