"""Ground-truth plant: rigid body + first-order actuators, RK4 fixed step.

The simulator owns the *true* actuator time constants, which may differ
from the controller's nominal ones (SimConfig.alpha_f_true / alpha_theta_true).
An optional tethered payload reproduces the impulsive-disturbance scenario:
a point mass rests on a table until the vehicle's attach point crosses the
table edge, then falls until the string snaps taut (unilateral spring-damper).
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import cross3, exp_so3, project_to_so3
from .vehicle import channel_from_actuators, ActuatorState

GRAVITY = 9.81


class DivergedError(RuntimeError):
    pass


@dataclass
class RigidState:
    p: np.ndarray
    v: np.ndarray
    R: np.ndarray
    omega: np.ndarray  # body frame

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        self.omega = np.asarray(self.omega, dtype=float)

    def copy(self):
        return RigidState(self.p.copy(), self.v.copy(), self.R.copy(), self.omega.copy())

    @classmethod
    def hover(cls, p=(0.0, 0.0, 0.0)):
        return cls(np.asarray(p, float), np.zeros(3), np.eye(3), np.zeros(3))


@dataclass
class TetherConfig:
    mass: float = 0.21            # kg
    length: float = 0.8           # m
    attach: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.12, -0.05]))
    stiffness: float = 400.0      # N/m
    damping: float = 5.0          # N s/m
    table_height: float = 0.55    # m
    table_edge_x: float = 0.35    # m
    payload_start: np.ndarray = None  # default: below the attach point at table height

    def __post_init__(self):
        self.attach = np.asarray(self.attach, dtype=float)
        if self.payload_start is not None:
            self.payload_start = np.asarray(self.payload_start, dtype=float)


@dataclass
class TetherState:
    pos: np.ndarray
    vel: np.ndarray
    dropped: bool = False

    def copy(self):
        return TetherState(self.pos.copy(), self.vel.copy(), self.dropped)


@dataclass
class DisturbanceProfile:
    delta_p: np.ndarray = field(default_factory=lambda: np.zeros(3))  # m/s^2
    delta_R: np.ndarray = field(default_factory=lambda: np.zeros(3))  # rad/s^2
    tether: Optional[TetherConfig] = None

    def __post_init__(self):
        self.delta_p = np.asarray(self.delta_p, dtype=float)
        self.delta_R = np.asarray(self.delta_R, dtype=float)


@dataclass
class SimConfig:
    dt_physics: float = 1e-3
    dt_ctrl_pos: float = 1e-2
    dt_ctrl_att: float = 5e-3
    duration: float = 10.0
    alpha_f_true: Optional[float] = None      # None -> use controller nominal
    alpha_theta_true: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if not (self.dt_physics <= self.dt_ctrl_att <= self.dt_ctrl_pos):
            raise ValueError("need dt_physics <= dt_ctrl_att <= dt_ctrl_pos")

    def true_alphas(self, params):
        af = self.alpha_f_true if self.alpha_f_true is not None else params.alpha_f
        at = self.alpha_theta_true if self.alpha_theta_true is not None else params.alpha_theta
        return af, at


def rigid_derivative(x, s, d, params, extra_force_world=None, extra_torque_body=None):
    """Continuous-time rates (p_dot, v_dot, omega_dot) of the rigid body."""
    u = channel_from_actuators(s)
    mu = params.B @ u
    f_body, tau = mu[:3], mu[3:]
    v_dot = x.R @ f_body / params.m - np.array([0.0, 0.0, params.g]) + d.delta_p
    if extra_force_world is not None:
        v_dot = v_dot + extra_force_world / params.m
    if extra_torque_body is not None:
        tau = tau + extra_torque_body
    omega_dot = params.J_inv @ (-cross3(x.omega, params.J @ x.omega) + tau) + d.delta_R
    return x.v.copy(), v_dot, omega_dot


def actuator_derivative(s, cmd, params, alpha_f=None, alpha_theta=None):
    """First-order lag toward the commanded thrusts and tilt angles."""
    af = params.alpha_f if alpha_f is None else alpha_f
    at = params.alpha_theta if alpha_theta is None else alpha_theta
    return (cmd.f_c - s.f) / af, (cmd.theta_c - s.theta) / at


def tether_wrench(x, tstate, tcfg):
    """World-frame string force on the vehicle, body torque, and payload force.

    Returns (force_world_on_drone, torque_body_on_drone, force_world_on_payload).
    Zero while the string is slack or the payload still rests on the table.
    """
    zero = np.zeros(3)
    attach_world = x.p + x.R @ tcfg.attach
    if not tstate.dropped:
        return zero, zero, zero
    rel = tstate.pos - attach_world
    dist = np.linalg.norm(rel)
    if dist <= tcfg.length or dist < 1e-9:
        return zero, zero, zero
    direction = rel / dist
    attach_vel = x.v + x.R @ cross3(x.omega, tcfg.attach)
    ddist = direction @ (tstate.vel - attach_vel)
    tension = tcfg.stiffness * (dist - tcfg.length) + tcfg.damping * max(0.0, ddist)
    tension = max(0.0, tension)
    force_on_drone = tension * direction
    torque_body = cross3(tcfg.attach, x.R.T @ force_on_drone)
    return force_on_drone, torque_body, -force_on_drone


def init_tether_state(x0, tcfg):
    if tcfg.payload_start is not None:
        pos = tcfg.payload_start.copy()
    else:
        attach_world = x0.p + x0.R @ tcfg.attach
        pos = np.array([attach_world[0], attach_world[1], tcfg.table_height])
    return TetherState(pos, np.zeros(3), dropped=False)


def step(x, s, cmd, d, params, cfg, tether_state=None):
    """One classical RK4 step of dt_physics with zero-order-hold command.

    The rotation matrix advances by exp_so3 of the RK4-averaged body rate and
    is re-orthonormalized.  Raises DivergedError on non-finite state.
    """
    h = cfg.dt_physics
    af, at = cfg.true_alphas(params)
    tcfg = d.tether
    has_payload = tcfg is not None and tether_state is not None

    if has_payload and not tether_state.dropped:
        attach_world = x.p + x.R @ tcfg.attach
        if attach_world[0] > tcfg.table_edge_x:
            tether_state = tether_state.copy()
            tether_state.dropped = True

    n = params.n
    B = params.B
    grav = np.array([0.0, 0.0, params.g])
    R0 = x.R

    def deriv(y, t_off):
        p = y[0:3]
        v = y[3:6]
        w = y[6:9]
        f = y[9:9 + n]
        th = y[9 + n:9 + 2 * n]
        R = R0 if t_off == 0.0 else R0 @ exp_so3(x.omega, t_off)
        u = np.empty(2 * n)
        u[0::2] = f * np.cos(th)
        u[1::2] = f * np.sin(th)
        mu = B @ u
        tau = mu[3:]
        f_ext = np.zeros(3)
        dy = np.empty_like(y)
        if has_payload and tether_state.dropped:
            xs = RigidState(p, v, R, w)
            ts = TetherState(y[9 + 2 * n:12 + 2 * n], y[12 + 2 * n:15 + 2 * n], True)
            f_ext, tau_t, f_pay = tether_wrench(xs, ts, tcfg)
            tau = tau + tau_t
            dy[9 + 2 * n:12 + 2 * n] = ts.vel
            dy[12 + 2 * n:15 + 2 * n] = -grav + f_pay / tcfg.mass
        dy[0:3] = v
        dy[3:6] = R @ mu[:3] / params.m - grav + d.delta_p + f_ext / params.m
        dy[6:9] = params.J_inv @ (-cross3(w, params.J @ w) + tau) + d.delta_R
        dy[9:9 + n] = (cmd.f_c - f) / af
        dy[9 + n:9 + 2 * n] = (cmd.theta_c - th) / at
        return dy

    parts = [x.p, x.v, x.omega, s.f, s.theta]
    if has_payload and tether_state.dropped:
        parts += [tether_state.pos, tether_state.vel]
    elif has_payload:
        pass  # payload static on the table; not integrated
    y0 = np.concatenate(parts)

    k1 = deriv(y0, 0.0)
    k2 = deriv(y0 + 0.5 * h * k1, 0.5 * h)
    k3 = deriv(y0 + 0.5 * h * k2, 0.5 * h)
    k4 = deriv(y0 + h * k3, h)
    y1 = y0 + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    # RK4-averaged body rate for the rotation update
    w_bar = (y0[6:9] + 2 * (y0[6:9] + 0.5 * h * k1[6:9]) + 2 * (y0[6:9] + 0.5 * h * k2[6:9])
             + (y0[6:9] + h * k3[6:9])) / 6.0

    if not np.all(np.isfinite(y1)):
        raise DivergedError("non-finite state")

    R1 = project_to_so3(R0 @ exp_so3(w_bar, h))
    x1 = RigidState(y1[0:3], y1[3:6], R1, y1[6:9])
    s1 = ActuatorState(y1[9:9 + n], y1[9 + n:9 + 2 * n])
    ts1 = tether_state
    if has_payload and tether_state.dropped:
        ts1 = TetherState(y1[9 + 2 * n:12 + 2 * n], y1[12 + 2 * n:15 + 2 * n], True)
    return x1, s1, ts1
