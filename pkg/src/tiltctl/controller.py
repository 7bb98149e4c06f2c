"""Geometric PID wrench law plus the actuator-level backstepping law.

Two controllers share the nominal wrench law:

* BackstepController closes the loop through the actuator dynamics: it
  commands thrust/tilt so that the wrench error e_mu = mu - mu_d decays at
  rate k_mu while the rigid-body errors follow the nominal design.
* BaselineController allocates mu_d straight to thrust/tilt commands and
  ignores the actuator state entirely.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import cross3, hat, sat, rotation_error
from .vehicle import (ActuatorCommand, actuators_from_channel, apply_eta_inverse,
                      channel_from_actuators, clamp_command, zeta)

E3 = np.array([0.0, 0.0, 1.0])


@dataclass
class Reference:
    """Desired trajectory sample. Derivative fields default to zero."""

    p_d: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v_d: np.ndarray = field(default_factory=lambda: np.zeros(3))
    a_d: np.ndarray = field(default_factory=lambda: np.zeros(3))       # dv_d/dt
    j_d: np.ndarray = field(default_factory=lambda: np.zeros(3))       # d2v_d/dt2
    R_d: np.ndarray = field(default_factory=lambda: np.eye(3))
    omega_d: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega_dot_d: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega_ddot_d: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("p_d", "v_d", "a_d", "j_d", "omega_d", "omega_dot_d", "omega_ddot_d"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        self.R_d = np.asarray(self.R_d, dtype=float)


@dataclass
class Gains:
    k_tp: float = 4.0
    k_td: float = 4.0
    k_ti: float = 4.0
    k_rp: float = 8.0
    k_rd: float = 1.0
    k_ri: float = 0.2
    c1: float = 1.5
    c2: float = 0.3
    sigma1: float = 0.5
    sigma2: float = 0.5
    k_mu: float = 10.0
    # reference bounds used only by the robustness certification
    a_v: float = 5.0
    a_omega: float = 4.0
    a_omega_dot: float = 30.0

    def __post_init__(self):
        for name in ("k_tp", "k_td", "k_ti", "k_rp", "k_rd", "k_ri",
                     "c1", "c2", "sigma1", "sigma2", "k_mu"):
            if getattr(self, name) <= 0:
                raise ValueError(f"gain {name} must be positive")


@dataclass
class ErrorState:
    e_p: np.ndarray
    e_v: np.ndarray
    e_R: np.ndarray
    e_omega: np.ndarray
    e_pi: np.ndarray = field(default_factory=lambda: np.zeros(3))
    e_ri: np.ndarray = field(default_factory=lambda: np.zeros(3))
    e_mu: np.ndarray = field(default_factory=lambda: np.zeros(6))


@dataclass
class Measurement:
    """What the wrench loop sees: the body wrench plus acceleration estimates.

    In estimation mode these come from the inverse-dynamics estimator and are
    biased by the constant disturbances; in perfect-measurement mode they are
    built from plant truth with the same bias so that the backstepping algebra
    stays exact.
    """

    mu: np.ndarray          # 6-vector used for e_mu
    v_dot: np.ndarray       # world-frame linear acceleration
    omega_dot: np.ndarray   # body-frame angular acceleration


def compute_errors(x, ref):
    e_p = x.p - ref.p_d
    e_v = x.v - ref.v_d
    e_R = rotation_error(x.R, ref.R_d)
    e_w = x.omega - x.R.T @ ref.R_d @ ref.omega_d
    return e_p, e_v, e_R, e_w


def integral_rates(e, gains, params):
    """Rates of the two integral error states.

    The attitude rate uses the inertia-weighted combination c2 J^-1 e_R --
    the same one kappa couples to e_mu -- so the saturated integral term
    cancels a constant angular-acceleration disturbance exactly in the
    Lyapunov analysis (the integral settles at J delta_R / k_ri).
    """
    return (e.e_v + gains.c1 * e.e_p,
            e.e_omega + gains.c2 * (params.J_inv @ e.e_R))


def nominal_wrench(e, x, ref, gains, params):
    """Desired wrench mu_d of the geometric PID motion controller."""
    s1 = (-gains.k_tp * e.e_p - gains.k_td * e.e_v
          - gains.k_ti * sat(e.e_pi, gains.sigma1)
          + params.g * E3 + ref.a_d)
    mu1 = params.m * (x.R.T @ s1)
    Q = x.R.T @ ref.R_d
    mu2 = (cross3(x.omega, params.J @ x.omega)
           - params.J @ (hat(x.omega) @ Q @ ref.omega_d - Q @ ref.omega_dot_d)
           - gains.k_rp * e.e_R - gains.k_rd * e.e_omega
           - gains.k_ri * sat(e.e_ri, gains.sigma2))
    return np.concatenate([mu1, mu2])


def kappa(e, x, gains, params):
    """Cross term feeding the rigid-body errors into the wrench loop."""
    top = (gains.c1 / params.m) * (x.R.T @ e.e_p) + (x.R.T @ e.e_v) / params.m
    bot = gains.c2 * (params.J_inv @ e.e_R) + e.e_omega
    return np.concatenate([top, bot])


def rotation_error_rate(R, R_d, e_omega):
    """d/dt of the attitude error vector."""
    Q = R.T @ R_d
    return 0.5 * (np.trace(Q) * np.eye(3) - Q) @ e_omega


def mu_d_dot_analytic(e, x, ref, gains, params, v_dot, omega_dot):
    """Termwise time derivative of the nominal wrench.

    Needs the current linear/angular acceleration (from measurement or plant
    truth) and the reference's jerk and omega_ddot feedforward, which default
    to zero when a scenario cannot supply them.
    """
    R, w = x.R, x.omega
    J, J_inv = params.J, params.J_inv

    s1 = (-gains.k_tp * e.e_p - gains.k_td * e.e_v
          - gains.k_ti * sat(e.e_pi, gains.sigma1)
          + params.g * E3 + ref.a_d)
    mask1 = (np.abs(e.e_pi) < gains.sigma1).astype(float)
    e_pi_dot, e_ri_dot = integral_rates(e, gains, params)
    s1_dot = (-gains.k_tp * e.e_v - gains.k_td * (v_dot - ref.a_d)
              - gains.k_ti * mask1 * e_pi_dot + ref.j_d)
    mu1_dot = params.m * (-hat(w) @ (R.T @ s1) + R.T @ s1_dot)

    Q = R.T @ ref.R_d
    Q_dot = -hat(w) @ Q + Q @ hat(ref.omega_d)
    gyro_dot = cross3(omega_dot, J @ w) + cross3(w, J @ omega_dot)
    ff_dot = -J @ (hat(omega_dot) @ Q @ ref.omega_d
                   + hat(w) @ (Q_dot @ ref.omega_d + Q @ ref.omega_dot_d)
                   - Q_dot @ ref.omega_dot_d - Q @ ref.omega_ddot_d)
    e_R_dot = rotation_error_rate(R, ref.R_d, e.e_omega)
    e_w_dot = omega_dot - (Q_dot @ ref.omega_d + Q @ ref.omega_dot_d)
    mask2 = (np.abs(e.e_ri) < gains.sigma2).astype(float)
    mu2_dot = (gyro_dot + ff_dot - gains.k_rp * e_R_dot - gains.k_rd * e_w_dot
               - gains.k_ri * mask2 * e_ri_dot)
    return np.concatenate([mu1_dot, mu2_dot])


class MuDotSmoother:
    """Backward difference of mu_d passed through a first-order smoother."""

    def __init__(self, tau_factor=2.0):
        self.tau_factor = tau_factor
        self.prev_mu_d = None
        self.y = np.zeros(6)

    def reset(self):
        self.prev_mu_d = None
        self.y = np.zeros(6)

    def update(self, mu_d, dt):
        if self.prev_mu_d is None:
            self.prev_mu_d = mu_d.copy()
            self.y = np.zeros(6)
            return self.y.copy()
        raw = (mu_d - self.prev_mu_d) / dt
        self.prev_mu_d = mu_d.copy()
        tau = self.tau_factor * dt
        self.y = self.y + (dt / (tau + dt)) * (raw - self.y)
        return self.y.copy()


def backstepping_command(e, x, s, ref, gains, params, mu_d_dot):
    """Actuator command of the backstepping law, clamped to the envelope.

    zeta/eta are evaluated with the controller's *nominal* time constants.
    """
    u = channel_from_actuators(s)
    kap = kappa(e, x, gains, params)
    v = mu_d_dot - params.B @ zeta(u, params) - gains.k_mu * e.e_mu - kap
    u_dot_cmd = params.B_pinv @ v
    raw = apply_eta_inverse(u, u_dot_cmd, params)
    return clamp_command(raw[0::2], raw[1::2], params)


def baseline_command(e, x, ref, gains, params):
    """Geometric-allocation baseline: mu_d through the pseudo-inverse,
    commanded directly, with no actuator-state feedback."""
    mu_d = nominal_wrench(e, x, ref, gains, params)
    u_raw = params.B_pinv @ mu_d
    state = actuators_from_channel(u_raw, f_min=0.0)
    return clamp_command(state.f, state.theta, params)


class _IntegralTracker:
    """Trapezoidal accumulation of the two integral error states."""

    def __init__(self):
        self.e_pi = np.zeros(3)
        self.e_ri = np.zeros(3)
        self._prev = None

    def update(self, e_pi_dot, e_ri_dot, dt):
        if self._prev is not None:
            p_prev, r_prev = self._prev
            self.e_pi = self.e_pi + 0.5 * dt * (p_prev + e_pi_dot)
            self.e_ri = self.e_ri + 0.5 * dt * (r_prev + e_ri_dot)
        self._prev = (e_pi_dot.copy(), e_ri_dot.copy())


def update_integrals(e, gains, params, dt, tracker):
    """Advance the integral states of an ErrorState through a tracker."""
    e_pi_dot, e_ri_dot = integral_rates(e, gains, params)
    tracker.update(e_pi_dot, e_ri_dot, dt)
    e.e_pi = tracker.e_pi.copy()
    e.e_ri = tracker.e_ri.copy()
    return e


class BackstepController:
    """Stateful closed-loop controller (integrals + mu_d_dot history).

    mu_d_dot_mode: 'analytic' (default) differentiates the wrench law termwise;
    'numeric' falls back to a smoothed backward difference.
    """

    def __init__(self, gains, params, mu_d_dot_mode="analytic"):
        if mu_d_dot_mode not in ("analytic", "numeric"):
            raise ValueError(f"unknown mu_d_dot mode {mu_d_dot_mode!r}")
        self.gains = gains
        self.params = params
        self.mode = mu_d_dot_mode
        self.integrals = _IntegralTracker()
        self.smoother = MuDotSmoother()

    def reset(self):
        self.integrals = _IntegralTracker()
        self.smoother.reset()

    def update(self, x, s, meas, ref, dt):
        g, p = self.gains, self.params
        e_p, e_v, e_R, e_w = compute_errors(x, ref)
        e = ErrorState(e_p, e_v, e_R, e_w)
        update_integrals(e, g, p, dt, self.integrals)
        mu_d = nominal_wrench(e, x, ref, g, p)
        e.e_mu = meas.mu - mu_d
        if self.mode == "analytic":
            mdd = mu_d_dot_analytic(e, x, ref, g, p, meas.v_dot, meas.omega_dot)
            self.smoother.update(mu_d, dt)  # keep history warm for mode switches
        else:
            mdd = self.smoother.update(mu_d, dt)
        cmd = backstepping_command(e, x, s, ref, g, p, mdd)
        diag = {"mu_d": mu_d, "mu_d_dot": mdd, "e_mu": e.e_mu,
                "kappa": kappa(e, x, g, p), "errors": e,
                "saturated": cmd.saturated}
        return cmd, diag


class BaselineController:
    """Same motion law, no actuator-dynamics compensation."""

    def __init__(self, gains, params):
        self.gains = gains
        self.params = params
        self.integrals = _IntegralTracker()

    def reset(self):
        self.integrals = _IntegralTracker()

    def update(self, x, s, meas, ref, dt):
        g, p = self.gains, self.params
        e_p, e_v, e_R, e_w = compute_errors(x, ref)
        e = ErrorState(e_p, e_v, e_R, e_w)
        update_integrals(e, g, p, dt, self.integrals)
        mu_d = nominal_wrench(e, x, ref, g, p)
        e.e_mu = meas.mu - mu_d
        cmd = baseline_command(e, x, ref, g, p)
        diag = {"mu_d": mu_d, "mu_d_dot": np.zeros(6), "e_mu": e.e_mu,
                "kappa": kappa(e, x, g, p), "errors": e,
                "saturated": cmd.saturated}
        return cmd, diag
