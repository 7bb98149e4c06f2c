"""Wrench and rotor-thrust estimation from simulated inertial measurements.

The accelerometer channel carries the kinematic body-frame acceleration
(R^T p_ddot); angular acceleration is obtained by smoothed differentiation
of the gyro at the physics rate.  The reconstructed wrench is low-pass
filtered at 20 Hz before use, matching the hardware pipeline it replaces.
Constant disturbances bias the estimate by [m R^T delta_p; J delta_R] by
construction; the controller relies on exactly that bias.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ImuSample:
    lin_acc_body: np.ndarray   # R^T * (world acceleration), m/s^2
    omega: np.ndarray          # rad/s, body
    t: float

    def __post_init__(self):
        self.lin_acc_body = np.asarray(self.lin_acc_body, dtype=float)
        self.omega = np.asarray(self.omega, dtype=float)


class LowPass:
    """First-order discrete low-pass, y += a (u - y) with a = 1 - exp(-w dt).

    Exact discretization of tau y' = u - y, so the continuous 1/(2 pi f_c)
    time constant is preserved at any sample rate.
    """

    def __init__(self, cutoff_hz=20.0, size=6):
        if cutoff_hz <= 0:
            raise ValueError("cutoff must be positive")
        self.cutoff_hz = cutoff_hz
        self.y = np.zeros(size)
        self._primed = False

    def reset(self):
        self.y = np.zeros_like(self.y)
        self._primed = False

    def update(self, u, dt):
        u = np.asarray(u, dtype=float)
        if not self._primed:
            # start from the first sample to avoid a spurious initial transient
            self.y = u.copy()
            self._primed = True
            return self.y.copy()
        a = 1.0 - np.exp(-2.0 * np.pi * self.cutoff_hz * dt)
        self.y = self.y + a * (u - self.y)
        return self.y.copy()


def wrench_from_inverse_dynamics(sample, x, params, omega_dot):
    """Invert the rigid-body equations for the applied wrench.

    force = m (a_body + g R^T e3), torque = J omega_dot + omega x J omega.
    Constant disturbances end up inside the estimate.
    """
    g_body = params.g * (x.R.T @ np.array([0.0, 0.0, 1.0]))
    f_est = params.m * (sample.lin_acc_body + g_body)
    tau_est = params.J @ omega_dot + np.cross(sample.omega, params.J @ sample.omega)
    return np.concatenate([f_est, tau_est])


def rotor_thrusts_from_wrench(mu_est, params):
    """Per-rotor thrust magnitudes and the channel vector B^+ mu_est."""
    u_est = params.B_pinv @ np.asarray(mu_est, dtype=float)
    f_est = np.hypot(u_est[0::2], u_est[1::2])
    return f_est, u_est


class WrenchEstimator:
    """Full pipeline: gyro differentiation, inverse dynamics, 20 Hz low-pass.

    Runs at the physics rate; `latest` always holds the filtered wrench.
    Optional Gaussian noise (per-channel std) makes runs seed-dependent.
    """

    def __init__(self, params, cutoff_hz=20.0, accel_noise=0.0, gyro_noise=0.0,
                 rng=None, deriv_smoothing=2.0):
        self.params = params
        self.filter = LowPass(cutoff_hz, size=6)
        self.accel_noise = accel_noise
        self.gyro_noise = gyro_noise
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.deriv_smoothing = deriv_smoothing
        self._prev_omega = None
        self._omega_dot = np.zeros(3)
        self.latest = np.zeros(6)
        self.latest_omega_dot = np.zeros(3)

    def reset(self):
        self.filter.reset()
        self._prev_omega = None
        self._omega_dot = np.zeros(3)
        self.latest = np.zeros(6)
        self.latest_omega_dot = np.zeros(3)

    def update(self, x, true_accel_world, dt, t):
        acc_body = x.R.T @ true_accel_world
        omega = x.omega.copy()
        if self.accel_noise > 0:
            acc_body = acc_body + self.rng.normal(scale=self.accel_noise, size=3)
        if self.gyro_noise > 0:
            omega = omega + self.rng.normal(scale=self.gyro_noise, size=3)
        sample = ImuSample(acc_body, omega, t)
        if self._prev_omega is None:
            raw_dot = np.zeros(3)
        else:
            raw_dot = (omega - self._prev_omega) / dt
        self._prev_omega = omega
        tau_s = self.deriv_smoothing * dt
        self._omega_dot = self._omega_dot + (dt / (tau_s + dt)) * (raw_dot - self._omega_dot)
        mu_raw = wrench_from_inverse_dynamics(sample, x, self.params, self._omega_dot)
        self.latest = self.filter.update(mu_raw, dt)
        self.latest_omega_dot = self._omega_dot.copy()
        # linear acceleration estimate for the controller, world frame
        self.latest_v_dot = x.R @ acc_body
        return self.latest
