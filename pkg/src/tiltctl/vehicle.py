"""Vehicle parameters, actuator state, channel vector and wrench allocation.

The per-rotor thrust/tilt pair (f_i, theta_i) maps to the channel pair
(f_i cos(theta_i), f_i sin(theta_i)).  Stacking the pairs gives the channel
vector u, and the body wrench is the linear map mu = B u.  The allocation
matrix B is constant: tilt enters through u, not B.
"""

from dataclasses import dataclass, field

import numpy as np

from .geometry import exp_so3, hat

Z_B = np.array([0.0, 0.0, 1.0])


class AllocationError(ValueError):
    pass


class SingularActuatorError(ValueError):
    """A rotor thrust fell below f_min, making the channel map singular."""

    def __init__(self, rotor, thrust):
        self.rotor = rotor
        self.thrust = thrust
        super().__init__(f"rotor {rotor}: thrust {thrust:.4g} N below minimum")


@dataclass
class VehicleParams:
    """Physical constants of a variable-tilt multirotor (n rotors, n > 3)."""

    m: float = 2.0                    # kg
    J: np.ndarray = field(default_factory=lambda: np.diag([0.03, 0.03, 0.05]))
    g: float = 9.81
    arm_length: float = 0.23          # m, used by the default layout
    k_f: float = 0.016                # m, drag-torque coefficient
    alpha_f: float = 0.05             # s, rotor time constant (nominal)
    alpha_theta: float = 0.1          # s, servo time constant (nominal)
    f_min: float = 0.1                # N, singularity guard
    f_max_hw: float = 12.0            # N
    theta_max: float = 1.3            # rad
    # Per-rotor geometry; defaults built in __post_init__ for a symmetric quad.
    l: np.ndarray = None              # (n,3) arm displacement
    a: np.ndarray = None              # (n,3) unit tilt axes (along the arm)
    s: np.ndarray = None              # (n,) spin signs +-1

    def __post_init__(self):
        self.J = np.asarray(self.J, dtype=float)
        if self.l is None:
            ang = np.pi / 4 + np.arange(4) * np.pi / 2
            self.a = np.stack([np.cos(ang), np.sin(ang), np.zeros(4)], axis=1)
            self.l = self.arm_length * self.a
            self.s = np.array([1.0, -1.0, 1.0, -1.0])
        self.l = np.asarray(self.l, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        self.s = np.asarray(self.s, dtype=float)
        if self.n <= 3:
            raise ValueError("need more than 3 rotors")
        if not np.allclose(np.linalg.norm(self.a, axis=1), 1.0, atol=1e-9):
            raise ValueError("tilt axes must be unit vectors")
        if not np.allclose(self.J, self.J.T) or np.any(np.linalg.eigvalsh(self.J) <= 0):
            raise ValueError("inertia must be symmetric positive definite")
        if self.alpha_f <= 0 or self.alpha_theta <= 0:
            raise ValueError("time constants must be positive")
        if self.f_min <= 0:
            raise ValueError("f_min must be positive")
        self._J_inv = np.linalg.inv(self.J)
        self._B = build_allocation_matrix(self)
        self._B_pinv = np.linalg.pinv(self._B)

    @property
    def n(self):
        return self.l.shape[0]

    @property
    def B(self):
        return self._B

    @property
    def B_pinv(self):
        return self._B_pinv

    @property
    def J_inv(self):
        return self._J_inv

    def hover_thrust(self):
        return self.m * self.g / self.n


@dataclass
class ActuatorState:
    """Rotor thrusts f (N) and tilt angles theta (rad), one entry per rotor."""

    f: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)

    def copy(self):
        return ActuatorState(self.f.copy(), self.theta.copy())


@dataclass
class Wrench:
    """Body-frame total force (N) and torque (N m)."""

    force: np.ndarray
    torque: np.ndarray

    def __post_init__(self):
        self.force = np.asarray(self.force, dtype=float)
        self.torque = np.asarray(self.torque, dtype=float)

    @classmethod
    def from_vector(cls, mu):
        mu = np.asarray(mu, dtype=float)
        return cls(mu[:3], mu[3:])

    def as_vector(self):
        return np.concatenate([self.force, self.torque])


@dataclass
class ActuatorCommand:
    """Interleaved per-rotor commands (f_c1, theta_c1, f_c2, ...)."""

    u_c: np.ndarray
    saturated: bool = False

    def __post_init__(self):
        self.u_c = np.asarray(self.u_c, dtype=float)

    @property
    def f_c(self):
        return self.u_c[0::2]

    @property
    def theta_c(self):
        return self.u_c[1::2]


def build_allocation_matrix(params):
    """6 x 2n allocation matrix mapping the channel vector u to [force; torque].

    Column 2i holds the vertical channel [z; l_i x z + s_i k_f z], column
    2i+1 the tangential channel [t_i; l_i x t_i + s_i k_f t_i] with
    t_i = a_i x z.
    """
    cols = []
    for i in range(params.n):
        t_i = np.cross(params.a[i], Z_B)
        for d in (Z_B, t_i):
            cols.append(np.concatenate([d, np.cross(params.l[i], d) + params.s[i] * params.k_f * d]))
    B = np.array(cols).T
    if np.linalg.matrix_rank(B, tol=1e-9) < 6:
        raise AllocationError("allocation matrix is rank deficient; "
                              "check rotor layout (collinear arms?)")
    return B


def channel_from_actuators(state):
    """Channel vector u with pairs (f_i cos theta_i, f_i sin theta_i)."""
    u = np.empty(2 * state.f.size)
    u[0::2] = state.f * np.cos(state.theta)
    u[1::2] = state.f * np.sin(state.theta)
    return u


def actuators_from_channel(u, params=None, f_min=None):
    """Inverse channel map; theta_i = atan2(u_2i, u_2i-1), f_i the pair norm."""
    u = np.asarray(u, dtype=float)
    u1, u2 = u[0::2], u[1::2]
    f = np.hypot(u1, u2)
    if f_min is None:
        f_min = params.f_min if params is not None else 0.0
    bad = np.flatnonzero(f < f_min)
    if bad.size:
        raise SingularActuatorError(int(bad[0]), float(f[bad[0]]))
    return ActuatorState(f, np.arctan2(u2, u1))


def _check_feasible(u, f_min):
    f = np.hypot(u[0::2], u[1::2])
    bad = np.flatnonzero(f < f_min)
    if bad.size:
        raise SingularActuatorError(int(bad[0]), float(f[bad[0]]))
    return f


def zeta(u, params, alpha_f=None, alpha_theta=None):
    """Drift part of the channel dynamics du/dt = zeta(u) + eta(u) u_c."""
    af = params.alpha_f if alpha_f is None else alpha_f
    at = params.alpha_theta if alpha_theta is None else alpha_theta
    u = np.asarray(u, dtype=float)
    _check_feasible(u, params.f_min)
    u1, u2 = u[0::2], u[1::2]
    th = np.arctan2(u2, u1)
    z = np.empty_like(u)
    z[0::2] = -u1 / af + (u2 / at) * th
    z[1::2] = -u2 / af - (u1 / at) * th
    return z


def eta(u, params, alpha_f=None, alpha_theta=None):
    """Input matrix of the channel dynamics, block diagonal with 2x2 blocks."""
    af = params.alpha_f if alpha_f is None else alpha_f
    at = params.alpha_theta if alpha_theta is None else alpha_theta
    u = np.asarray(u, dtype=float)
    f = _check_feasible(u, params.f_min)
    u1, u2 = u[0::2], u[1::2]
    c, s = u1 / f, u2 / f
    E = np.zeros((u.size, u.size))
    for i in range(f.size):
        E[2 * i, 2 * i] = c[i] / af
        E[2 * i, 2 * i + 1] = -u2[i] / at
        E[2 * i + 1, 2 * i] = s[i] / af
        E[2 * i + 1, 2 * i + 1] = u1[i] / at
    return E


def eta_inverse(u, params, alpha_f=None, alpha_theta=None):
    """Closed-form inverse of eta; each block inverts as
    [[af c, af s], [-at s / f, at c / f]]."""
    af = params.alpha_f if alpha_f is None else alpha_f
    at = params.alpha_theta if alpha_theta is None else alpha_theta
    u = np.asarray(u, dtype=float)
    f = _check_feasible(u, params.f_min)
    u1, u2 = u[0::2], u[1::2]
    c, s = u1 / f, u2 / f
    E = np.zeros((u.size, u.size))
    for i in range(f.size):
        E[2 * i, 2 * i] = af * c[i]
        E[2 * i, 2 * i + 1] = af * s[i]
        E[2 * i + 1, 2 * i] = -at * s[i] / f[i]
        E[2 * i + 1, 2 * i + 1] = at * c[i] / f[i]
    return E


def apply_eta_inverse(u, v, params, alpha_f=None, alpha_theta=None):
    """eta(u)^-1 @ v without forming the matrix (hot path of the controller)."""
    af = params.alpha_f if alpha_f is None else alpha_f
    at = params.alpha_theta if alpha_theta is None else alpha_theta
    f = _check_feasible(u, params.f_min)
    u1, u2 = u[0::2], u[1::2]
    c, s = u1 / f, u2 / f
    v1, v2 = v[0::2], v[1::2]
    out = np.empty_like(v)
    out[0::2] = af * (c * v1 + s * v2)
    out[1::2] = at * (-s * v1 + c * v2) / f
    return out


def wrench_from_actuators(state, params):
    """Body wrench via the allocation matrix (mu = B u)."""
    return Wrench.from_vector(params.B @ channel_from_actuators(state))


def wrench_from_actuators_direct(state, params):
    """Body wrench by summing each rotor's tilted thrust explicitly.

    Independent of the allocation matrix; the two paths are each other's
    oracle in the tests.
    """
    force = np.zeros(3)
    torque = np.zeros(3)
    for i in range(params.n):
        R_i = exp_so3(state.theta[i] * params.a[i])
        thrust = R_i @ (state.f[i] * Z_B)
        force += thrust
        torque += np.cross(params.l[i], thrust) + params.s[i] * params.k_f * thrust
    return Wrench(force, torque)


def clamp_command(f_c, theta_c, params):
    """Clamp raw commands to the actuator envelope; flags whether any bound bit."""
    f_cl = np.clip(f_c, params.f_min, params.f_max_hw)
    th_cl = np.clip(theta_c, -params.theta_max, params.theta_max)
    saturated = bool(np.any(f_cl != f_c) or np.any(th_cl != theta_c))
    u_c = np.empty(2 * f_cl.size)
    u_c[0::2] = f_cl
    u_c[1::2] = th_cl
    return ActuatorCommand(u_c, saturated)
