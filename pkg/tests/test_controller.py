import numpy as np
import pytest

from tiltctl.controller import (BackstepController, BaselineController,
                                ErrorState, Gains, Measurement, MuDotSmoother,
                                Reference, backstepping_command,
                                baseline_command, compute_errors,
                                integral_rates, kappa, mu_d_dot_analytic,
                                nominal_wrench, rotation_error_rate,
                                update_integrals, _IntegralTracker)
from tiltctl.geometry import exp_so3, rotation_error
from tiltctl.simulation import RigidState
from tiltctl.vehicle import (ActuatorState, VehicleParams,
                             channel_from_actuators, eta, zeta)


@pytest.fixture
def params():
    return VehicleParams()


@pytest.fixture
def gains():
    return Gains()


def random_setup(rng, scale=0.3):
    x = RigidState(rng.normal(size=3) * scale, rng.normal(size=3) * scale,
                   exp_so3(rng.normal(size=3) * scale),
                   rng.normal(size=3) * scale)
    ref = Reference(p_d=rng.normal(size=3) * scale,
                    v_d=rng.normal(size=3) * scale,
                    a_d=rng.normal(size=3) * scale,
                    R_d=exp_so3(rng.normal(size=3) * scale),
                    omega_d=rng.normal(size=3) * scale,
                    omega_dot_d=rng.normal(size=3) * scale)
    return x, ref


def test_compute_errors_at_reference():
    x = RigidState.hover([1.0, 2.0, 3.0])
    ref = Reference(p_d=np.array([1.0, 2.0, 3.0]))
    e_p, e_v, e_R, e_w = compute_errors(x, ref)
    assert np.allclose(e_p, 0) and np.allclose(e_v, 0)
    assert np.allclose(e_R, 0) and np.allclose(e_w, 0)


def test_compute_errors_rate_frame():
    # e_omega compares body rate with the rotated desired rate
    rng = np.random.default_rng(0)
    x, ref = random_setup(rng)
    _, _, _, e_w = compute_errors(x, ref)
    expect = x.omega - x.R.T @ ref.R_d @ ref.omega_d
    assert np.allclose(e_w, expect)


def test_nominal_wrench_at_hover(params, gains):
    """At rest on the reference the wrench is pure weight compensation."""
    x = RigidState.hover([0, 0, 1.2])
    ref = Reference(p_d=np.array([0, 0, 1.2]))
    e = ErrorState(*compute_errors(x, ref))
    mu = nominal_wrench(e, x, ref, gains, params)
    assert np.allclose(mu, [0, 0, params.m * params.g, 0, 0, 0], atol=1e-12)


def test_integral_rates_inertia_weighting(params, gains):
    e = ErrorState(np.array([1.0, 0, 0]), np.array([0, 1.0, 0]),
                   np.array([0, 0, 1.0]), np.array([1.0, 1.0, 0]))
    pi_dot, ri_dot = integral_rates(e, gains, params)
    assert np.allclose(pi_dot, e.e_v + gains.c1 * e.e_p)
    assert np.allclose(ri_dot, e.e_omega + gains.c2 * (params.J_inv @ e.e_R))


def test_integral_tracker_trapezoid(params, gains):
    """The tracker reproduces the trapezoid rule on a known ramp."""
    tr = _IntegralTracker()
    dt = 0.1
    ts = np.arange(6) * dt
    for t in ts:
        rate = np.array([t, 2 * t, 0.0])
        tr.update(rate, np.zeros(3), dt)
    expect = np.trapezoid(np.stack([[t, 2 * t, 0.0] for t in ts]), ts, axis=0)
    assert np.allclose(tr.e_pi, expect, atol=1e-12)


def test_rotation_error_rate_finite_difference(params):
    rng = np.random.default_rng(1)
    h = 1e-6
    for _ in range(20):
        R = exp_so3(rng.normal(size=3))
        R_d = exp_so3(rng.normal(size=3))
        w = rng.normal(size=3)
        w_d = rng.normal(size=3)
        e_w = w - R.T @ R_d @ w_d
        rate = rotation_error_rate(R, R_d, e_w)
        eplus = rotation_error(R @ exp_so3(w, h), R_d @ exp_so3(w_d, h))
        eminus = rotation_error(R @ exp_so3(w, -h), R_d @ exp_so3(w_d, -h))
        fd = (eplus - eminus) / (2 * h)
        assert np.linalg.norm(rate - fd) < 1e-6 * (1 + np.linalg.norm(fd))


def test_mu_d_dot_analytic_random_states(params, gains):
    """Termwise derivative vs finite differences of the wrench law along the
    closed-loop flow, away from saturation boundaries."""
    rng = np.random.default_rng(2)
    h = 1e-6
    for _ in range(10):
        x, ref = random_setup(rng, scale=0.2)
        e = ErrorState(*compute_errors(x, ref))
        e.e_pi = rng.uniform(-0.3, 0.3, size=3)
        e.e_ri = rng.uniform(-0.3, 0.3, size=3)
        mu_d = nominal_wrench(e, x, ref, gains, params)
        # accelerations consistent with the plant under the wrench mu_d
        v_dot = x.R @ mu_d[:3] / params.m - np.array([0, 0, params.g])
        w_dot = params.J_inv @ (-np.cross(x.omega, params.J @ x.omega) + mu_d[3:])
        ana = mu_d_dot_analytic(e, x, ref, gains, params, v_dot, w_dot)

        def mu_at(dt):
            xs = RigidState(x.p + dt * x.v + 0.5 * dt ** 2 * v_dot,
                            x.v + dt * v_dot,
                            x.R @ exp_so3(x.omega + 0.5 * dt * w_dot, dt),
                            x.omega + dt * w_dot)
            refs = Reference(p_d=ref.p_d + dt * ref.v_d + 0.5 * dt ** 2 * ref.a_d,
                             v_d=ref.v_d + dt * ref.a_d,
                             a_d=ref.a_d,
                             R_d=ref.R_d @ exp_so3(ref.omega_d + 0.5 * dt * ref.omega_dot_d, dt),
                             omega_d=ref.omega_d + dt * ref.omega_dot_d,
                             omega_dot_d=ref.omega_dot_d)
            es = ErrorState(*compute_errors(xs, refs))
            pi_dot, ri_dot = integral_rates(e, gains, params)
            es.e_pi = e.e_pi + dt * pi_dot
            es.e_ri = e.e_ri + dt * ri_dot
            return nominal_wrench(es, xs, refs, gains, params)

        fd = (mu_at(h) - mu_at(-h)) / (2 * h)
        assert np.linalg.norm(ana - fd) < 1e-4 * (1 + np.linalg.norm(fd))


def test_backstepping_solves_channel_equation(params, gains):
    """The command satisfies eta(u) u_c = B^+(mu_d_dot - B zeta - k e_mu - kappa)
    whenever no clamp engages."""
    rng = np.random.default_rng(3)
    x, ref = random_setup(rng, scale=0.05)
    s = ActuatorState(np.full(4, params.hover_thrust()),
                      rng.uniform(-0.2, 0.2, size=4))
    e = ErrorState(*compute_errors(x, ref))
    e.e_mu = rng.normal(size=6) * 0.1
    mdd = rng.normal(size=6)
    cmd = backstepping_command(e, x, s, ref, gains, params, mdd)
    assert not cmd.saturated
    u = channel_from_actuators(s)
    rhs = params.B_pinv @ (mdd - params.B @ zeta(u, params)
                           - gains.k_mu * e.e_mu - kappa(e, x, gains, params))
    assert np.allclose(eta(u, params) @ cmd.u_c, rhs, atol=1e-9)


def test_baseline_command_realizes_wrench(params, gains):
    """Through the allocation, the baseline's commanded actuators reproduce
    mu_d exactly (it ignores actuator dynamics)."""
    rng = np.random.default_rng(4)
    x, ref = random_setup(rng, scale=0.05)
    e = ErrorState(*compute_errors(x, ref))
    cmd = baseline_command(e, x, ref, gains, params)
    mu_d = nominal_wrench(e, x, ref, gains, params)
    realized = params.B @ channel_from_actuators(
        ActuatorState(cmd.f_c, cmd.theta_c))
    assert np.allclose(realized, mu_d, atol=1e-9)


def test_mu_dot_smoother_converges():
    sm = MuDotSmoother()
    dt = 1e-3
    # ramp input: derivative should converge to the slope
    slope = np.arange(6.0)
    out = np.zeros(6)
    for k in range(200):
        out = sm.update(slope * k * dt, dt)
    assert np.allclose(out, slope, rtol=0.02)


def test_controller_update_interface(params, gains):
    ctrl = BackstepController(gains, params)
    x = RigidState.hover([0, 0, 1.0])
    s = ActuatorState(np.full(4, params.hover_thrust()), np.zeros(4))
    ref = Reference(p_d=np.array([0, 0, 1.2]))
    mu = params.B @ channel_from_actuators(s)
    meas = Measurement(mu, np.zeros(3), np.zeros(3))
    cmd, diag = ctrl.update(x, s, meas, ref, 5e-3)
    assert cmd.u_c.shape == (8,)
    for key in ("mu_d", "mu_d_dot", "e_mu", "kappa", "errors", "saturated"):
        assert key in diag
    ctrl.reset()
    assert np.allclose(ctrl.integrals.e_pi, 0)


def test_numeric_mode_matches_analytic_in_steady_state(params, gains):
    """After a transient both mu_d_dot paths agree on a slow trajectory."""
    ca = BackstepController(gains, params, mu_d_dot_mode="analytic")
    cn = BackstepController(gains, params, mu_d_dot_mode="numeric")
    x = RigidState.hover([0, 0, 1.2])
    s = ActuatorState(np.full(4, params.hover_thrust()), np.zeros(4))
    ref = Reference(p_d=np.array([0, 0, 1.2]))
    mu = params.B @ channel_from_actuators(s)
    meas = Measurement(mu, np.zeros(3), np.zeros(3))
    for _ in range(100):
        _, da = ca.update(x, s, meas, ref, 1e-3)
        _, dn = cn.update(x, s, meas, ref, 1e-3)
    assert np.linalg.norm(da["mu_d_dot"] - dn["mu_d_dot"]) < 1e-6


def test_gains_validation():
    with pytest.raises(ValueError):
        Gains(k_tp=-1.0)
    with pytest.raises(ValueError):
        BackstepController(Gains(), VehicleParams(), mu_d_dot_mode="bogus")


def test_baseline_controller_interface(params, gains):
    ctrl = BaselineController(gains, params)
    x = RigidState.hover([0, 0, 1.0])
    s = ActuatorState(np.full(4, params.hover_thrust()), np.zeros(4))
    ref = Reference(p_d=np.array([0, 0, 1.2]))
    mu = params.B @ channel_from_actuators(s)
    cmd, diag = ctrl.update(x, s, Measurement(mu, np.zeros(3), np.zeros(3)),
                            ref, 5e-3)
    assert cmd.u_c.shape == (8,)
    assert np.allclose(diag["mu_d_dot"], 0)
