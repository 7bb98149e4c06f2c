"""Gain certification, Lyapunov evaluation and robustness constants.

Everything here is numeric: inequalities are evaluated, never assumed, and
the trajectory-level checks (vdot_certificate, decay fits) operate on logged
telemetry rather than on symbolic models.
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .controller import (ErrorState, Reference, kappa, mu_d_dot_analytic,
                         nominal_wrench)
from .geometry import exp_so3, psi as psi_fn
from .vehicle import zeta


# ---------------------------------------------------------------------------
# Condition 1 and the Lyapunov sandwich matrices


def condition1_bounds(gains, params):
    """Analytic upper bounds on c1 and c2 from the gain conditions."""
    lmin = float(np.min(np.linalg.eigvalsh(params.J)))
    lmax = float(np.max(np.linalg.eigvalsh(params.J)))
    c1_bound = min(np.sqrt(gains.k_tp),
                   4.0 * gains.k_tp * gains.k_td / (gains.k_td ** 2 + 4.0 * gains.k_tp))
    c2_bound = min(np.sqrt(gains.k_rp * lmin),
                   4.0 * lmin ** 2 * gains.k_rp * gains.k_rd
                   / (4.0 * gains.k_rp * lmin ** 2 + gains.k_rd ** 2 * lmax))
    return c1_bound, c2_bound


def check_condition1(gains, params, delta_p=None, delta_R=None):
    """Evaluate every gain inequality; returns a per-inequality report dict."""
    delta_p = np.zeros(3) if delta_p is None else np.asarray(delta_p, float)
    delta_R = np.zeros(3) if delta_R is None else np.asarray(delta_R, float)
    c1_bound, c2_bound = condition1_bounds(gains, params)
    report = {
        "c1": float(gains.c1), "c1_bound": float(c1_bound),
        "c1_ok": bool(gains.c1 < c1_bound),
        "c2": float(gains.c2), "c2_bound": float(c2_bound),
        "c2_ok": bool(gains.c2 < c2_bound),
        "kti_sigma1": float(gains.k_ti * gains.sigma1),
        "delta_p_inf": float(np.max(np.abs(delta_p))),
        "integral_p_ok": bool(gains.k_ti * gains.sigma1 > np.max(np.abs(delta_p))),
        # the attitude integral settles at J delta_R / k_ri (torque level)
        "kri_sigma2": float(gains.k_ri * gains.sigma2),
        "delta_R_inf": float(np.max(np.abs(params.J @ delta_R))),
        "integral_R_ok": bool(gains.k_ri * gains.sigma2
                              > np.max(np.abs(params.J @ delta_R))),
    }
    report["ok"] = all(report[k] for k in ("c1_ok", "c2_ok", "integral_p_ok", "integral_R_ok"))
    return report


def lyapunov_matrices(gains, params, psi2=1.9):
    """The 2x2 sandwich matrices M and the decay matrices W, with eigenvalues."""
    if not (0.0 < psi2 < 2.0):
        raise ValueError("psi2 must lie in (0, 2)")
    eig = np.linalg.eigvalsh(params.J)
    lmin, lmax = float(eig[0]), float(eig[-1])
    c1, c2 = gains.c1, gains.c2
    M11 = 0.5 * np.array([[gains.k_tp, -c1], [-c1, 1.0]])
    M12 = 0.5 * np.array([[gains.k_tp, c1], [c1, 1.0]])
    M21 = 0.5 * np.array([[gains.k_rp, -c2], [-c2, lmin]])
    M22 = 0.5 * np.array([[2.0 * gains.k_rp / (2.0 - psi2), c2], [c2, lmax]])
    W1 = 0.5 * np.array([[c1 * gains.k_tp, -0.5 * c1 * gains.k_td],
                         [-0.5 * c1 * gains.k_td, gains.k_td - c1]])
    W2 = 0.5 * np.array([[c2 * gains.k_rp / lmax, -c2 * gains.k_rd / (2.0 * lmin)],
                         [-c2 * gains.k_rd / (2.0 * lmin), gains.k_rd - c2]])
    out = {"M11": M11, "M12": M12, "M21": M21, "M22": M22, "W1": W1, "W2": W2}
    out["eigenvalues"] = {k: np.linalg.eigvalsh(v) for k, v in out.items() if k != "eigenvalues"}
    out["positive_definite"] = {k: bool(ev[0] > 0) for k, ev in out["eigenvalues"].items()}
    return out


# ---------------------------------------------------------------------------
# Lyapunov function


def _integral_term(e_i, gain, sigma, delta):
    """Closed-form integral of gain*sat_sigma(g) - delta from delta/gain to e_i,
    componentwise."""
    def antider(x):
        # antiderivative of gain*sat_sigma - delta
        core = np.where(np.abs(x) <= sigma,
                        0.5 * gain * x ** 2 - delta * x,
                        0.0)
        hi = (0.5 * gain * sigma ** 2 - delta * sigma) + (gain * sigma - delta) * (x - sigma)
        lo = (0.5 * gain * sigma ** 2 + delta * sigma) + (-gain * sigma - delta) * (x + sigma)
        return np.where(x > sigma, hi, np.where(x < -sigma, lo, core))
    return float(np.sum(antider(np.asarray(e_i, float)) - antider(delta / gain)))


def lyapunov_V(e, x, gains, params, R_d=None, delta_p=None, delta_R=None):
    """Evaluate (V, V1, V2, V_I) exactly along a state/error sample."""
    delta_p = np.zeros(3) if delta_p is None else np.asarray(delta_p, float)
    delta_R = np.zeros(3) if delta_R is None else np.asarray(delta_R, float)
    V_Ip = _integral_term(e.e_pi, gains.k_ti, gains.sigma1, delta_p)
    # the attitude integral compensates the torque-level disturbance J delta_R
    V_IR = _integral_term(e.e_ri, gains.k_ri, gains.sigma2, params.J @ delta_R)
    V1 = (0.5 * gains.k_tp * e.e_p @ e.e_p + 0.5 * e.e_v @ e.e_v
          + gains.c1 * e.e_p @ e.e_v + V_Ip)
    if R_d is None:
        # recover Psi from e_R is not possible in general; caller should pass R_d
        raise ValueError("lyapunov_V needs the desired rotation R_d")
    V2 = (0.5 * e.e_omega @ (params.J @ e.e_omega) + gains.k_rp * psi_fn(x.R, R_d)
          + gains.c2 * e.e_R @ e.e_omega + V_IR)
    V = 0.5 * e.e_mu @ e.e_mu + V1 + V2
    return V, V1, V2, V_Ip + V_IR


# ---------------------------------------------------------------------------
# Trajectory certificates


def vdot_certificate(t, V, e_mu, z1, z2, gains, params, psi2=1.9, tol=0.05):
    """Check dV/dt <= -(1-tol) (k_mu |e_mu|^2 + z1' W1 z1 + z2' W2 z2) tickwise.

    V is differentiated centrally.  Returns (margins, violation mask); a
    nonpositive margin means the tick satisfies the bound.
    """
    mats = lyapunov_matrices(gains, params, psi2)
    W1, W2 = mats["W1"], mats["W2"]
    t = np.asarray(t, float)
    V = np.asarray(V, float)
    vdot = np.gradient(V, t)
    quad = (gains.k_mu * np.sum(e_mu ** 2, axis=1)
            + np.einsum("ni,ij,nj->n", z1, W1, z1)
            + np.einsum("ni,ij,nj->n", z2, W2, z2))
    margins = vdot + (1.0 - tol) * quad
    return margins, margins > 0


def fit_decay_rate(t, norm_x, floor_ratio=0.02):
    """Least-squares slope of log ||x|| over the transient window.

    The window runs from the start until ||x|| first drops below
    floor_ratio * ||x(0)|| (or the end of the data), which keeps the
    steady-state floor from polluting the fit.
    """
    t = np.asarray(t, float)
    n = np.asarray(norm_x, float)
    n0 = n[0]
    below = np.flatnonzero(n <= floor_ratio * n0)
    end = below[0] + 1 if below.size else n.size
    end = max(end, 10)
    w = slice(0, end)
    good = n[w] > 0
    A = np.stack([t[w][good], np.ones(np.count_nonzero(good))], axis=1)
    slope, _ = np.linalg.lstsq(A, np.log(n[w][good]), rcond=None)[0]
    return -float(slope)


def fit_ultimate_bound(t, V, beta4, settle_frac=0.5):
    """Comparison-lemma fit: largest c_v with Vdot <= -c_v V + beta4 on all ticks,
    plus the observed steady-state V over the trailing window."""
    t = np.asarray(t, float)
    V = np.asarray(V, float)
    vdot = np.gradient(V, t)
    pos = V > 0
    c_v = float(np.min((beta4 - vdot[pos]) / V[pos]))
    c_v = max(c_v, 0.0)
    tail = V[int(settle_frac * V.size):]
    return c_v, float(np.max(tail))


# ---------------------------------------------------------------------------
# Robustness constants (uncertain actuator time constants)


@dataclass
class UncertaintyBand:
    alpha_f_nom: float
    delta_f: float
    alpha_theta_nom: float
    delta_theta: float

    def __post_init__(self):
        if not (0 <= self.delta_f < self.alpha_f_nom):
            raise ValueError("delta_f must lie in [0, alpha_f_nom)")
        if not (0 <= self.delta_theta < self.alpha_theta_nom):
            raise ValueError("delta_theta must lie in [0, alpha_theta_nom)")


@dataclass
class CertificationReport:
    condition1: dict
    psi2: float
    sublevel_c: float
    L0: float = 0.0
    L1: float = 0.0
    L2: float = 0.0
    rho_c: float = 0.0
    f_max_bound: float = 0.0
    d_f: float = 0.0
    d_theta: float = 0.0
    delta_eta_block: float = 0.0
    delta_zeta_block: float = 0.0
    delta_zeta_norm: float = 0.0
    eta_ratio: float = 0.0          # sharp bound on ||Delta_eta eta^-1||
    B_norm: float = 0.0
    B_pinv_norm: float = 0.0
    gamma: float = 0.0
    M0: float = 0.0
    M1: float = 0.0
    M2: float = 0.0
    beta1: float = 0.0
    beta2: float = 0.0
    beta3: float = 0.0
    beta4: float = 0.0
    k_mu: float = 0.0
    k_mu_lower: float = float("inf")
    feasible: bool = False
    eigenvalues: dict = field(default_factory=dict)

    def to_json(self):
        d = asdict(self)
        d["eigenvalues"] = {k: list(map(float, v)) for k, v in self.eigenvalues.items()}
        return json.dumps(d, indent=2, sort_keys=True)

    def to_text(self):
        lines = []
        for k, v in sorted(asdict(self).items()):
            if k in ("condition1", "eigenvalues"):
                continue
            lines.append(f"{k}: {v}")
        for k, v in sorted(self.condition1.items()):
            lines.append(f"condition1.{k}: {v}")
        for k, v in sorted(self.eigenvalues.items()):
            lines.append(f"lambda.{k}: {list(map(float, v))}")
        return "\n".join(lines) + "\n"


def _sample_sublevel(rng, bounds, gains, params, c, mats):
    """Draw one error sample inside the sublevel-set box bounds."""
    z1_max, z2_max, emu_max = bounds
    def rand_vec(scale):
        v = rng.normal(size=3)
        return v / np.linalg.norm(v) * rng.uniform(0, scale)
    # split the z budgets randomly between position/velocity, attitude/rate
    a = rng.uniform(0, 1)
    e_p = rand_vec(z1_max * np.sqrt(a))
    e_v = rand_vec(z1_max * np.sqrt(1 - a))
    b = rng.uniform(0, 1)
    eR_cap = min(z2_max * np.sqrt(b), 0.99)
    ang = np.arcsin(eR_cap)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    R = exp_so3(rng.normal(size=3))
    R_d = R @ exp_so3(axis * ang)          # gives ||e_R|| = sin(ang) = eR_cap
    e_w = rand_vec(z2_max * np.sqrt(1 - b))
    e_mu = rng.normal(size=6)
    e_mu = e_mu / np.linalg.norm(e_mu) * rng.uniform(0, emu_max)
    e_pi = rng.uniform(-gains.sigma1, gains.sigma1, size=3)
    e_ri = rng.uniform(-gains.sigma2, gains.sigma2, size=3)
    return e_p, e_v, e_w, R, R_d, e_mu, e_pi, e_ri


def robustness_constants(gains, params, band, c, psi2=1.9, n_samples=10000, seed=0):
    """Compute the uncertainty-robustness constants and the k_mu threshold.

    M0, M1, M2 have no closed form; they are obtained by sampling the
    sublevel set, fitting ||mu_d_dot - B zeta - kappa|| against
    (1, ||z1||, ||z2||), scaling the fit up to dominate every sample, then
    inflating by 20%.
    """
    from .simulation import RigidState  # local import to avoid a cycle

    cond = check_condition1(gains, params)
    mats = lyapunov_matrices(gains, params, psi2)
    lm11 = mats["eigenvalues"]["M11"][0]
    lm21 = mats["eigenvalues"]["M21"][0]
    lw1 = mats["eigenvalues"]["W1"][0]
    lw2 = mats["eigenvalues"]["W2"][0]
    eigJ = np.linalg.eigvalsh(params.J)
    lmaxJ = float(eigJ[-1])

    z1_max = np.sqrt(c / lm11)
    z2_max = np.sqrt(c / lm21)
    emu_max = np.sqrt(2.0 * c)

    L1 = params.m * np.hypot(gains.k_tp, gains.k_td)
    L2 = np.hypot(gains.k_rp,
                  lmaxJ * z2_max + 3.0 * gains.a_omega * lmaxJ + gains.k_rd)
    L0 = (params.m * (params.g + gains.a_v + gains.k_ti * gains.sigma1)
          + lmaxJ * (2.0 * gains.a_omega ** 2 + gains.a_omega_dot)
          + gains.k_ri * gains.sigma2)

    sv = np.linalg.svd(params.B, compute_uv=False)
    B_norm, B_pinv_norm = float(sv[0]), float(1.0 / sv[-1])
    rho_c = B_pinv_norm * (emu_max + L1 * z1_max + L2 * z2_max + L0)
    # the hardware clamp gives a second valid bound on any realizable thrust
    f_max = min(rho_c, params.f_max_hw)

    af_lo = band.alpha_f_nom - band.delta_f
    at_lo = band.alpha_theta_nom - band.delta_theta
    d_f = band.delta_f / (af_lo * (af_lo - band.delta_f)) if af_lo > band.delta_f else np.inf
    d_theta = (band.delta_theta / (at_lo * (at_lo - band.delta_theta))
               if at_lo > band.delta_theta else np.inf)
    delta_eta_block = float(np.sqrt(d_f ** 2 + f_max ** 2 * d_theta ** 2))
    delta_zeta_block = float(2.0 * f_max * np.sqrt(d_f ** 2 + params.theta_max ** 2 * d_theta ** 2))
    delta_zeta_norm = float(np.sqrt(params.n) * delta_zeta_block)

    # Sharp bound on ||Delta_eta eta^-1||: each block diagonalizes as
    # C diag(1 - alpha_f/af_nom, 1 - alpha_theta/at_nom) C^-1 with C having
    # orthogonal columns, so the product norm is the worst diagonal entry.
    eta_ratio = max(band.delta_f / band.alpha_f_nom,
                    band.delta_theta / band.alpha_theta_nom)
    gamma = 1.0 - B_norm * eta_ratio * B_pinv_norm

    report = CertificationReport(
        condition1=cond, psi2=psi2, sublevel_c=c, L0=L0, L1=L1, L2=L2,
        rho_c=rho_c, f_max_bound=f_max, d_f=d_f, d_theta=d_theta,
        delta_eta_block=delta_eta_block, delta_zeta_block=delta_zeta_block,
        delta_zeta_norm=delta_zeta_norm, eta_ratio=eta_ratio,
        B_norm=B_norm, B_pinv_norm=B_pinv_norm, gamma=gamma, k_mu=gains.k_mu,
        eigenvalues=mats["eigenvalues"],
    )
    if gamma <= 0 or not cond["ok"]:
        report.feasible = False
        return report

    # Monte-Carlo fit of M0, M1, M2 over the sublevel set
    rng = np.random.default_rng(seed)
    rows, qs = [], []
    for _ in range(n_samples):
        e_p, e_v, e_w, R, R_d, e_mu, e_pi, e_ri = _sample_sublevel(
            rng, (z1_max, z2_max, emu_max), gains, params, c, mats)
        omega_d = rng.normal(size=3)
        omega_d = omega_d / np.linalg.norm(omega_d) * rng.uniform(0, gains.a_omega)
        omega_dot_d = rng.normal(size=3)
        omega_dot_d = omega_dot_d / np.linalg.norm(omega_dot_d) * rng.uniform(0, gains.a_omega_dot)
        a_d = rng.normal(size=3)
        a_d = a_d / np.linalg.norm(a_d) * rng.uniform(0, gains.a_v)
        ref = Reference(R_d=R_d, omega_d=omega_d, omega_dot_d=omega_dot_d, a_d=a_d)
        Q = R.T @ R_d
        omega = e_w + Q @ omega_d
        x = RigidState(e_p + ref.p_d, e_v + ref.v_d, R, omega)
        e = ErrorState(e_p, e_v, 0.5 * np.array([
            (R_d.T @ R)[2, 1] - (R_d.T @ R)[1, 2],
            (R_d.T @ R)[0, 2] - (R_d.T @ R)[2, 0],
            (R_d.T @ R)[1, 0] - (R_d.T @ R)[0, 1]]), e_w, e_pi, e_ri, e_mu)
        mu_d = nominal_wrench(e, x, ref, gains, params)
        mu = mu_d + e_mu
        v_dot = R @ mu[:3] / params.m - params.g * np.array([0, 0, 1.0])
        omega_dot = params.J_inv @ (-np.cross(omega, params.J @ omega) + mu[3:])
        mdd = mu_d_dot_analytic(e, x, ref, gains, params, v_dot, omega_dot)
        u = params.B_pinv @ mu
        f = np.hypot(u[0::2], u[1::2])
        scale = np.maximum(1.0, params.f_min / np.maximum(f, 1e-12))
        u = (u.reshape(-1, 2) * scale[:, None]).reshape(-1)
        q = np.linalg.norm(mdd - params.B @ zeta(u, params) - kappa(e, x, gains, params))
        z1n = np.hypot(np.linalg.norm(e_p), np.linalg.norm(e_v))
        z2n = np.hypot(np.linalg.norm(e.e_R), np.linalg.norm(e_w))
        rows.append((1.0, z1n, z2n))
        qs.append(q)
    A = np.array(rows)
    q = np.array(qs)
    coef, *_ = np.linalg.lstsq(A, q, rcond=None)
    coef = np.maximum(coef, 0.0)
    pred = A @ coef
    factor = float(np.max(q / np.maximum(pred, 1e-12)))
    M0, M1, M2 = 1.2 * factor * coef

    k_mu_lower = ((1.0 - gamma) ** 2 / gamma) * max(M1 ** 2 / lw1, M2 ** 2 / lw2)
    k_mu = gains.k_mu
    report.M0, report.M1, report.M2 = float(M0), float(M1), float(M2)
    report.beta1 = 0.5 * k_mu * gamma
    report.beta2 = float(lw1 - (1 - gamma) ** 2 * M1 ** 2 / (k_mu * gamma))
    report.beta3 = float(lw2 - (1 - gamma) ** 2 * M2 ** 2 / (k_mu * gamma))
    report.beta4 = float((B_norm ** 2 * delta_zeta_norm ** 2 + (1 - gamma) ** 2 * M0 ** 2)
                         / (k_mu * gamma))
    report.k_mu_lower = float(k_mu_lower)
    report.feasible = bool(np.isfinite(k_mu_lower))
    return report
