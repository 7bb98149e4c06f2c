"""Rotation-group and vector primitives shared by the whole library.

All rotations are plain 3x3 numpy arrays. Angular quantities are rad,
positions m, forces N unless a docstring says otherwise.
"""

import numpy as np

ROT_TOL = 1e-9
SKEW_TOL = 1e-8

e3 = np.array([0.0, 0.0, 1.0])


def hat(a):
    """Skew-symmetric matrix of a 3-vector, hat(a) @ b == cross(a, b)."""
    return np.array([
        [0.0, -a[2], a[1]],
        [a[2], 0.0, -a[0]],
        [-a[1], a[0], 0.0],
    ])


def vee(S, tol=SKEW_TOL):
    """Inverse of hat. Rejects matrices whose symmetric part exceeds tol."""
    sym = 0.5 * (S + S.T)
    if np.linalg.norm(sym) > tol:
        raise ValueError("vee: input is not skew-symmetric "
                         f"(symmetric part norm {np.linalg.norm(sym):.3e})")
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def sat(y, sigma):
    """Componentwise saturation to [-sigma, sigma]."""
    if sigma <= 0:
        raise ValueError("sat: sigma must be positive")
    return np.clip(y, -sigma, sigma)


def is_rotation(R, tol=ROT_TOL):
    return (np.linalg.norm(R.T @ R - np.eye(3)) <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol)


def rotation_error(R, R_d):
    """Attitude error vector: half the vee of R_d^T R - R^T R_d."""
    A = R_d.T @ R
    return 0.5 * np.array([A[2, 1] - A[1, 2], A[0, 2] - A[2, 0], A[1, 0] - A[0, 1]])


def psi(R, R_d):
    """Scalar attitude error, half the trace of I - R_d^T R. Lies in [0, 2]."""
    return 0.5 * (3.0 - np.trace(R_d.T @ R))


def exp_so3(omega, dt=1.0):
    """Rodrigues formula for the rotation generated by omega over dt seconds."""
    phi = np.asarray(omega, dtype=float) * dt
    angle = np.linalg.norm(phi)
    if angle < 1e-12:
        K = hat(phi)
        return np.eye(3) + K + 0.5 * K @ K
    axis = phi / angle
    K = hat(axis)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def project_to_so3(M):
    """Nearest rotation matrix (polar projection); used to kill integration drift."""
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.linalg.det(U @ Vt)])
    return U @ D @ Vt


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def cross3(a, b):
    """3-vector cross product without np.cross's axis machinery (hot path)."""
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])
