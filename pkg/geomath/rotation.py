"""Rotation algebra on SO(3).

Conventions used everywhere in the package:

* Quaternions are Hamilton, scalar-first ``[w, x, y, z]`` and map body vectors
  into the reference frame (``q^w_b`` rotates b-frame vectors into w).
* Perturbations are applied on the right: ``R ⊞ δ = R · Exp(δ)``.
* Euler angles are ZYX (yaw-pitch-roll), ``R = Rz(yaw) · Ry(pitch) · Rx(roll)``.
"""
import numpy as np
import structlog
from scipy.spatial.transform import Rotation

logger = structlog.get_logger()

_SMALL_ANGLE = 1e-8
_RENORMALIZE_TOL = 1e-6


def skew(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return np.array([
        [0.0, -a[2], a[1]],
        [a[2], 0.0, -a[0]],
        [-a[1], a[0], 0.0],
    ])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


# ──────────────────────────────────────────────
# Quaternions
# ──────────────────────────────────────────────
def quat_normalize(q) -> np.ndarray:
    """Unit-normalizes ``q``; logs when the input was noticeably off the unit sphere."""
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q)
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError("quaternion has zero or non-finite norm")
    if abs(norm - 1.0) > _RENORMALIZE_TOL:
        logger.warning("quaternion_renormalized", norm=float(norm))
    return q / norm


def quat_mul(p, q) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    w = p[0] * q[0] - p[1:] @ q[1:]
    v = p[0] * q[1:] + q[0] * p[1:] + np.cross(p[1:], q[1:])
    return np.concatenate(([w], v))


def quat_conj(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_to_rot(q) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rot_to_quat(R) -> np.ndarray:
    """Shepperd's method; the returned quaternion has a non-negative scalar part."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0.0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def quat_exp(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    if theta < _SMALL_ANGLE:
        q = np.concatenate(([1.0], 0.5 * phi))
        return q / np.linalg.norm(q)
    half = 0.5 * theta
    return np.concatenate(([np.cos(half)], np.sin(half) * phi / theta))


def quat_log(q) -> np.ndarray:
    """Rotation vector of ``q``, taking the short way round (angle in [0, π])."""
    q = quat_normalize(q)
    if q[0] < 0.0:
        q = -q
    v = q[1:]
    n = np.linalg.norm(v)
    if n < _SMALL_ANGLE:
        return 2.0 * v / q[0]
    return 2.0 * np.arctan2(n, q[0]) * v / n


def quat_boxminus(q1, q2) -> np.ndarray:
    """Rotation vector δ with ``q1 = q2 ⊗ Exp(δ)``."""
    return quat_log(quat_mul(quat_conj(q2), q1))


def quat_boxplus(q, delta) -> np.ndarray:
    return quat_normalize(quat_mul(q, quat_exp(delta)))


# ──────────────────────────────────────────────
# Rotation matrices
# ──────────────────────────────────────────────
def so3_exp(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + np.sin(theta) / theta * K + (1.0 - np.cos(theta)) / theta ** 2 * K @ K


def so3_log(R) -> np.ndarray:
    return quat_log(rot_to_quat(R))


def right_jacobian(phi) -> np.ndarray:
    """Jr with Exp(φ + δ) ≈ Exp(φ) Exp(Jr(φ) δ)."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < _SMALL_ANGLE:
        return np.eye(3) - 0.5 * K
    return (np.eye(3)
            - (1.0 - np.cos(theta)) / theta ** 2 * K
            + (theta - np.sin(theta)) / theta ** 3 * K @ K)


def right_jacobian_inv(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + 0.5 * K
    coef = 1.0 / theta ** 2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * K + coef * K @ K


def euler_to_rot(roll: float, pitch: float, yaw: float) -> np.ndarray:
    return Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()


def rot_to_euler(R) -> np.ndarray:
    """Returns ``(roll, pitch, yaw)`` in radians."""
    yaw, pitch, roll = Rotation.from_matrix(np.asarray(R, dtype=float)).as_euler("ZYX")
    return np.array([roll, pitch, yaw])


def rot_z(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
