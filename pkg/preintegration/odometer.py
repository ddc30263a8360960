"""Odometer preintegration in the IMU body frame.

Between two estimator epochs the odometer speed and bearing rate are mapped
into the b-frame through the IMU-odometer extrinsics and integrated:

    δp = ∫ R_t [R^b_m e₂ (1+s_v) v̂ − ⌊ω×⌋ p^b_m] dt
    δR = ∏ Exp(R^b_m e₃ (1+s_ω) ω̂ dt)

``R_t`` is the odometer-integrated rotation since the first epoch and ω the
bias-corrected gyro rate. The error state for covariance propagation is
``[δp, δθ, δs_v, δs_ω]``; the calibration Jacobian columns are
``[p^b_m, θ^b_m, s_v, s_ω]``.
"""
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Optional, Tuple

import numpy as np
import structlog

from calib_config import SensorNoiseSpec
from geomath.rotation import (
    quat_to_rot, right_jacobian, rot_to_quat, skew, so3_exp, so3_log,
)
from preintegration.models import ImuSeries, MountExtrinsics, OdometerIntrinsics, OdoSeries

logger = structlog.get_logger()

E2 = np.array([0.0, 1.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])
SCALE_WALK_FLOOR = 1e-6
PROJECTION = np.zeros((6, 2))
PROJECTION[1, 0] = 1.0       # forward speed -> e₂ of the linear part
PROJECTION[5, 1] = 1.0       # bearing rate  -> e₃ of the angular part


def odo_project(v: float, omega: float) -> Tuple[np.ndarray, np.ndarray]:
    """Odometer readings as m-frame vectors (Right-Forward-Up)."""
    return v * E2, omega * E3


def odo_body_rates(v_m: np.ndarray, omega_m: np.ndarray, mount: MountExtrinsics,
                   omega_b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """v^b = R^b_m v^m − ⌊ω^b×⌋ p^b_m ;  ω^b = R^b_m ω^m."""
    v_b = mount.rotation @ v_m - skew(omega_b) @ mount.translation
    return v_b, mount.rotation @ omega_m


class OdoStep(NamedTuple):
    dp: np.ndarray
    R: np.ndarray
    jacobian: np.ndarray     # 6 x 8
    transition: np.ndarray   # 8 x 8
    noise_map: np.ndarray    # 8 x 4, [ε_v, ε_ω, η_sv, η_sω]


def odo_step(dp: np.ndarray, R: np.ndarray, jacobian: np.ndarray, v_bar: float, w_bar: float,
             omega_g: np.ndarray, s_v: float, s_w: float, mount: MountExtrinsics, dt: float) -> OdoStep:
    R_bm, p_bm = mount.rotation, mount.translation
    u_v = R_bm @ E2 * (1.0 + s_v) * v_bar - skew(omega_g) @ p_bm
    u_w = R_bm @ E3 * (1.0 + s_w) * w_bar
    E = so3_exp(u_w * dt)
    E_h = so3_exp(0.5 * u_w * dt)
    Jr = right_jacobian(u_w * dt)
    Jr_h = right_jacobian(0.5 * u_w * dt)

    dp_du_v = R @ E_h * dt
    dp_du_w = -R @ E_h @ skew(u_v) @ Jr_h * 0.5 * dt ** 2
    dth_du_w = Jr * dt
    dp_dth = -R @ skew(E_h @ u_v) * dt

    du_v = np.zeros((3, 8))
    du_v[:, 0:3] = -skew(omega_g)
    du_v[:, 3:6] = -R_bm @ skew(E2) * (1.0 + s_v) * v_bar
    du_v[:, 6] = R_bm @ E2 * v_bar
    du_w = np.zeros((3, 8))
    du_w[:, 3:6] = -R_bm @ skew(E3) * (1.0 + s_w) * w_bar
    du_w[:, 7] = R_bm @ E3 * w_bar

    J_p, J_th = jacobian[0:3], jacobian[3:6]
    new_jac = np.vstack([
        J_p + dp_dth @ J_th + dp_du_v @ du_v + dp_du_w @ du_w,
        E.T @ J_th + dth_du_w @ du_w,
    ])

    Phi = np.eye(8)
    Phi[0:3, 3:6] = dp_dth
    Phi[0:3, 6] = dp_du_v @ du_v[:, 6]
    Phi[0:3, 7] = dp_du_w @ du_w[:, 7]
    Phi[3:6, 3:6] = E.T
    Phi[3:6, 7] = dth_du_w @ du_w[:, 7]

    G = np.zeros((8, 4))
    G[0:3, 0] = dp_du_v @ (-(1.0 + s_v) * R_bm @ E2)
    G[0:3, 1] = dp_du_w @ (-(1.0 + s_w) * R_bm @ E3)
    G[3:6, 1] = dth_du_w @ (-(1.0 + s_w) * R_bm @ E3)
    G[6, 2] = 1.0
    G[7, 3] = 1.0

    return OdoStep(dp + R @ E_h @ u_v * dt, R @ E, new_jac, Phi, G)


@dataclass(frozen=True)
class OdoPreintegrated:
    dt: float
    dp: np.ndarray
    dq: np.ndarray
    s_v: float                      # linearization point
    s_w: float
    mount: MountExtrinsics
    covariance: np.ndarray          # 8 x 8 over [δp, δθ, δs_v, δs_ω]
    jacobian: np.ndarray            # 6 x 8, rows [δp, δθ], cols [p^b_m, θ^b_m, s_v, s_ω]
    odo: OdoSeries
    gyro: ImuSeries
    gyro_bias: np.ndarray
    intrinsics: OdometerIntrinsics
    noise: SensorNoiseSpec

    @cached_property
    def dR(self) -> np.ndarray:
        return quat_to_rot(self.dq)

    def calibration_delta(self, translation, R_bm, s_v, s_w) -> np.ndarray:
        return np.concatenate((
            np.asarray(translation) - self.mount.translation,
            so3_log(self.mount.rotation.T @ R_bm),
            [s_v - self.s_v, s_w - self.s_w],
        ))

    def corrected(self, translation, R_bm, s_v, s_w) -> Tuple[np.ndarray, np.ndarray]:
        """First-order correction of (δp, δR) for a new calibration estimate."""
        delta = self.calibration_delta(translation, R_bm, s_v, s_w)
        return self.dp + self.jacobian[0:3] @ delta, self.dR @ so3_exp(self.jacobian[3:6] @ delta)

    def needs_reintegration(self, translation, R_bm, s_v, s_w, translation_tol: float,
                            rotation_tol: float, scale_tol: float) -> bool:
        delta = self.calibration_delta(translation, R_bm, s_v, s_w)
        return bool(np.linalg.norm(delta[0:3]) > translation_tol
                    or np.linalg.norm(delta[3:6]) > rotation_tol
                    or abs(delta[6]) > scale_tol or abs(delta[7]) > scale_tol)

    def reintegrate(self, translation, R_bm, s_v, s_w, gyro_bias: Optional[np.ndarray] = None) -> "OdoPreintegrated":
        intrinsics = self.intrinsics.model_copy(update={"s_v": s_v, "s_w": s_w})
        mount = MountExtrinsics(np.asarray(R_bm, dtype=float), np.asarray(translation, dtype=float))
        bias = self.gyro_bias if gyro_bias is None else gyro_bias
        return odo_preintegrate(self.odo, self.gyro, intrinsics, mount, bias, self.noise)


def odo_preintegrate(
    odo: OdoSeries,
    gyro: ImuSeries,
    intrinsics: OdometerIntrinsics,
    mount: MountExtrinsics,
    gyro_bias: Optional[np.ndarray] = None,
    noise: Optional[SensorNoiseSpec] = None,
    max_gyro_gap: float = 0.1,
) -> OdoPreintegrated:
    noise = noise or SensorNoiseSpec()
    gyro_bias = np.zeros(3) if gyro_bias is None else np.asarray(gyro_bias, dtype=float)
    if len(odo) < 2:
        raise ValueError("odometer preintegration needs at least two samples")
    if len(gyro) < 2 or gyro.t[0] > odo.t[0] + 1e-9 or gyro.t[-1] < odo.t[-1] - 1e-9:
        raise ValueError(f"gyro stream does not cover [{odo.t[0]}, {odo.t[-1]}]")
    if gyro.max_gap() > max_gyro_gap + 1e-12:
        raise ValueError(f"gyro gap {gyro.max_gap():.3f} s exceeds {max_gyro_gap} s")

    walk_v = max(intrinsics.walk_v, SCALE_WALK_FLOOR)
    walk_w = max(intrinsics.walk_w, SCALE_WALK_FLOOR)
    sigma_v = noise.odo_linear_noise
    sigma_w = noise.odo_angular_noise_si

    steps = np.diff(odo.t)
    mids = odo.t[:-1] + 0.5 * steps
    omega_mid = gyro.gyro_at(mids) - gyro_bias

    dp = np.zeros(3)
    R = np.eye(3)
    jac = np.zeros((6, 8))
    cov = np.zeros((8, 8))
    for k, dt in enumerate(steps):
        step = odo_step(dp, R, jac, 0.5 * (odo.v[k] + odo.v[k + 1]), 0.5 * (odo.omega[k] + odo.omega[k + 1]),
                        omega_mid[k], intrinsics.s_v, intrinsics.s_w, mount, dt)
        Q = np.diag([sigma_v ** 2, sigma_w ** 2, walk_v ** 2 * dt, walk_w ** 2 * dt])
        cov = step.transition @ cov @ step.transition.T + step.noise_map @ Q @ step.noise_map.T
        dp, R, jac = step.dp, step.R, step.jacobian

    return OdoPreintegrated(
        dt=float(odo.t[-1] - odo.t[0]),
        dp=dp,
        dq=rot_to_quat(R),
        s_v=intrinsics.s_v,
        s_w=intrinsics.s_w,
        mount=mount,
        covariance=0.5 * (cov + cov.T),
        jacobian=jac,
        odo=odo,
        gyro=gyro,
        gyro_bias=gyro_bias,
        intrinsics=intrinsics,
        noise=noise,
    )
