"""IMU preintegration on the rotation manifold.

Deltas are expressed in the b-frame of the first epoch and exclude gravity,
which is applied in the w-frame when predicting or evaluating the factor.
Error-state ordering is ``[δp, δθ, δv, δb_a, δb_g]``.
"""
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from calib_config import SensorNoiseSpec
from fgo.states import NavState
from geomath.frames import GRAVITY
from geomath.rotation import rot_to_quat, quat_to_rot, right_jacobian, skew, so3_exp
from preintegration.models import ImuSample, ImuSeries

logger = structlog.get_logger()

P, TH, V, BA, BG = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15)


@dataclass(frozen=True)
class ImuPreintegrated:
    dt: float
    dp: np.ndarray
    dv: np.ndarray
    dq: np.ndarray
    accel_bias: np.ndarray          # linearization point
    gyro_bias: np.ndarray
    covariance: np.ndarray          # 15 x 15
    jacobian: np.ndarray            # 15 x 15, d(end error) / d(start error)
    series: ImuSeries
    noise: SensorNoiseSpec

    @cached_property
    def dR(self) -> np.ndarray:
        return quat_to_rot(self.dq)

    @property
    def bias_jacobians(self) -> dict:
        J = self.jacobian
        return {
            "p_ba": J[P, BA], "p_bg": J[P, BG],
            "q_bg": J[TH, BG],
            "v_ba": J[V, BA], "v_bg": J[V, BG],
        }

    def corrected(self, accel_bias: np.ndarray, gyro_bias: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """First-order bias correction of (Δp, Δv, ΔR)."""
        dba = accel_bias - self.accel_bias
        dbg = gyro_bias - self.gyro_bias
        J = self.bias_jacobians
        dp = self.dp + J["p_ba"] @ dba + J["p_bg"] @ dbg
        dv = self.dv + J["v_ba"] @ dba + J["v_bg"] @ dbg
        dR = self.dR @ so3_exp(J["q_bg"] @ dbg)
        return dp, dv, dR

    def needs_reintegration(self, accel_bias, gyro_bias, accel_tol: float, gyro_tol: float) -> bool:
        return (np.linalg.norm(accel_bias - self.accel_bias) > accel_tol
                or np.linalg.norm(gyro_bias - self.gyro_bias) > gyro_tol)

    def reintegrate(self, accel_bias, gyro_bias) -> "ImuPreintegrated":
        return imu_preintegrate(self.series, (accel_bias, gyro_bias), self.noise)

    def predict(self, nav: NavState) -> NavState:
        """Propagates ``nav`` through the interval with its own bias estimate."""
        dp, dv, dR = self.corrected(nav.accel_bias, nav.gyro_bias)
        R = nav.rotation
        T = self.dt
        return NavState(
            t=nav.t + T,
            position=nav.position + nav.velocity * T + 0.5 * GRAVITY * T ** 2 + R @ dp,
            velocity=nav.velocity + GRAVITY * T + R @ dv,
            attitude=rot_to_quat(R @ dR),
            accel_bias=nav.accel_bias.copy(),
            gyro_bias=nav.gyro_bias.copy(),
        )


def imu_preintegrate(
    samples: Union[ImuSeries, Sequence[ImuSample]],
    bias: Tuple[np.ndarray, np.ndarray],
    noise: Optional[SensorNoiseSpec] = None,
    max_dt: float = 0.1,
) -> ImuPreintegrated:
    """Midpoint preintegration of bias-corrected samples with per-step covariance propagation."""
    series = samples if isinstance(samples, ImuSeries) else ImuSeries.from_samples(list(samples))
    noise = noise or SensorNoiseSpec()
    if len(series) < 2:
        raise ValueError("IMU preintegration needs at least two samples")
    steps = np.diff(series.t)
    if np.any(steps <= 0.0):
        raise ValueError("IMU timestamps must be strictly increasing")
    if np.any(steps > max_dt + 1e-12):
        raise ValueError(f"IMU sample gap {steps.max():.3f} s exceeds {max_dt} s")

    ba = np.asarray(bias[0], dtype=float)
    bg = np.asarray(bias[1], dtype=float)
    qa = noise.accel_noise_density ** 2
    qg = noise.gyro_noise_density ** 2
    qba = noise.accel_bias_walk ** 2
    qbg = noise.gyro_bias_walk ** 2

    R = np.eye(3)
    dp = np.zeros(3)
    dv = np.zeros(3)
    cov = np.zeros((15, 15))
    jac = np.eye(15)
    I3 = np.eye(3)

    for k, dt in enumerate(steps):
        a = 0.5 * (series.accel[k] + series.accel[k + 1]) - ba
        w = 0.5 * (series.gyro[k] + series.gyro[k + 1]) - bg
        E = so3_exp(w * dt)
        E_h = so3_exp(0.5 * w * dt)
        Jr = right_jacobian(w * dt)
        Jr_h = right_jacobian(0.5 * w * dt)
        f = E_h @ a

        d_acc_d_th = -R @ skew(f)                          # d(R f)/dδθ
        d_acc_d_ba = -R @ E_h
        d_acc_d_bg = 0.5 * dt * R @ E_h @ skew(a) @ Jr_h

        A = np.eye(15)
        A[P, TH] = 0.5 * dt ** 2 * d_acc_d_th
        A[P, V] = I3 * dt
        A[P, BA] = 0.5 * dt ** 2 * d_acc_d_ba
        A[P, BG] = 0.5 * dt ** 2 * d_acc_d_bg
        A[TH, TH] = E.T
        A[TH, BG] = -Jr * dt
        A[V, TH] = dt * d_acc_d_th
        A[V, BA] = dt * d_acc_d_ba
        A[V, BG] = dt * d_acc_d_bg

        B = np.zeros((15, 12))          # [η_a, η_g, η_ba, η_bg]
        B[0:9, 0:3] = A[0:9, BA]
        B[0:9, 3:6] = A[0:9, BG]
        B[BA, 6:9] = I3
        B[BG, 9:12] = I3
        Q = np.diag(np.concatenate((
            np.full(3, qa / dt), np.full(3, qg / dt), np.full(3, qba * dt), np.full(3, qbg * dt),
        )))

        dp = dp + dv * dt + 0.5 * R @ f * dt ** 2
        dv = dv + R @ f * dt
        R = R @ E

        cov = A @ cov @ A.T + B @ Q @ B.T
        jac = A @ jac

    return ImuPreintegrated(
        dt=float(series.t[-1] - series.t[0]),
        dp=dp,
        dv=dv,
        dq=rot_to_quat(R),
        accel_bias=ba.copy(),
        gyro_bias=bg.copy(),
        covariance=0.5 * (cov + cov.T),
        jacobian=jac,
        series=series,
        noise=noise,
    )
