"""Planar ground-vehicle trajectories built from motion phases.

Speed and yaw rate are piecewise linear in time, so the vehicle velocity is
continuous and the position is C¹. Everything is evaluated on a 1 kHz grid;
heading and position are integrated with the trapezoidal rule, which is
exact for the piecewise-linear yaw rate.
"""
from dataclasses import dataclass
from typing import Annotated, List, Literal, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, Field, field_validator, model_validator
from scipy.integrate import cumulative_trapezoid

from geomath.frames import GRAVITY
from geomath.rotation import rot_to_euler
from preintegration.models import MountExtrinsics

logger = structlog.get_logger()

GRID_RATE = 1000.0          # Hz


# ──────────────────────────────────────────────
# Phases
# ──────────────────────────────────────────────
class Stationary(BaseModel):
    kind: Literal["stationary"] = "stationary"
    duration: float = Field(gt=0)                    # s


class StraightAccel(BaseModel):
    kind: Literal["accel"] = "accel"
    accel: float = Field(gt=0)                       # m/s^2, magnitude
    v_target: float = Field(ge=0)                    # m/s


class StraightConst(BaseModel):
    kind: Literal["const"] = "const"
    duration: float = Field(gt=0)


class Circle(BaseModel):
    """Constant-radius arc; yaw rate ramps in and out over ``ramp`` seconds."""
    kind: Literal["circle"] = "circle"
    radius: float = Field(gt=0)                      # m
    omega: float                                     # rad/s, positive turns left
    duration: float = Field(gt=0)                    # s, ramps included
    ramp: float = Field(default=2.0, gt=0)           # s

    @field_validator("omega")
    @classmethod
    def _turning(cls, value: float) -> float:
        if value == 0.0:
            raise ValueError("circle yaw rate must be non-zero")
        return value

    @model_validator(mode="after")
    def _ramps_fit(self):
        if self.duration < 2.0 * self.ramp:
            raise ValueError("circle duration must cover both yaw-rate ramps")
        return self

    @property
    def speed(self) -> float:
        return self.radius * abs(self.omega)


Phase = Annotated[Union[Stationary, StraightAccel, StraightConst, Circle], Field(discriminator="kind")]


class TrajectorySpec(BaseModel):
    phases: List[Phase]
    start_heading_deg: float = 0.0                   # vehicle forward axis, CCW from north
    start_position: Tuple[float, float, float] = (0.0, 0.0, 0.0)    # m-frame origin, ENU m

    @model_validator(mode="after")
    def _contiguous(self):
        if not self.phases:
            raise ValueError("trajectory needs at least one phase")
        speed = 0.0
        for k, phase in enumerate(self.phases):
            if isinstance(phase, Stationary) and speed > 0.0:
                raise ValueError(f"phase {k}: stationary phase must follow a stop")
            if isinstance(phase, StraightAccel):
                speed = phase.v_target
            elif isinstance(phase, Circle):
                speed = phase.speed
        return self

    @property
    def duration(self) -> float:
        return float(_knots(self)[0][-1])


def _knots(spec: TrajectorySpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Breakpoints (t, speed, yaw rate) of the piecewise-linear profiles."""
    t, v, r = [0.0], [0.0], [0.0]

    def push(dt: float, speed: float, rate: float) -> None:
        t.append(t[-1] + dt)
        v.append(speed)
        r.append(rate)

    for phase in spec.phases:
        if isinstance(phase, Stationary):
            push(phase.duration, 0.0, 0.0)
        elif isinstance(phase, StraightAccel):
            dt = abs(phase.v_target - v[-1]) / phase.accel
            if dt > 0.0:
                push(dt, phase.v_target, 0.0)
        elif isinstance(phase, StraightConst):
            push(phase.duration, v[-1], 0.0)
        else:
            push(phase.ramp, phase.speed, phase.omega)
            push(phase.duration - 2.0 * phase.ramp, phase.speed, phase.omega)
            push(phase.ramp, phase.speed, 0.0)
    return np.asarray(t), np.asarray(v), np.asarray(r)


def _slopes(grid: np.ndarray, knots: np.ndarray, values: np.ndarray) -> np.ndarray:
    dv = np.diff(values) / np.maximum(np.diff(knots), 1e-12)
    idx = np.clip(np.searchsorted(knots, grid, side="right") - 1, 0, len(dv) - 1)
    return dv[idx]


# ──────────────────────────────────────────────
# Truth
# ──────────────────────────────────────────────
@dataclass(frozen=True)
class TrajectoryTruth:
    """Vehicle (m-frame origin) kinematics on the internal grid, ENU."""
    t: np.ndarray
    position: np.ndarray         # n x 3
    velocity: np.ndarray
    accel: np.ndarray
    heading: np.ndarray          # rad
    speed: np.ndarray            # m/s along the forward axis
    yaw_rate: np.ndarray         # rad/s
    yaw_accel: np.ndarray        # rad/s^2

    @property
    def duration(self) -> float:
        return float(self.t[-1])

    def index(self, times: Sequence[float]) -> np.ndarray:
        idx = np.rint(np.asarray(times, dtype=float) * GRID_RATE).astype(int)
        if np.any(idx < 0) or np.any(idx >= len(self.t)):
            raise ValueError("sample times outside the trajectory span")
        return idx

    def body_motion(self, mount: MountExtrinsics) -> "BodyMotion":
        """IMU kinematics given the true IMU-odometer extrinsics."""
        R_bm, p_bm = mount.rotation, mount.translation
        R_mb = R_bm.T
        n = len(self.t)
        c, s = np.cos(self.heading), np.sin(self.heading)
        R_wm = np.zeros((n, 3, 3))
        R_wm[:, 0, 0], R_wm[:, 0, 1], R_wm[:, 1, 0], R_wm[:, 1, 1] = c, -s, s, c
        R_wm[:, 2, 2] = 1.0
        R_wb = R_wm @ R_mb
        omega_m = np.zeros((n, 3))
        omega_m[:, 2] = self.yaw_rate
        alpha_m = np.zeros((n, 3))
        alpha_m[:, 2] = self.yaw_accel
        omega_b = omega_m @ R_bm.T
        alpha_b = alpha_m @ R_bm.T

        arm = np.einsum("nij,j->ni", R_wb, p_bm)
        w_x_p = np.cross(omega_b, p_bm)
        centripetal = np.cross(omega_b, w_x_p) + np.cross(alpha_b, p_bm)
        position = self.position - arm
        velocity = self.velocity - np.einsum("nij,nj->ni", R_wb, w_x_p)
        accel = self.accel - np.einsum("nij,nj->ni", R_wb, centripetal)
        specific_force = np.einsum("nji,nj->ni", R_wb, accel - GRAVITY)
        return BodyMotion(t=self.t, position=position, velocity=velocity, rotation=R_wb,
                          angular_rate=omega_b, specific_force=specific_force, vehicle=self)


@dataclass(frozen=True)
class BodyMotion:
    """IMU (b-frame) kinematics: p^w_b, v^w_b, R^w_b, ω^b and specific force."""
    t: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    rotation: np.ndarray         # n x 3 x 3
    angular_rate: np.ndarray
    specific_force: np.ndarray
    vehicle: TrajectoryTruth

    def antenna(self, lever: np.ndarray, idx: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Antenna position and velocity (ENU) at grid indices for body-frame lever ``lever``."""
        R = self.rotation[idx]
        position = self.position[idx] + np.einsum("nij,j->ni", R, lever)
        velocity = self.velocity[idx] + np.einsum("nij,nj->ni", R, np.cross(self.angular_rate[idx], lever))
        return position, velocity

    def frame(self, times: Sequence[float]) -> pd.DataFrame:
        """Truth rows at ``times``: IMU pose (attitude in degrees), velocity and body rates."""
        idx = self.vehicle.index(times)
        att = np.degrees(np.array([rot_to_euler(R) for R in self.rotation[idx]]))
        return pd.DataFrame({
            "t": self.t[idx],
            "x": self.position[idx, 0], "y": self.position[idx, 1], "z": self.position[idx, 2],
            "vx": self.velocity[idx, 0], "vy": self.velocity[idx, 1], "vz": self.velocity[idx, 2],
            "roll": att[:, 0], "pitch": att[:, 1], "yaw": att[:, 2],
            "wx": self.angular_rate[idx, 0], "wy": self.angular_rate[idx, 1], "wz": self.angular_rate[idx, 2],
            "speed": self.vehicle.speed[idx],
        })


def generate_trajectory(spec: TrajectorySpec) -> TrajectoryTruth:
    knots_t, knots_v, knots_r = _knots(spec)
    n = int(np.floor(knots_t[-1] * GRID_RATE + 1e-6)) + 1
    t = np.arange(n) / GRID_RATE
    speed = np.interp(t, knots_t, knots_v)
    yaw_rate = np.interp(t, knots_t, knots_r)
    speed_dot = _slopes(t, knots_t, knots_v)
    yaw_accel = _slopes(t, knots_t, knots_r)

    heading = np.radians(spec.start_heading_deg) + cumulative_trapezoid(yaw_rate, t, initial=0.0)
    forward = np.column_stack([-np.sin(heading), np.cos(heading), np.zeros(n)])
    left = np.column_stack([-np.cos(heading), -np.sin(heading), np.zeros(n)])
    velocity = speed[:, None] * forward
    accel = speed_dot[:, None] * forward + (speed * yaw_rate)[:, None] * left
    position = np.asarray(spec.start_position, dtype=float) + cumulative_trapezoid(velocity, t, axis=0, initial=0.0)

    logger.debug("trajectory_generated", duration=float(t[-1]), phases=len(spec.phases),
                 max_speed=float(speed.max()))
    return TrajectoryTruth(t=t, position=position, velocity=velocity, accel=accel, heading=heading,
                           speed=speed, yaw_rate=yaw_rate, yaw_accel=yaw_accel)
