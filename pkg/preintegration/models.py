from dataclasses import dataclass
from typing import Sequence

import numpy as np
from pydantic import BaseModel, field_validator

from geomath.rotation import euler_to_rot


@dataclass(frozen=True)
class ImuSample:
    t: float
    accel: np.ndarray      # specific force, b-frame, m/s^2
    gyro: np.ndarray       # ω^b_ib, rad/s


@dataclass(frozen=True)
class OdoSample:
    t: float
    v: float               # forward speed reading, m/s
    omega: float           # bearing-rate reading, rad/s


def _check_time(t: np.ndarray, name: str) -> None:
    if t.ndim != 1:
        raise ValueError(f"{name}: time must be 1-D")
    if len(t) > 1 and np.any(np.diff(t) <= 0.0):
        raise ValueError(f"{name}: timestamps must be strictly increasing")


def _slice_with_boundaries(t: np.ndarray, t0: float, t1: float, columns: Sequence[np.ndarray], name: str):
    tol = 1e-9
    if t0 > t1:
        raise ValueError(f"{name}: empty interval [{t0}, {t1}]")
    if len(t) == 0 or t0 < t[0] - tol or t1 > t[-1] + tol:
        raise ValueError(f"{name}: interval [{t0}, {t1}] not covered by samples")
    inner = (t > t0 + tol) & (t < t1 - tol)
    times = np.concatenate(([t0], t[inner], [t1]))
    sliced = []
    for col in columns:
        if col.ndim == 1:
            edges = np.interp([t0, t1], t, col)
            sliced.append(np.concatenate(([edges[0]], col[inner], [edges[1]])))
        else:
            edges = np.column_stack([np.interp([t0, t1], t, col[:, k]) for k in range(col.shape[1])])
            sliced.append(np.vstack([edges[:1], col[inner], edges[1:]]))
    return times, sliced


@dataclass(frozen=True)
class ImuSeries:
    """Time-ordered IMU samples stored as arrays."""
    t: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray

    def __post_init__(self):
        _check_time(self.t, "imu")
        if self.accel.shape != (len(self.t), 3) or self.gyro.shape != (len(self.t), 3):
            raise ValueError("imu: accel and gyro must have shape (n, 3)")

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def from_samples(cls, samples: Sequence[ImuSample]) -> "ImuSeries":
        if not samples:
            return cls(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)))
        return cls(np.array([s.t for s in samples], dtype=float),
                   np.array([s.accel for s in samples], dtype=float),
                   np.array([s.gyro for s in samples], dtype=float))

    def between(self, t0: float, t1: float) -> "ImuSeries":
        """Samples within [t0, t1], with linearly interpolated samples at both ends."""
        times, (accel, gyro) = _slice_with_boundaries(self.t, t0, t1, (self.accel, self.gyro), "imu")
        return ImuSeries(times, accel, gyro)

    def max_gap(self) -> float:
        return float(np.max(np.diff(self.t))) if len(self.t) > 1 else 0.0

    def gyro_at(self, times: np.ndarray) -> np.ndarray:
        return np.column_stack([np.interp(times, self.t, self.gyro[:, k]) for k in range(3)])


@dataclass(frozen=True)
class OdoSeries:
    t: np.ndarray
    v: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        _check_time(self.t, "odometer")
        if self.v.shape != self.t.shape or self.omega.shape != self.t.shape:
            raise ValueError("odometer: v and omega must match the time axis")

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def from_samples(cls, samples: Sequence[OdoSample]) -> "OdoSeries":
        return cls(np.array([s.t for s in samples], dtype=float),
                   np.array([s.v for s in samples], dtype=float),
                   np.array([s.omega for s in samples], dtype=float))

    def between(self, t0: float, t1: float) -> "OdoSeries":
        times, (v, omega) = _slice_with_boundaries(self.t, t0, t1, (self.v, self.omega), "odometer")
        return OdoSeries(times, v, omega)


class OdometerIntrinsics(BaseModel):
    s_v: float = 0.0                 # speed scale factor
    s_w: float = 0.0                 # bearing-rate scale factor
    walk_v: float = 0.0              # random-walk density of s_v, 1/sqrt(s)
    walk_w: float = 0.0

    @field_validator("s_v", "s_w")
    @classmethod
    def _positive_gain(cls, value: float) -> float:
        if 1.0 + value <= 0.0:
            raise ValueError("1 + s must be > 0")
        return value


@dataclass(frozen=True)
class MountExtrinsics:
    """IMU-odometer extrinsics: R^b_m rotates m-frame vectors into b; p^b_m is the m origin in b."""
    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def from_rpy(cls, translation, roll: float, pitch: float, yaw: float) -> "MountExtrinsics":
        return cls(euler_to_rot(roll, pitch, yaw), np.asarray(translation, dtype=float))

    @classmethod
    def identity(cls) -> "MountExtrinsics":
        return cls(np.eye(3), np.zeros(3))
