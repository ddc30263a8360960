import math
from enum import Enum

import numpy as np
from pydantic import BaseModel, field_validator

# WGS-84
WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)

GRAVITY = np.array([0.0, 0.0, -9.80665])   # w-frame (ENU), flat over the workspace


class FrameTag(str, Enum):
    """Reference frames used across the estimator."""
    WORLD = "w"   # local world frame, ENU axes, origin at the GeodeticOrigin; coincides with n
    NAV = "n"     # East-North-Up at the origin
    ECEF = "e"    # Earth-centred Earth-fixed, treated as inertial
    BODY = "b"    # IMU body frame
    MOUNT = "m"   # vehicle frame, Right-Forward-Up; odometer speed is along +Y


class GeodeticOrigin(BaseModel):
    """Anchor of the n-frame on the WGS-84 ellipsoid (radians, metres)."""
    lat: float
    lon: float
    height: float = 0.0

    @field_validator("lat")
    @classmethod
    def _lat_range(cls, value: float) -> float:
        if abs(value) > math.pi / 2 + 1e-12:
            raise ValueError("latitude must satisfy |lat| <= pi/2")
        return value

    @classmethod
    def from_degrees(cls, lat_deg: float, lon_deg: float, height: float = 0.0) -> "GeodeticOrigin":
        return cls(lat=math.radians(lat_deg), lon=math.radians(lon_deg), height=height)

    @property
    def ecef(self) -> np.ndarray:
        return geodetic_to_ecef(self.lat, self.lon, self.height)

    @property
    def rotation(self) -> np.ndarray:
        """R^e_n at the origin."""
        return ecef_enu_rotation(self)


def geodetic_to_ecef(lat, lon, height):
    """Vectorized over array inputs; returns (..., 3)."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    height = np.asarray(height, dtype=float)
    sin_lat = np.sin(lat)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * sin_lat ** 2)
    x = (n + height) * np.cos(lat) * np.cos(lon)
    y = (n + height) * np.cos(lat) * np.sin(lon)
    z = (n * (1.0 - WGS84_E2) + height) * sin_lat
    return np.stack([x, y, z], axis=-1)


def ecef_to_geodetic(xyz):
    """Inverse of :func:`geodetic_to_ecef`; returns ``(lat, lon, height)`` arrays."""
    xyz = np.asarray(xyz, dtype=float)
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    lon = np.arctan2(y, x)
    p = np.hypot(x, y)
    lat = np.arctan2(z, p * (1.0 - WGS84_E2))
    for _ in range(10):
        sin_lat = np.sin(lat)
        n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * sin_lat ** 2)
        height = p * np.cos(lat) + z * sin_lat - WGS84_A * np.sqrt(1.0 - WGS84_E2 * sin_lat ** 2)
        lat = np.arctan2(z, p * (1.0 - WGS84_E2 * n / (n + height)))
    sin_lat = np.sin(lat)
    height = p * np.cos(lat) + z * sin_lat - WGS84_A * np.sqrt(1.0 - WGS84_E2 * sin_lat ** 2)
    return lat, lon, height


def _enu_rotation(lat: float, lon: float) -> np.ndarray:
    sl, cl = math.sin(lat), math.cos(lat)
    so, co = math.sin(lon), math.cos(lon)
    east = [-so, co, 0.0]
    north = [-sl * co, -sl * so, cl]
    up = [cl * co, cl * so, sl]
    return np.array([east, north, up]).T


def ecef_enu_rotation(origin: GeodeticOrigin) -> np.ndarray:
    """R^e_n: columns are the East, North and Up unit vectors at ``origin`` in ECEF."""
    return _enu_rotation(origin.lat, origin.lon)


def enu_to_ecef(enu, origin: GeodeticOrigin) -> np.ndarray:
    enu = np.asarray(enu, dtype=float)
    return origin.ecef + enu @ origin.rotation.T


def ecef_to_enu(xyz, origin: GeodeticOrigin) -> np.ndarray:
    xyz = np.asarray(xyz, dtype=float)
    return (xyz - origin.ecef) @ origin.rotation


_EARTH_FRAMES = (FrameTag.WORLD, FrameTag.NAV, FrameTag.ECEF)


def convert_position(point, source: FrameTag, target: FrameTag, origin: GeodeticOrigin) -> np.ndarray:
    """Moves a position between the world, navigation and ECEF frames.

    Body and mount frames ride on the vehicle and need its pose, so they are rejected.
    """
    for tag in (source, target):
        if tag not in _EARTH_FRAMES:
            raise ValueError(f"frame '{tag.value}' is attached to the vehicle")
    point = np.asarray(point, dtype=float)
    if source == target or FrameTag.ECEF not in (source, target):
        return point.copy()   # w and n share origin and axes
    if source == FrameTag.ECEF:
        return ecef_to_enu(point, origin)
    return enu_to_ecef(point, origin)


def elevation_azimuth(sat_ecef, receiver_ecef) -> tuple[float, float]:
    """Elevation and azimuth (rad) of a satellite seen from ``receiver_ecef``."""
    receiver_ecef = np.asarray(receiver_ecef, dtype=float)
    lat, lon, _ = ecef_to_geodetic(receiver_ecef)
    los = np.asarray(sat_ecef, dtype=float) - receiver_ecef
    e, n, u = _enu_rotation(float(lat), float(lon)).T @ (los / np.linalg.norm(los))
    return float(np.arcsin(np.clip(u, -1.0, 1.0))), float(np.arctan2(e, n) % (2.0 * np.pi))
