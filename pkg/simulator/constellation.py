"""Synthetic satellite constellation on circular orbits.

Satellites are placed so that, seen from the origin at t = 0, they sit at
sampled azimuth/elevation pairs; the orbital plane through that point is
random. Layouts are drawn until the position DOP of the visible set falls in
the requested range.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog

from geomath.frames import GeodeticOrigin, elevation_azimuth
from gnss.constants import EARTH_GM, ORBIT_RADIUS

logger = structlog.get_logger()

MIN_SATELLITES = 4
MIN_DOP_SATELLITES = 6
TETRAHEDRAL_ELEVATION = np.arcsin(1.0 / 3.0)       # 19.47°, with one satellite at zenith
ELEVATION_MARGIN_DEG = 8.0                          # keeps satellites above the mask over a run


@dataclass(frozen=True)
class SatelliteOrbit:
    sat: str
    r0: np.ndarray                # unit ECEF position at t = 0
    s0: np.ndarray                # unit in-plane direction of motion
    radius: float                 # m
    mean_motion: float            # rad/s
    clock_offset: float           # s
    clock_drift: float            # s/s

    def position(self, t: float) -> np.ndarray:
        a = self.mean_motion * t
        return self.radius * (np.cos(a) * self.r0 + np.sin(a) * self.s0)

    def velocity(self, t: float) -> np.ndarray:
        a = self.mean_motion * t
        return self.radius * self.mean_motion * (-np.sin(a) * self.r0 + np.cos(a) * self.s0)

    def clock(self, t: float) -> float:
        return self.clock_offset + self.clock_drift * t


@dataclass(frozen=True)
class Constellation:
    satellites: Tuple[SatelliteOrbit, ...]
    origin: GeodeticOrigin
    elevation_mask: float         # rad
    pdop: float                   # at the origin, t = 0

    def __len__(self) -> int:
        return len(self.satellites)

    def visible(self, t: float, receiver_ecef: np.ndarray) -> List[Tuple[SatelliteOrbit, float, float]]:
        """(orbit, elevation, azimuth) for satellites above the mask."""
        out = []
        for orbit in self.satellites:
            el, az = elevation_azimuth(orbit.position(t), receiver_ecef)
            if el > self.elevation_mask:
                out.append((orbit, el, az))
        return out


# ──────────────────────────────────────────────
# Geometry
# ──────────────────────────────────────────────
def los_enu(elevation: np.ndarray, azimuth: np.ndarray) -> np.ndarray:
    """Unit receiver-to-satellite vectors in ENU."""
    el, az = np.asarray(elevation, dtype=float), np.asarray(azimuth, dtype=float)
    return np.column_stack([np.cos(el) * np.sin(az), np.cos(el) * np.cos(az), np.sin(el)])


def geometry_matrix(elevation: Sequence[float], azimuth: Sequence[float]) -> np.ndarray:
    u = los_enu(elevation, azimuth)
    return np.column_stack([-u, np.ones(len(u))])


def position_dop(elevation: Sequence[float], azimuth: Sequence[float]) -> float:
    G = geometry_matrix(elevation, azimuth)
    if np.linalg.matrix_rank(G) < 4:
        return float("inf")
    Q = np.linalg.inv(G.T @ G)
    return float(np.sqrt(np.trace(Q[:3, :3])))


def _orbit_through(origin: GeodeticOrigin, elevation: float, azimuth: float, rng: np.random.Generator,
                   radius: float = ORBIT_RADIUS) -> Tuple[np.ndarray, np.ndarray]:
    o = origin.ecef
    u = origin.rotation @ los_enu([elevation], [azimuth])[0]
    b = float(o @ u)
    s = -b + np.sqrt(b * b - o @ o + radius ** 2)
    r0 = (o + s * u) / radius
    d = rng.normal(size=3)
    d -= (d @ r0) * r0
    return r0, d / np.linalg.norm(d)


def _layout_regular(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Zenith satellite plus a ring at the tetrahedral elevation."""
    el = np.concatenate(([np.pi / 2], np.full(n - 1, TETRAHEDRAL_ELEVATION)))
    az = np.concatenate(([0.0], 2.0 * np.pi * np.arange(n - 1) / (n - 1)))
    return el, az


def _layout_random(n: int, min_elevation: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    az = (2.0 * np.pi * (np.arange(n) + rng.uniform(-0.4, 0.4, n)) / n) % (2.0 * np.pi)
    sin_el = rng.uniform(np.sin(min_elevation), 1.0, n)
    return np.arcsin(sin_el), rng.permutation(az)


def satellite_ids(n: int, constellations: Sequence[str]) -> List[str]:
    counts = {c: 0 for c in constellations}
    ids = []
    for k in range(n):
        c = constellations[k % len(constellations)]
        counts[c] += 1
        ids.append(f"{c}{counts[c]:02d}")
    return ids


# ──────────────────────────────────────────────
# Synthesis
# ──────────────────────────────────────────────
def synthesize_constellation(
    n_sats: int,
    origin: GeodeticOrigin,
    rng: np.random.Generator,
    constellations: Sequence[str] = ("G",),
    pdop_range: Tuple[float, float] = (1.25, 1.45),
    elevation_mask_deg: float = 10.0,
    max_attempts: int = 5000,
    clock_offset: float = 1e-4,
    clock_drift: float = 1e-11,
) -> Constellation:
    if n_sats < MIN_SATELLITES:
        raise ValueError(f"need at least {MIN_SATELLITES} satellites, got {n_sats}")
    lo, hi = pdop_range
    mask = np.radians(elevation_mask_deg)
    if n_sats < MIN_DOP_SATELLITES:
        el, az = _layout_regular(n_sats)
        pdop = position_dop(el, az)
        logger.warning("dop_target_infeasible", n_sats=n_sats, pdop=round(pdop, 3), target=list(pdop_range))
    else:
        min_el = mask + np.radians(ELEVATION_MARGIN_DEG)
        best: Optional[Tuple[float, np.ndarray, np.ndarray]] = None
        for _ in range(max_attempts):
            el, az = _layout_random(n_sats, min_el, rng)
            pdop = position_dop(el, az)
            if lo <= pdop <= hi:
                best = (pdop, el, az)
                break
            miss = min(abs(pdop - lo), abs(pdop - hi))
            if best is None or miss < min(abs(best[0] - lo), abs(best[0] - hi)):
                best = (pdop, el, az)
        pdop, el, az = best
        if not lo <= pdop <= hi:
            logger.warning("dop_target_infeasible", n_sats=n_sats, pdop=round(pdop, 3), target=list(pdop_range))

    mean_motion = float(np.sqrt(EARTH_GM / ORBIT_RADIUS ** 3))
    satellites = []
    for sat, e, a in zip(satellite_ids(n_sats, constellations), el, az):
        r0, s0 = _orbit_through(origin, float(e), float(a), rng)
        satellites.append(SatelliteOrbit(
            sat=sat, r0=r0, s0=s0, radius=ORBIT_RADIUS, mean_motion=mean_motion,
            clock_offset=float(rng.uniform(-clock_offset, clock_offset)),
            clock_drift=float(rng.uniform(-clock_drift, clock_drift)),
        ))
    logger.info("constellation_synthesized", n_sats=n_sats, pdop=round(pdop, 3),
                constellations=list(constellations))
    return Constellation(satellites=tuple(satellites), origin=origin, elevation_mask=mask, pdop=pdop)
