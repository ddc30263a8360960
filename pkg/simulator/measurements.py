"""Synthetic GNSS, IMU and odometer streams from a truth trajectory.

GNSS observables per receiver, satellite and band:

    P = ρ + c(dt_r − dt^s) + T + I_f + ε_P
    L = ρ + c(dt_r − dt^s) + T − I_f + λN + ε_L         (metres)
    λD = ρ̇ + c(ṫ_r − ṫ^s) + ε_D

Tropospheric and ionospheric delays are evaluated at the origin, so they
are identical for rover and base and cancel in the double difference.
"""
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog

from calib_config import SensorNoiseSpec
from fgo.inputs import AmbiguityTruth
from geomath.frames import GeodeticOrigin, elevation_azimuth
from gnss.constants import SPEED_OF_LIGHT, frequency, wavelength
from gnss.models import GnssRawMeasurement, ObservationEpoch
from preintegration.models import ImuSeries, OdoSeries
from simulator.constellation import Constellation
from simulator.trajectory import BodyMotion

logger = structlog.get_logger()

TROPO_ZENITH = 2.3          # m
IONO_ZENITH_L1 = 3.0        # m, at the band-1 frequency
AMBIGUITY_RANGE = 50        # |N| bound per receiver, cycles


@dataclass(frozen=True)
class ReceiverClock:
    offset: float               # s
    drift: float                # s/s

    def bias(self, t: float) -> float:
        return self.offset + self.drift * t


@dataclass
class SyntheticStreams:
    rover: List[ObservationEpoch]
    base: List[ObservationEpoch]
    imu: ImuSeries
    odo: OdoSeries
    truth: pd.DataFrame                      # per GNSS epoch
    ambiguities: List[AmbiguityTruth]
    accel_bias: np.ndarray
    gyro_bias: np.ndarray


def sample_times(duration: float, rate: float) -> np.ndarray:
    n = int(np.floor(duration * rate + 1e-9)) + 1
    return np.arange(n) / rate


def _sigma(sigma0: float, elevation: float) -> float:
    return sigma0 * np.sqrt(1.0 + 1.0 / np.sin(elevation))


# ──────────────────────────────────────────────
# GNSS
# ──────────────────────────────────────────────
def draw_ambiguities(constellation: Constellation, bands: Sequence[str], rng: np.random.Generator) -> Dict[Tuple[str, str], int]:
    return {(orbit.sat, band): int(rng.integers(-AMBIGUITY_RANGE, AMBIGUITY_RANGE + 1))
            for orbit in constellation.satellites for band in bands}


def gnss_epochs(
    times: np.ndarray,
    positions: np.ndarray,
    velocities: np.ndarray,
    constellation: Constellation,
    bands: Sequence[str],
    clock: ReceiverClock,
    ambiguities: Dict[Tuple[str, str], int],
    noise: SensorNoiseSpec,
    rng: np.random.Generator,
) -> List[ObservationEpoch]:
    """Observation epochs for one receiver; ``positions``/``velocities`` are ECEF per epoch."""
    origin_ecef = constellation.origin.ecef
    epochs = []
    for t, rcv, rcv_vel in zip(times, positions, velocities):
        t = float(t)
        measurements = []
        for orbit, el, az in constellation.visible(t, rcv):
            sat_pos, sat_vel = orbit.position(t), orbit.velocity(t)
            los = sat_pos - rcv
            rho = float(np.linalg.norm(los))
            rho_dot = float(los @ (sat_vel - rcv_vel) / rho)
            el0, _ = elevation_azimuth(sat_pos, origin_ecef)
            tropo = TROPO_ZENITH / np.sin(el0)
            iono_l1 = IONO_ZENITH_L1 / np.sin(el0)
            clock_term = SPEED_OF_LIGHT * (clock.bias(t) - orbit.clock(t))
            rate_term = SPEED_OF_LIGHT * (clock.drift - orbit.clock_drift)
            for band in bands:
                lam = wavelength(orbit.sat, band)
                iono = iono_l1 * (frequency(orbit.sat, "1") / frequency(orbit.sat, band)) ** 2
                code = rho + clock_term + tropo + iono + _sigma(noise.pseudorange_sigma0, el) * rng.normal()
                phase = (rho + clock_term + tropo - iono + lam * ambiguities[(orbit.sat, band)]
                         + _sigma(noise.carrier_sigma0, el) * rng.normal())
                doppler = (rho_dot + rate_term + noise.doppler_sigma * rng.normal()) / lam
                measurements.append(GnssRawMeasurement(
                    t=t, sat=orbit.sat, band=band, wavelength=lam, pseudorange=code, carrier=phase,
                    doppler=doppler, sat_pos=sat_pos, sat_vel=sat_vel, sat_clock=orbit.clock(t),
                    sat_clock_drift=orbit.clock_drift, elevation=el, azimuth=az,
                ))
        epochs.append(ObservationEpoch(t=t, measurements=tuple(measurements)))
    return epochs


# ──────────────────────────────────────────────
# Inertial And Odometer
# ──────────────────────────────────────────────
def _signed(magnitude: float, rng: np.random.Generator) -> np.ndarray:
    return magnitude * rng.choice([-1.0, 1.0], size=3)


def imu_stream(motion: BodyMotion, noise: SensorNoiseSpec, duration: float,
               rng: np.random.Generator) -> Tuple[ImuSeries, np.ndarray, np.ndarray]:
    times = sample_times(duration, noise.imu_rate)
    idx = motion.vehicle.index(times)
    accel_bias = _signed(noise.accel_bias_si, rng)
    gyro_bias = _signed(noise.gyro_bias_si, rng)
    sigma_a = noise.accel_noise_density * np.sqrt(noise.imu_rate)
    sigma_g = noise.gyro_noise_density * np.sqrt(noise.imu_rate)
    accel = motion.specific_force[idx] + accel_bias + sigma_a * rng.normal(size=(len(idx), 3))
    gyro = motion.angular_rate[idx] + gyro_bias + sigma_g * rng.normal(size=(len(idx), 3))
    return ImuSeries(times, accel, gyro), accel_bias, gyro_bias


def scale_paths(times: np.ndarray, noise: SensorNoiseSpec, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """True (s_v, s_ω) at ``times``: the configured values plus their random walks."""
    dt = np.diff(times, prepend=times[0])
    paths = []
    for start, walk in zip(noise.scale_truth, noise.scale_random_walk):
        steps = walk * np.sqrt(dt) * rng.normal(size=len(times))
        paths.append(start + np.cumsum(steps))
    return paths[0], paths[1]


def odo_stream(motion: BodyMotion, noise: SensorNoiseSpec, duration: float,
               rng: np.random.Generator) -> Tuple[OdoSeries, np.ndarray, np.ndarray]:
    times = sample_times(duration, noise.odo_rate)
    idx = motion.vehicle.index(times)
    s_v, s_w = scale_paths(times, noise, rng)
    v = motion.vehicle.speed[idx] / (1.0 + s_v) + noise.odo_linear_noise * rng.normal(size=len(idx))
    omega = (motion.vehicle.yaw_rate[idx] / (1.0 + s_w)
             + noise.odo_angular_noise_si * rng.normal(size=len(idx)))
    return OdoSeries(times, v, omega), s_v, s_w


# ──────────────────────────────────────────────
# Assembly
# ──────────────────────────────────────────────
def synthesize_measurements(
    motion: BodyMotion,
    constellation: Constellation,
    noise: SensorNoiseSpec,
    *,
    lever_arm: np.ndarray,
    base_ecef: np.ndarray,
    bands: Sequence[str],
    rover_clock: ReceiverClock,
    base_clock: ReceiverClock,
    seed: int,
    duration: float,
) -> SyntheticStreams:
    """All sensor streams for one run; every random draw comes from ``seed``."""
    gnss_seq, amb_seq, imu_seq, odo_seq = np.random.SeedSequence(seed).spawn(4)
    origin: GeodeticOrigin = constellation.origin
    R_ew = origin.rotation

    times = sample_times(duration, noise.gnss_rate)
    idx = motion.vehicle.index(times)
    antenna_enu, antenna_vel = motion.antenna(np.asarray(lever_arm, dtype=float), idx)
    rover_ecef = origin.ecef + antenna_enu @ R_ew.T
    rover_vel = antenna_vel @ R_ew.T
    base_ecef = np.asarray(base_ecef, dtype=float)

    amb_rng = np.random.default_rng(amb_seq)
    n_rover = draw_ambiguities(constellation, bands, amb_rng)
    n_base = draw_ambiguities(constellation, bands, amb_rng)
    gnss_rng = np.random.default_rng(gnss_seq)
    rover = gnss_epochs(times, rover_ecef, rover_vel, constellation, bands, rover_clock, n_rover, noise, gnss_rng)
    base = gnss_epochs(times, np.tile(base_ecef, (len(times), 1)), np.zeros((len(times), 3)),
                       constellation, bands, base_clock, n_base, noise, gnss_rng)
    ambiguities = [AmbiguityTruth(sat=sat, band=band, t_from=0.0, n_sd=n_rover[(sat, band)] - n_base[(sat, band)])
                   for sat, band in sorted(n_rover)]

    imu, accel_bias, gyro_bias = imu_stream(motion, noise, duration, np.random.default_rng(imu_seq))
    odo, s_v, s_w = odo_stream(motion, noise, duration, np.random.default_rng(odo_seq))

    truth = motion.frame(times)
    for k, axis in enumerate("xyz"):
        truth[f"ba{axis}"] = accel_bias[k]
        truth[f"bg{axis}"] = gyro_bias[k]
    truth["s_v"] = np.interp(times, odo.t, s_v)
    truth["s_w"] = np.interp(times, odo.t, s_w)
    truth["clock_bias"] = [SPEED_OF_LIGHT * rover_clock.bias(t) for t in times]      # m
    truth["clock_drift"] = SPEED_OF_LIGHT * rover_clock.drift                         # m/s

    logger.info("measurements_synthesized", epochs=len(times), imu_samples=len(imu), odo_samples=len(odo),
                satellites=len(constellation), bands=list(bands))
    return SyntheticStreams(rover=rover, base=base, imu=imu, odo=odo, truth=truth, ambiguities=ambiguities,
                            accel_bias=accel_bias, gyro_bias=gyro_bias)
