"""Named simulation scenarios.

``default`` mirrors the calibration run: stand still, accelerate, drive
straight, then circle until the end. ``straight`` never turns, which leaves
the extrinsic rotation partly unobservable. ``dr_validation`` drives
straight legs joined by 90° turns for the dead-reckoning evaluation.
``spatial`` only provides virtual body rates with full 3-D rotation.
"""
from typing import Callable, Dict, List, Optional

import numpy as np
import structlog

from calib_config import CalibSettings, CalibrationGuess, SimulationSettings, settings as default_settings
from fgo.inputs import CalibrationDataset, ScenarioInfo, TruthCalibration
from geomath.frames import FrameTag, GeodeticOrigin, convert_position
from observability.analysis import VirtualBodyRates
from preintegration.models import MountExtrinsics
from simulator.constellation import synthesize_constellation
from simulator.faults import FaultSpec, inject_faults
from simulator.measurements import ReceiverClock, synthesize_measurements
from simulator.trajectory import (
    Circle, Stationary, StraightAccel, StraightConst, TrajectorySpec, generate_trajectory,
)

logger = structlog.get_logger()


# ──────────────────────────────────────────────
# Trajectories
# ──────────────────────────────────────────────
def default_trajectory(sim: SimulationSettings) -> TrajectorySpec:
    """20 s stationary, 0.25 m/s from 20 s, straight until 45 s, then circling."""
    circle = max(sim.duration - 45.0, 4.0)
    return TrajectorySpec(
        phases=[
            Stationary(duration=20.0),
            StraightAccel(accel=0.25, v_target=0.25),
            StraightConst(duration=24.0),
            Circle(radius=2.5, omega=0.1, duration=circle, ramp=2.0),
        ],
        start_heading_deg=sim.start_heading_deg,
    )


def straight_trajectory(sim: SimulationSettings) -> TrajectorySpec:
    return TrajectorySpec(
        phases=[
            Stationary(duration=20.0),
            StraightAccel(accel=0.5, v_target=1.5),
            StraightConst(duration=max(sim.duration - 23.0, 1.0)),
        ],
        start_heading_deg=sim.start_heading_deg,
    )


def dr_validation_trajectory(sim: SimulationSettings) -> TrajectorySpec:
    """Straight legs at 1.2 m/s joined by left turns of 90°."""
    omega, ramp = 0.1, 2.0
    turn = np.pi / 2.0 / omega + ramp
    phases = [Stationary(duration=10.0), StraightAccel(accel=0.5, v_target=1.2)]
    elapsed = 10.0 + 1.2 / 0.5
    leg = 50.0
    while elapsed + leg + turn < sim.duration:
        phases += [StraightConst(duration=leg), Circle(radius=1.2 / omega, omega=omega, duration=turn, ramp=ramp)]
        elapsed += leg + turn
    if sim.duration - elapsed > 0.0:
        phases.append(StraightConst(duration=sim.duration - elapsed))
    return TrajectorySpec(phases=phases, start_heading_deg=sim.start_heading_deg)


SCENARIOS: Dict[str, Callable[[SimulationSettings], TrajectorySpec]] = {
    "default": default_trajectory,
    "straight": straight_trajectory,
    "dr_validation": dr_validation_trajectory,
}
RATE_ONLY_SCENARIOS = {"spatial"}
SCENARIO_NAMES: List[str] = sorted(SCENARIOS) + sorted(RATE_ONLY_SCENARIOS)


def spatial_rates(duration: float = 60.0, rate: float = 10.0) -> List[VirtualBodyRates]:
    """Virtual body rates with rotation about all three axes."""
    rates = []
    for t in np.arange(int(duration * rate) + 1) / rate:
        omega = np.array([0.3 * np.sin(0.9 * t), 0.2 * np.cos(0.7 * t), 0.1 + 0.05 * np.sin(0.3 * t)])
        velocity = np.array([0.1 * np.sin(0.5 * t), 1.0 + 0.2 * np.cos(t), 0.05 * np.sin(1.1 * t)])
        rates.append(VirtualBodyRates(t=float(t), velocity=velocity, angular_rate=omega))
    return rates


# ──────────────────────────────────────────────
# Calibration Guess
# ──────────────────────────────────────────────
def perturbed_guess(sim: SimulationSettings, rng: np.random.Generator) -> CalibrationGuess:
    """Truth plus Gaussian perturbations on translation, angles and scale factors."""
    translation = np.asarray(sim.truth_translation) + rng.normal(0.0, sim.guess_translation_std, 3)
    rpy = np.asarray(sim.truth_rpy_deg) + rng.normal(0.0, sim.guess_rotation_std_deg, 3)
    s_v, s_w = rng.normal(0.0, sim.guess_scale_std, 2)
    return CalibrationGuess(
        translation=tuple(float(x) for x in translation),
        rpy_deg=tuple(float(x) for x in rpy),
        s_v=float(s_v),
        s_w=float(s_w),
    )


# ──────────────────────────────────────────────
# Simulation
# ──────────────────────────────────────────────
def simulate(
    name: str = "default",
    config: Optional[CalibSettings] = None,
    seed: Optional[int] = None,
    faults: Optional[FaultSpec] = None,
    noiseless: bool = False,
) -> CalibrationDataset:
    """Builds a complete dataset for a named scenario; identical inputs give identical data.

    With ``noiseless`` the streams carry no noise and no sensor bias, while the
    scenario keeps the configured noise levels for weighting the estimator.
    """
    config = config or default_settings
    if name in RATE_ONLY_SCENARIOS:
        raise ValueError(f"scenario '{name}' provides virtual rates only; use spatial_rates()")
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario '{name}', expected one of {SCENARIO_NAMES}")
    sim = config.simulation
    noise = config.noise
    seed = sim.seed if seed is None else seed
    geometry_seq, sensor_seq, guess_seq, fault_seq = np.random.SeedSequence(seed).spawn(4)

    spec = SCENARIOS[name](sim)
    trajectory = generate_trajectory(spec)
    mount = MountExtrinsics.from_rpy(sim.truth_translation, *np.radians(sim.truth_rpy_deg))
    motion = trajectory.body_motion(mount)

    origin = GeodeticOrigin.from_degrees(sim.origin_lat_deg, sim.origin_lon_deg, sim.origin_height)
    base_ecef = convert_position(sim.base_offset_enu, FrameTag.NAV, FrameTag.ECEF, origin)
    constellation = synthesize_constellation(
        sim.n_satellites, origin, np.random.default_rng(geometry_seq),
        constellations=sim.constellations, pdop_range=sim.pdop_range,
        elevation_mask_deg=sim.elevation_mask_deg,
    )
    streams = synthesize_measurements(
        motion, constellation, noise.noiseless() if noiseless else noise,
        lever_arm=np.asarray(sim.truth_lever_arm, dtype=float),
        base_ecef=base_ecef,
        bands=sim.bands,
        rover_clock=ReceiverClock(sim.receiver_clock_offset, sim.receiver_clock_drift),
        base_clock=ReceiverClock(-0.5 * sim.receiver_clock_offset, -0.5 * sim.receiver_clock_drift),
        seed=int(sensor_seq.generate_state(1)[0]),
        duration=trajectory.duration,
    )

    guess_rng = np.random.default_rng(guess_seq)
    if sim.perturb_guess:
        guess = perturbed_guess(sim, guess_rng)
        yaw_guess = spec.start_heading_deg + float(guess_rng.normal(0.0, sim.guess_yaw_std_deg))
    else:
        guess = config.initial_guess
        yaw_guess = spec.start_heading_deg

    truth = TruthCalibration(
        translation=sim.truth_translation,
        rpy_deg=sim.truth_rpy_deg,
        s_v=float(noise.scale_truth[0]),
        s_w=float(noise.scale_truth[1]),
        lever_arm=sim.truth_lever_arm,
        accel_bias=tuple(float(x) for x in streams.accel_bias),
        gyro_bias=tuple(float(x) for x in streams.gyro_bias),
        ambiguities=streams.ambiguities,
    )
    scenario = ScenarioInfo(
        name=name,
        seed=seed,
        origin_lat_deg=sim.origin_lat_deg,
        origin_lon_deg=sim.origin_lon_deg,
        origin_height=sim.origin_height,
        base_position=tuple(float(x) for x in base_ecef),
        lever_arm=sim.truth_lever_arm,
        initial_guess=guess,
        initial_yaw_deg=yaw_guess,
        initial_position=tuple(float(x) for x in motion.position[0]),
        noise=noise,
        truth=truth,
        duration=trajectory.duration,
    )
    dataset = CalibrationDataset(rover=streams.rover, base=streams.base, imu=streams.imu, odo=streams.odo,
                                 scenario=scenario, truth=streams.truth)
    if faults is not None and not faults.empty:
        dataset = inject_faults(dataset, faults, np.random.default_rng(fault_seq))
    logger.info("scenario_simulated", scenario=name, seed=seed, duration=trajectory.duration,
                pdop=round(constellation.pdop, 3), faults=len(dataset.scenario.faults))
    return dataset
