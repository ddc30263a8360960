"""End-to-end online calibration over a synchronized dataset.

One estimator state is created per GNSS epoch. Each epoch the new state is
predicted by IMU preintegration, GNSS measurements are screened and
double-differenced, the oldest state is marginalized when the window is at
capacity, the window is optimized, and the float ambiguities are tested for
an integer fix.
"""
import json
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import structlog
from opentelemetry import trace

from ambiguity.resolution import AmbiguityFixFactor, FixResult, ar_factor, ils_fix, partial_fix, sd_to_dd
from calib_config import CalibSettings, settings as default_settings
from fgo.factors import (
    BetweenFactor, GnssFactor, ImuFactor, MotionFactor, OdometerFactor, PriorFactor,
)
from fgo.inputs import CalibrationDataset
from fgo.marginalization import marginalize
from fgo.residuals import GnssGeometry
from fgo.solver import SolveResult, SolveStatus, solve_window
from fgo.states import (
    LEVER_ARM_KEY, MOUNT_ROTATION_KEY, MOUNT_TRANSLATION_KEY, AmbiguityEstimate, CalibState, GnssState, Key,
    NavState, VariableKind, ambiguity_key, epoch_key,
)
from fgo.window import FactorGraphWindow
from geomath.frames import FrameTag, convert_position
from geomath.rotation import euler_to_rot, quat_to_rot, rot_to_euler, rot_to_quat, rot_z
from gnss.double_difference import form_double_differences
from gnss.geometry import dd_code_position
from gnss.models import DdMeasurement, ObservationEpoch, OutlierReport
from gnss.outliers import DopplerScreen, excluded_keys, screen_outliers_stage2
from preintegration.alignment import coarse_align
from preintegration.imu import imu_preintegrate
from preintegration.models import ImuSeries, MountExtrinsics, OdometerIntrinsics
from preintegration.motion import MotionConstraint, detect_motion
from preintegration.odometer import SCALE_WALK_FLOOR, odo_preintegrate

logger = structlog.get_logger()
tracer = trace.get_tracer(__name__)

CALIBRATION_COLUMNS = ["t", "px", "py", "pz", "roll", "pitch", "yaw", "s_v", "s_w",
                       "std_px", "std_py", "std_pz", "std_roll", "std_pitch", "std_yaw", "std_s_v", "std_s_w"]
LEVER_COLUMNS = ["lx", "ly", "lz", "std_lx", "std_ly", "std_lz"]
TRAJECTORY_COLUMNS = ["t", "x", "y", "z", "vx", "vy", "vz", "roll", "pitch", "yaw",
                      "bax", "bay", "baz", "bgx", "bgy", "bgz", "clock_drift"]


@dataclass
class CalibrationRun:
    calibration: pd.DataFrame
    trajectory: pd.DataFrame
    fixes: pd.DataFrame
    outliers: pd.DataFrame
    windows: pd.DataFrame
    final_calibration: CalibState
    final_nav: Optional[NavState] = None
    final_gnss: Optional[GnssState] = None
    restarts: int = 0


@dataclass
class _CarryOver:
    """Calibration mean and std handed to a restarted window."""
    translation: np.ndarray
    rotation: np.ndarray
    s_v: float
    s_w: float
    lever: Optional[np.ndarray]
    std: Dict[Key, np.ndarray] = field(default_factory=dict)


class CalibrationPipeline:
    def __init__(self, dataset: CalibrationDataset, config: Optional[CalibSettings] = None):
        self.dataset = dataset
        self.config = config or default_settings
        self.mode = self.config.active_mode_profile
        self.noise = dataset.scenario.noise
        scenario = dataset.scenario
        origin = scenario.origin
        self.origin = origin
        self.geometry = GnssGeometry(
            origin_ecef=origin.ecef,
            R_ew=origin.rotation,
            base_position=scenario.base_position_ecef,
            sigma_doppler=self.noise.doppler_sigma,
        )
        self.lever = np.asarray(scenario.lever_arm, dtype=float)
        self.online_lever = self.mode.lever_arm == "online"
        self.use_gnss = self.mode.use_gnss and bool(dataset.rover)

        gates = self.config.outliers
        self._screens = {
            receiver: DopplerScreen(receiver, self.noise.pseudorange_sigma0, self.noise.doppler_sigma,
                                    k1=gates.k1, max_coast=gates.max_coast_epochs, max_gap=gates.max_epoch_gap)
            for receiver in ("rover", "base")
        }
        self._base = dataset.base_by_time()

        self.window = FactorGraphWindow(self.config.window.capacity)
        self._arcs: Dict[Tuple[str, str], int] = {}
        self._arc_seen: Dict[Tuple[str, str], float] = {}
        self._arc_counter = 0
        self._last_result: Optional[SolveResult] = None
        self._restarts = 0

        self._calibration_rows: List[dict] = []
        self._trajectory_rows: List[dict] = []
        self._fix_rows: List[dict] = []
        self._outlier_rows: List[dict] = []
        self._window_rows: List[dict] = []

    # ──────────────────────────────────────────────
    # Epoch Grid
    # ──────────────────────────────────────────────
    def _epochs(self) -> List[Tuple[float, Optional[ObservationEpoch]]]:
        t0, t1 = self.dataset.span
        if self.use_gnss:
            return [(e.t, e) for e in self.dataset.rover if t0 - 1e-9 <= e.t <= t1 + 1e-9]
        dt = self.config.window.epoch_interval
        n = int(np.floor((t1 - t0) / dt + 1e-9)) + 1
        return [(t0 + k * dt, None) for k in range(n)]

    # ──────────────────────────────────────────────
    # Run
    # ──────────────────────────────────────────────
    def run(self) -> CalibrationRun:
        epochs = self._epochs()
        if len(epochs) < 2:
            raise ValueError("dataset covers fewer than two estimator epochs")
        logger.info("calibration_started", mode=self.mode.name, epochs=len(epochs),
                    use_gnss=self.use_gnss, online_lever=self.online_lever)

        carry: Optional[_CarryOver] = None
        prev_t: Optional[float] = None
        for index, (t, rover) in enumerate(epochs):
            gnss = self._screen_epoch(t, rover) if self.use_gnss else None
            if prev_t is None or not self.window.states:
                self._initialize(index, t, gnss, carry)
            else:
                gap = t - prev_t
                try:
                    if gap > self.config.window.max_stream_gap:
                        raise ValueError(f"epoch gap {gap:.2f} s")
                    self._extend(index, prev_t, t, gnss)
                except ValueError as exc:
                    logger.warning("stream_gap_window_restart", t=t, previous=prev_t, reason=str(exc))
                    carry = self._carry_over()
                    self._restart(index, t, gnss, carry)
            self._solve_and_resolve(index, t, gnss)
            self._record(index, t)
            prev_t = t

        return self._result()

    # ──────────────────────────────────────────────
    # GNSS Preprocessing
    # ──────────────────────────────────────────────
    def _screen_epoch(self, t: float, rover: ObservationEpoch):
        base = self._base.get(round(t, 6))
        if base is None:
            logger.warning("base_epoch_missing", t=t)
            return None
        reports: List[OutlierReport] = []
        if self.config.outliers.stage1_enabled:
            reports += self._screens["rover"].update(rover)
            reports += self._screens["base"].update(base)
        self._outlier_rows.extend(r.model_dump() for r in reports if r.rejected)
        return rover, base, excluded_keys(reports)

    def _form_dds(self, gnss, antenna: Optional[np.ndarray], screen: bool = False,
                  prediction_cov: Optional[np.ndarray] = None) -> List[DdMeasurement]:
        rover, base, excluded = gnss
        dds = form_double_differences(
            rover.measurements, base.measurements,
            sigma0_code=self.noise.pseudorange_sigma0,
            sigma0_phase=self.noise.carrier_sigma0,
            code_excluded=excluded,
            receiver_position=antenna,
        )
        if screen and self.config.outliers.stage2_enabled and antenna is not None:
            reports, dds = screen_outliers_stage2(dds, antenna, self.geometry.base_position,
                                                  prediction_cov, k2=self.config.outliers.k2)
            self._outlier_rows.extend(r.model_dump() for r in reports if r.rejected)
        return dds

    def _antenna(self, nav: NavState, lever: np.ndarray) -> np.ndarray:
        return self.geometry.origin_ecef + self.geometry.R_ew @ (nav.position + nav.rotation @ lever)

    def _current_lever(self) -> np.ndarray:
        if self.online_lever and LEVER_ARM_KEY in self.window.values:
            return self.window.values[LEVER_ARM_KEY]
        return self.lever

    # ──────────────────────────────────────────────
    # Initialization
    # ──────────────────────────────────────────────
    def _alignment_series(self, t: float) -> ImuSeries:
        imu = self.dataset.imu
        before = max(imu.t[0], t - self.config.motion.window)
        if t - before >= 0.1:
            return imu.between(before, t)
        return imu.between(t, min(imu.t[-1], t + self.config.motion.window))

    def _initial_nav(self, t: float, gnss, rotation_bm: np.ndarray) -> Tuple[NavState, float]:
        """Attitude from coarse alignment plus the heading guess; position from DD code."""
        scenario = self.dataset.scenario
        roll, pitch = coarse_align(self._alignment_series(t))
        heading = rot_z(np.radians(scenario.initial_yaw_deg)) @ rotation_bm.T
        yaw = rot_to_euler(heading)[2]
        R_wb = euler_to_rot(roll, pitch, yaw)
        position = np.asarray(scenario.initial_position, dtype=float)
        position_std = self.config.priors.position_std
        if gnss is not None:
            dds = self._form_dds(gnss, None)
            try:
                x, _ = dd_code_position(dds, self.geometry.base_position, self.geometry.base_position)
                antenna = convert_position(x, FrameTag.ECEF, FrameTag.WORLD, self.origin)
                position = antenna - R_wb @ self.lever
            except ValueError as exc:
                logger.warning("initial_position_unavailable", t=t, reason=str(exc))
        nav = NavState(t=t, position=position, velocity=np.zeros(3), attitude=rot_to_quat(R_wb))
        return nav, position_std

    def _initialize(self, index: int, t: float, gnss, carry: Optional[_CarryOver]) -> None:
        guess = self.dataset.scenario.initial_guess
        if carry is None:
            rotation_bm = euler_to_rot(*np.radians(guess.rpy_deg))
            translation = np.asarray(guess.translation, dtype=float)
            s_v, s_w = guess.s_v, guess.s_w
            lever = self.lever.copy()
        else:
            rotation_bm = quat_to_rot(carry.rotation)
            translation, s_v, s_w = carry.translation, carry.s_v, carry.s_w
            lever = self.lever.copy() if carry.lever is None else carry.lever
        nav, position_std = self._initial_nav(t, gnss, rotation_bm)
        self._seed_window(index, t, nav, translation, rotation_bm, s_v, s_w, lever, carry, position_std)
        if gnss is not None:
            self._add_gnss(index, t, gnss, nav)

    def _seed_window(self, index, t, nav: NavState, translation, rotation_bm, s_v, s_w, lever,
                     carry: Optional[_CarryOver], position_std: float, velocity_std: Optional[float] = None) -> None:
        priors = self.config.priors
        w = self.window
        w.add_variable(MOUNT_TRANSLATION_KEY, translation)
        w.add_variable(MOUNT_ROTATION_KEY, rot_to_quat(rotation_bm))
        if self.online_lever:
            w.add_variable(LEVER_ARM_KEY, lever)
        w.add_state(index, t, nav, clock_drift=0.0, s_v=s_v, s_w=s_w)

        def std(key: Key, fallback) -> np.ndarray:
            if carry is not None and key in carry.std:
                return np.maximum(carry.std[key], 1e-6)
            return np.broadcast_to(np.asarray(fallback, dtype=float), (3,) if np.ndim(fallback) else (1,))

        rp = np.radians(priors.roll_pitch_std_deg)
        w.add_factor(PriorFactor(epoch_key(VariableKind.POSITION, index), nav.position, position_std))
        w.add_factor(PriorFactor(epoch_key(VariableKind.ROTATION, index), nav.attitude,
                                 [rp, rp, np.radians(priors.yaw_std_deg)]))
        w.add_factor(PriorFactor(epoch_key(VariableKind.VELOCITY, index), nav.velocity,
                                 priors.velocity_std if velocity_std is None else velocity_std))
        w.add_factor(PriorFactor(epoch_key(VariableKind.ACCEL_BIAS, index), nav.accel_bias, priors.accel_bias_std))
        w.add_factor(PriorFactor(epoch_key(VariableKind.GYRO_BIAS, index), nav.gyro_bias,
                                 np.radians(priors.gyro_bias_std_deg_s)))
        w.add_factor(PriorFactor(epoch_key(VariableKind.CLOCK_DRIFT, index), [0.0], priors.clock_drift_std))
        sv_key, sw_key = epoch_key(VariableKind.SCALE_V, index), epoch_key(VariableKind.SCALE_W, index)
        w.add_factor(PriorFactor(sv_key, [s_v], std((VariableKind.SCALE_V, None), priors.scale_std)))
        w.add_factor(PriorFactor(sw_key, [s_w], std((VariableKind.SCALE_W, None), priors.scale_std)))
        w.add_factor(PriorFactor(MOUNT_TRANSLATION_KEY, translation, std(MOUNT_TRANSLATION_KEY, priors.mount_translation_std)))
        w.add_factor(PriorFactor(MOUNT_ROTATION_KEY, rot_to_quat(rotation_bm),
                                 std(MOUNT_ROTATION_KEY, np.radians(priors.mount_rotation_std_deg))))
        if self.online_lever:
            w.add_factor(PriorFactor(LEVER_ARM_KEY, lever, std(LEVER_ARM_KEY, priors.lever_arm_std)))

    # ──────────────────────────────────────────────
    # Window Extension
    # ──────────────────────────────────────────────
    def _extend(self, index: int, t_prev: float, t: float, gnss) -> None:
        w = self.window
        prev = w.latest
        nav_prev = w.nav_state(prev)
        calib = w.calib_state(prev)
        imu_seg = self.dataset.imu.between(t_prev, t)
        odo_seg = self.dataset.odo.between(t_prev, t)
        pre_imu = imu_preintegrate(imu_seg, (nav_prev.accel_bias, nav_prev.gyro_bias), self.noise,
                                   max_dt=self.config.window.imu_max_sample_gap)
        walk_v, walk_w = self.noise.scale_random_walk
        intrinsics = OdometerIntrinsics(s_v=calib.s_v, s_w=calib.s_w, walk_v=walk_v, walk_w=walk_w)
        mount = MountExtrinsics(calib.rotation_matrix, calib.translation)
        pre_odo = odo_preintegrate(odo_seg, imu_seg, intrinsics, mount, nav_prev.gyro_bias, self.noise,
                                   max_gyro_gap=self.config.window.imu_max_sample_gap)
        predicted = pre_imu.predict(nav_prev)
        predicted.t = t

        if w.full:
            marginalize(w, self.config.solver.huber_delta)

        clock_drift = float(w.values[epoch_key(VariableKind.CLOCK_DRIFT, prev)][0])
        w.add_state(index, t, predicted, clock_drift=clock_drift, s_v=calib.s_v, s_w=calib.s_w)
        dt = t - t_prev
        w.add_factor(ImuFactor(prev, index, pre_imu, self.config.window))
        w.add_factor(OdometerFactor(prev, index, pre_odo, self.config.window))
        w.add_factor(BetweenFactor(epoch_key(VariableKind.SCALE_V, prev), epoch_key(VariableKind.SCALE_V, index),
                                   max(walk_v, SCALE_WALK_FLOOR) * np.sqrt(dt)))
        w.add_factor(BetweenFactor(epoch_key(VariableKind.SCALE_W, prev), epoch_key(VariableKind.SCALE_W, index),
                                   max(walk_w, SCALE_WALK_FLOOR) * np.sqrt(dt)))
        w.add_factor(BetweenFactor(epoch_key(VariableKind.CLOCK_DRIFT, prev), epoch_key(VariableKind.CLOCK_DRIFT, index),
                                   max(self.noise.clock_drift_walk, 1e-6) * np.sqrt(dt)))

        constraint = detect_motion(imu_seg, odo_seg, self.config.motion, nav_prev.gyro_bias)
        if constraint != MotionConstraint.NONE:
            sigma = self.config.motion.zupt_sigma if constraint == MotionConstraint.ZUPT else self.config.motion.nhc_sigma
            w.add_factor(MotionFactor(index, constraint, sigma))

        if gnss is not None:
            self._add_gnss(index, t, gnss, predicted)

    def _prediction_cov(self) -> Optional[np.ndarray]:
        if self._last_result is None or self.window.latest is None:
            return None
        key = epoch_key(VariableKind.POSITION, self.window.latest)
        if key not in self._last_result.ordering:
            return None
        cov = self._last_result.covariance([key])
        R = self.geometry.R_ew
        return R @ cov @ R.T + np.eye(3) * self.config.priors.velocity_std ** 2

    def _add_gnss(self, index: int, t: float, gnss, nav: NavState) -> None:
        lever = self._current_lever()
        antenna = self._antenna(nav, lever)
        predicted = len(self.window.states) > 1
        dds = self._form_dds(gnss, antenna, screen=predicted,
                             prediction_cov=self._prediction_cov() if predicted else None)
        if not dds:
            logger.warning("gnss_epoch_without_double_differences", t=t)
            return
        ambiguity_keys = self._ambiguity_arcs(t, gnss, dds)
        imu = self.dataset.imu
        omega_b = imu.gyro_at(np.array([t]))[0] - nav.gyro_bias
        factor = GnssFactor(index, dds, gnss[0].measurements, self.geometry, omega_b, ambiguity_keys,
                            lever=None if self.online_lever else self.lever)
        self.window.add_factor(factor)

    def _ambiguity_arcs(self, t: float, gnss, dds: List[DdMeasurement]) -> Dict[Tuple[str, str], Key]:
        rover, base, _ = gnss
        rov, bas = rover.by_key(), base.by_key()
        keys: Dict[Tuple[str, str], Key] = {}
        needed = sorted({(d.sat, d.band) for d in dds} | {(d.ref_sat, d.band) for d in dds})
        gap = self.config.outliers.max_epoch_gap
        for sd in needed:
            r, b = rov[sd], bas[sd]
            arc = self._arcs.get(sd)
            slipped = r.lli or b.lli
            stale = sd in self._arc_seen and t - self._arc_seen[sd] > gap
            if arc is not None and (slipped or stale) and ambiguity_key(sd[0], sd[1], arc) in self.window.values:
                logger.info("ambiguity_arc_restarted", sat=sd[0], band=sd[1], arc=arc, t=t, slip=bool(slipped))
                self._drop_fixes_for(sd)
                arc = None
            key = None if arc is None else ambiguity_key(sd[0], sd[1], arc)
            if key is None or key not in self.window.values:
                self._arc_counter += 1
                arc = self._arc_counter
                key = ambiguity_key(sd[0], sd[1], arc)
                sd_carrier = r.carrier - b.carrier
                sd_code = r.pseudorange - b.pseudorange
                init = (sd_carrier - sd_code) / r.wavelength
                self.window.add_variable(key, init)
                self.window.add_factor(PriorFactor(key, [init], self.config.ambiguity.float_prior_cycles))
                self._arcs[sd] = arc
            self._arc_seen[sd] = t
            keys[sd] = key
        return keys

    def _drop_fixes_for(self, sd: Tuple[str, str]) -> None:
        def touches(f) -> bool:
            return isinstance(f, AmbiguityFixFactor) and sd in (f.pair.ref_key, f.pair.sat_key)
        self.window.remove_factors(touches)

    def gnss_state(self) -> Optional[GnssState]:
        """Clock drift and live SD ambiguity arcs at the latest state.

        Fixed entries follow the accepted DD integers with the reference arc
        rounded to its nearest integer.
        """
        w = self.window
        if w.latest is None:
            return None
        fixed: Dict[Key, int] = {}
        for f in w.factors:
            if isinstance(f, AmbiguityFixFactor):
                ref_key, sat_key = f.keys
                ref = fixed.setdefault(ref_key, int(np.rint(w.values[ref_key][0])))
                fixed[sat_key] = ref + f.integer
        ambiguities = {}
        for sd, arc in sorted(self._arcs.items()):
            key = ambiguity_key(sd[0], sd[1], arc)
            if key in w.values:
                ambiguities[sd] = AmbiguityEstimate(value=float(w.values[key][0]), fixed=fixed.get(key))
        drift = float(w.values[epoch_key(VariableKind.CLOCK_DRIFT, w.latest)][0])
        return GnssState(clock_drift=drift, ambiguities=ambiguities)

    def _prune_ambiguities(self) -> None:
        """Removes ambiguity arcs constrained only by their own prior."""
        w = self.window
        for key in [k for k in w.values if k[0] == VariableKind.AMBIGUITY]:
            users = [f for f in w.factors if key in f.keys]
            if all(len(f.keys) == 1 for f in users):
                w.remove_factors(lambda f, key=key: key in f.keys)
                w.remove_variables([key])

    # ──────────────────────────────────────────────
    # Solve + Ambiguity Resolution
    # ──────────────────────────────────────────────
    def _solve(self, index: int, t: float, stage: str) -> SolveResult:
        w = self.window
        with tracer.start_as_current_span("solve_window") as span:
            started = time.perf_counter()
            result = solve_window(w, self.config.solver)
            latency_ms = (time.perf_counter() - started) * 1e3
            span.set_attribute("epoch", index)
            span.set_attribute("iterations", result.iterations)
            span.set_attribute("status", result.status.value)
            span.set_attribute("n_variables", len(result.ordering))
        logger.info("window_solved", t=t, stage=stage, iterations=result.iterations,
                    cost=round(result.final_cost, 6), status=result.status.value,
                    latency_ms=round(latency_ms, 2))
        self._window_rows.append({
            "t": t, "stage": stage, "status": result.status.value, "iterations": result.iterations,
            "initial_cost": result.initial_cost, "final_cost": result.final_cost,
            "condition": result.condition_number, "n_variables": len(result.ordering),
            "n_factors": len(w.factors), "latency_ms": latency_ms,
        })
        self._last_result = result
        return result

    def _solve_and_resolve(self, index: int, t: float, gnss) -> None:
        self._prune_ambiguities()
        result = self._solve(index, t, "float")
        if result.status == SolveStatus.DIVERGED:
            return
        if not (self.use_gnss and self.mode.ambiguity_resolution):
            return
        gnss_factor = next((f for f in reversed(self.window.factors)
                            if isinstance(f, GnssFactor) and f.index == index), None)
        if gnss_factor is None:
            return
        fix = self._try_fix(gnss_factor, result)
        if fix is None:
            return
        self._fix_rows.append({
            "t": t, "dimension": fix.dimension, "q1": fix.q1, "q2": fix.q2, "ratio": fix.ratio,
            "accepted": fix.accepted, "reason": fix.reason,
            "integers": json.dumps({f"{p.sat}-{p.ref_sat}/{p.band}": int(v)
                                    for p, v in zip(fix.ambiguities.pairs, fix.best)}),
        })
        if not fix.accepted:
            logger.info("ambiguity_fix_rejected", t=t, ratio=round(fix.ratio, 3), reason=fix.reason,
                        dimension=fix.dimension)
            return
        logger.info("ambiguity_fix_accepted", t=t, ratio=round(fix.ratio, 3), dimension=fix.dimension)
        self.window.remove_factors(lambda f: isinstance(f, AmbiguityFixFactor))
        for factor in ar_factor(fix, gnss_factor.ambiguity_keys, self.config.ambiguity.fix_variance):
            self.window.add_factor(factor)
        if self.config.ambiguity.resolve_after_fix:
            self._solve(index, t, "fixed")

    def _try_fix(self, factor: GnssFactor, result: SolveResult) -> Optional[FixResult]:
        cfg = self.config.ambiguity
        sd_keys = [k for k in factor.ambiguity_keys if factor.ambiguity_keys[k] in result.ordering]
        if len(sd_keys) < 2:
            return None
        keys = [factor.ambiguity_keys[k] for k in sd_keys]
        a_sd = np.array([self.window.values[k][0] for k in keys])
        Q_sd = result.covariance(keys)
        references = {(d.sat[0], d.band): d.ref_sat for d in factor.dds}
        try:
            amb = sd_to_dd(sd_keys, a_sd, Q_sd, references)
        except ValueError as exc:
            logger.warning("ambiguity_set_invalid", reason=str(exc))
            return None
        if len(amb) < cfg.min_dimension:
            return None
        fix = ils_fix(amb, cfg.ratio_threshold, cfg.condition_limit)
        if not fix.accepted and cfg.partial_fixing:
            elevations = {}
            for d in factor.dds:
                elevations[d.sat] = d.elevation
                elevations[d.ref_sat] = d.ref_elevation
            partial = partial_fix(amb, elevations, cfg.partial_min_elevation_deg, cfg.ratio_threshold,
                                  cfg.condition_limit)
            if partial.accepted and partial.dimension >= cfg.min_dimension:
                return partial
        return fix

    # ──────────────────────────────────────────────
    # Stream Gaps
    # ──────────────────────────────────────────────
    def _carry_over(self) -> _CarryOver:
        w = self.window
        latest = w.latest
        calib = w.calib_state(latest)
        std: Dict[Key, np.ndarray] = {}
        result = self._last_result
        if result is not None:
            for key in (MOUNT_TRANSLATION_KEY, MOUNT_ROTATION_KEY, LEVER_ARM_KEY):
                if key in result.ordering:
                    std[key] = result.std(key)
            for kind in (VariableKind.SCALE_V, VariableKind.SCALE_W):
                key = epoch_key(kind, latest)
                if key in result.ordering:
                    std[(kind, None)] = result.std(key)
        return _CarryOver(calib.translation.copy(), calib.rotation.copy(), calib.s_v, calib.s_w,
                          None if calib.lever_arm is None else calib.lever_arm.copy(), std)

    def _restart(self, index: int, t: float, gnss, carry: _CarryOver) -> None:
        self._restarts += 1
        last_nav = self.window.nav_state(self.window.latest) if self.window.states else None
        self.window = FactorGraphWindow(self.config.window.capacity)
        self._arcs.clear()
        self._arc_seen.clear()
        self._last_result = None
        if last_nav is None:
            self._initialize(index, t, gnss, carry)
            return
        nav = NavState(t=t, position=last_nav.position, velocity=last_nav.velocity, attitude=last_nav.attitude,
                       accel_bias=last_nav.accel_bias, gyro_bias=last_nav.gyro_bias)
        self._seed_window(index, t, nav, carry.translation, quat_to_rot(carry.rotation), carry.s_v, carry.s_w,
                          self.lever if carry.lever is None else carry.lever, carry,
                          position_std=10.0 * self.config.priors.position_std, velocity_std=1.0)
        if gnss is not None:
            self._add_gnss(index, t, gnss, nav)

    # ──────────────────────────────────────────────
    # Recording
    # ──────────────────────────────────────────────
    def _record(self, index: int, t: float) -> None:
        w = self.window
        latest = w.latest
        nav = w.nav_state(latest)
        calib = w.calib_state(latest)
        result = self._last_result
        sv_key, sw_key = epoch_key(VariableKind.SCALE_V, latest), epoch_key(VariableKind.SCALE_W, latest)

        def std(key: Key, n: int) -> np.ndarray:
            if result is None or key not in result.ordering:
                return np.full(n, np.nan)
            return result.std(key)

        rpy = np.degrees(rot_to_euler(calib.rotation_matrix))
        row = {"t": t, "px": calib.translation[0], "py": calib.translation[1], "pz": calib.translation[2],
               "roll": rpy[0], "pitch": rpy[1], "yaw": rpy[2], "s_v": calib.s_v, "s_w": calib.s_w}
        t_std = std(MOUNT_TRANSLATION_KEY, 3)
        r_std = np.degrees(std(MOUNT_ROTATION_KEY, 3))
        row.update({"std_px": t_std[0], "std_py": t_std[1], "std_pz": t_std[2],
                    "std_roll": r_std[0], "std_pitch": r_std[1], "std_yaw": r_std[2],
                    "std_s_v": std(sv_key, 1)[0], "std_s_w": std(sw_key, 1)[0]})
        if self.online_lever:
            lever = w.values[LEVER_ARM_KEY]
            l_std = std(LEVER_ARM_KEY, 3)
            row.update({"lx": lever[0], "ly": lever[1], "lz": lever[2],
                        "std_lx": l_std[0], "std_ly": l_std[1], "std_lz": l_std[2]})
        self._calibration_rows.append(row)

        att = np.degrees(rot_to_euler(nav.rotation))
        self._trajectory_rows.append({
            "t": t, "x": nav.position[0], "y": nav.position[1], "z": nav.position[2],
            "vx": nav.velocity[0], "vy": nav.velocity[1], "vz": nav.velocity[2],
            "roll": att[0], "pitch": att[1], "yaw": att[2],
            "bax": nav.accel_bias[0], "bay": nav.accel_bias[1], "baz": nav.accel_bias[2],
            "bgx": nav.gyro_bias[0], "bgy": nav.gyro_bias[1], "bgz": nav.gyro_bias[2],
            "clock_drift": float(w.values[epoch_key(VariableKind.CLOCK_DRIFT, latest)][0]),
        })

    def _result(self) -> CalibrationRun:
        calibration_columns = CALIBRATION_COLUMNS + (LEVER_COLUMNS if self.online_lever else [])
        w = self.window
        outlier_columns = list(OutlierReport.model_fields)
        run = CalibrationRun(
            calibration=pd.DataFrame(self._calibration_rows, columns=calibration_columns),
            trajectory=pd.DataFrame(self._trajectory_rows, columns=TRAJECTORY_COLUMNS),
            fixes=pd.DataFrame(self._fix_rows, columns=["t", "dimension", "q1", "q2", "ratio", "accepted",
                                                         "reason", "integers"]),
            outliers=pd.DataFrame(self._outlier_rows, columns=outlier_columns),
            windows=pd.DataFrame(self._window_rows, columns=["t", "stage", "status", "iterations", "initial_cost",
                                                             "final_cost", "condition", "n_variables",
                                                             "n_factors", "latency_ms"]),
            final_calibration=w.calib_state(w.latest),
            final_nav=w.nav_state(w.latest),
            final_gnss=self.gnss_state(),
            restarts=self._restarts,
        )
        logger.info("calibration_finished", epochs=len(run.calibration), restarts=self._restarts,
                    fixes_accepted=int(run.fixes["accepted"].sum()) if len(run.fixes) else 0,
                    outliers=len(run.outliers),
                    live_arcs=0 if run.final_gnss is None else len(run.final_gnss.ambiguities))
        return run


def run_calibration(dataset: CalibrationDataset, config: Optional[CalibSettings] = None) -> CalibrationRun:
    return CalibrationPipeline(dataset, config).run()
