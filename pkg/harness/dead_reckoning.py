"""IMU/odometer dead reckoning through a simulated GNSS outage.

Attitude is propagated with bias-corrected gyro preintegration, position by
chaining odometer preintegration through the calibrated extrinsics. Epochs
classified as stationary hold position; the non-holonomic constraint holds
by construction because odometer velocity lives on the forward axis.
"""
from typing import Literal, Optional

import numpy as np
import pandas as pd
import structlog

from calib_config import CalibSettings, settings as default_settings
from fgo.inputs import CalibrationDataset
from fgo.states import CalibState, NavState
from geomath.rotation import euler_to_rot, rot_to_euler, rot_to_quat
from harness.errors import DataFormatError
from harness.metrics import DrMetrics, error_metrics, row_at
from preintegration.imu import imu_preintegrate
from preintegration.models import ImuSeries, MountExtrinsics, OdometerIntrinsics, OdoSeries
from preintegration.motion import MotionConstraint, detect_motion
from preintegration.odometer import odo_preintegrate

logger = structlog.get_logger()

CalibrationChoice = Literal["final", "initial", "truth"]
DR_COLUMNS = ["t", "x", "y", "z", "yaw", "motion"]


def dead_reckon(
    imu: ImuSeries,
    odo: OdoSeries,
    calib: CalibState,
    init: NavState,
    outage_start: float,
    t_end: Optional[float] = None,
    config: Optional[CalibSettings] = None,
) -> pd.DataFrame:
    config = config or default_settings
    noise = config.noise
    t_end = min(imu.t[-1], odo.t[-1]) if t_end is None else t_end
    step = config.window.epoch_interval
    if t_end <= outage_start:
        raise ValueError(f"outage end {t_end} precedes its start {outage_start}")

    mount = MountExtrinsics(calib.rotation_matrix, calib.translation)
    intrinsics = OdometerIntrinsics(s_v=calib.s_v, s_w=calib.s_w)
    bias = (init.accel_bias, init.gyro_bias)
    position = init.position.copy()
    R = init.rotation.copy()

    rows = [{"t": outage_start, "x": position[0], "y": position[1], "z": position[2],
             "yaw": float(np.degrees(rot_to_euler(R)[2])), "motion": "init"}]
    t0 = outage_start
    while t0 + 1e-9 < t_end:
        t1 = min(t0 + step, t_end)
        imu_seg = imu.between(t0, t1)
        odo_seg = odo.between(t0, t1)
        motion = detect_motion(imu.between(max(imu.t[0], t1 - config.motion.window), t1),
                               odo.between(max(odo.t[0], t1 - config.motion.window), t1),
                               config.motion, init.gyro_bias)
        if motion != MotionConstraint.ZUPT:
            odo_pre = odo_preintegrate(odo_seg, imu_seg, intrinsics, mount, init.gyro_bias, noise,
                                       max_gyro_gap=config.window.imu_max_sample_gap)
            imu_pre = imu_preintegrate(imu_seg, bias, noise, max_dt=config.window.imu_max_sample_gap)
            position = position + R @ odo_pre.dp
            R = R @ imu_pre.dR
        rows.append({"t": t1, "x": position[0], "y": position[1], "z": position[2],
                     "yaw": float(np.degrees(rot_to_euler(R)[2])), "motion": motion.value})
        t0 = t1
    return pd.DataFrame(rows, columns=DR_COLUMNS)


# ──────────────────────────────────────────────
# Inputs For An Evaluation
# ──────────────────────────────────────────────
def nav_from_table(frame: pd.DataFrame, t: float, max_gap: float = 0.1) -> NavState:
    """NavState from a trajectory/truth row (attitude columns in degrees)."""
    row = row_at(frame, t)
    if abs(float(row["t"]) - t) > max_gap:
        raise DataFormatError("no trajectory row near the outage start", {"t": t, "nearest": float(row["t"])})
    R = euler_to_rot(*np.radians([row["roll"], row["pitch"], row["yaw"]]))

    def vec(prefix: str) -> np.ndarray:
        cols = [f"{prefix}{a}" for a in "xyz"]
        return np.array([row[c] for c in cols], dtype=float) if all(c in row.index for c in cols) else np.zeros(3)

    return NavState(t=float(row["t"]), position=np.array([row["x"], row["y"], row["z"]], dtype=float),
                    velocity=vec("v"), attitude=rot_to_quat(R), accel_bias=vec("ba"), gyro_bias=vec("bg"))


def calibration_from_row(row: pd.Series) -> CalibState:
    R = euler_to_rot(*np.radians([row["roll"], row["pitch"], row["yaw"]]))
    return CalibState(s_v=float(row["s_v"]), s_w=float(row["s_w"]),
                      translation=np.array([row["px"], row["py"], row["pz"]], dtype=float),
                      rotation=rot_to_quat(R))


def select_calibration(dataset: CalibrationDataset, choice: CalibrationChoice,
                       calibration: Optional[pd.DataFrame] = None) -> CalibState:
    scenario = dataset.scenario
    if choice == "final":
        if calibration is None or calibration.empty:
            raise DataFormatError("final calibration requested but no calibration table was given")
        return calibration_from_row(calibration.iloc[-1])
    if choice == "initial":
        source = scenario.initial_guess
    else:
        if scenario.truth is None:
            raise DataFormatError("truth calibration requested but the dataset has no truth")
        source = scenario.truth
    return CalibState(s_v=source.s_v, s_w=source.s_w, translation=np.asarray(source.translation, dtype=float),
                      rotation=rot_to_quat(euler_to_rot(*np.radians(source.rpy_deg))))


def truth_nav(dataset: CalibrationDataset, t: float) -> NavState:
    """Truth state at ``t`` with the true sensor biases."""
    if dataset.truth is None:
        raise DataFormatError("dataset has no truth rows")
    return nav_from_table(dataset.truth, t)


def evaluate_outage(
    dataset: CalibrationDataset,
    choice: CalibrationChoice,
    outage_start: float = 100.0,
    calibration: Optional[pd.DataFrame] = None,
    trajectory: Optional[pd.DataFrame] = None,
    config: Optional[CalibSettings] = None,
) -> tuple[pd.DataFrame, DrMetrics]:
    """Dead-reckons from ``outage_start`` and scores it against the truth rows.

    The initial state comes from the GNSS-aided ``trajectory`` when given,
    otherwise from truth.
    """
    if dataset.truth is None:
        raise DataFormatError("dead-reckoning evaluation needs truth rows")
    calib = select_calibration(dataset, choice, calibration)
    init = nav_from_table(trajectory, outage_start) if trajectory is not None else truth_nav(dataset, outage_start)
    path = dead_reckon(dataset.imu, dataset.odo, calib, init, outage_start, config=config)
    metrics = error_metrics(path, dataset.truth)
    logger.info("dead_reckoning_evaluated", calibration=choice, outage_start=outage_start,
                max_horizontal=round(metrics.max_horizontal, 3), rmse_horizontal=round(metrics.rmse_horizontal, 3))
    return path, metrics
