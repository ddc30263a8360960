from enum import Enum
from typing import Optional

import numpy as np
import structlog

from calib_config import MotionGates
from preintegration.models import ImuSeries, OdoSeries

logger = structlog.get_logger()


class MotionConstraint(str, Enum):
    ZUPT = "zupt"
    NHC = "nhc"
    NONE = "none"


def detect_motion(
    imu: ImuSeries,
    odo: OdoSeries,
    gates: Optional[MotionGates] = None,
    gyro_bias: Optional[np.ndarray] = None,
) -> MotionConstraint:
    """Classifies a one-second window as stationary, constrained driving, or free motion.

    Stationary when the mean per-sample gyro magnitude is below the ZUPT gate, or when the odometer
    reads (near) zero speed while the gyro stays under the NHC gate.
    """
    gates = gates or MotionGates()
    if len(imu) < 2 or len(odo) < 2:
        return MotionConstraint.NONE
    span = min(imu.t[-1] - imu.t[0], odo.t[-1] - odo.t[0])
    if span < gates.window - 1e-6:
        return MotionConstraint.NONE

    bias = np.zeros(3) if gyro_bias is None else gyro_bias
    mean_rate = np.degrees(np.mean(np.linalg.norm(imu.gyro - bias, axis=1)))
    mean_speed = float(np.mean(odo.v))

    if mean_rate < gates.zupt_gyro_deg_s:
        return MotionConstraint.ZUPT
    if mean_rate < gates.nhc_gyro_deg_s and abs(mean_speed) < gates.zupt_odo_speed:
        return MotionConstraint.ZUPT
    if mean_rate < gates.nhc_gyro_deg_s and mean_speed > gates.nhc_min_speed:
        return MotionConstraint.NHC
    return MotionConstraint.NONE
