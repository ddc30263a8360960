from typing import Tuple

import numpy as np
import structlog

from preintegration.models import ImuSeries

logger = structlog.get_logger()


def coarse_align(imu: ImuSeries, accel_bias: np.ndarray = None) -> Tuple[float, float]:
    """Roll and pitch (rad) from the mean specific force of a stationary window."""
    if len(imu) == 0:
        raise ValueError("coarse alignment needs samples")
    f = np.mean(imu.accel, axis=0)
    if accel_bias is not None:
        f = f - accel_bias
    roll = float(np.arctan2(f[1], f[2]))
    pitch = float(np.arctan2(-f[0], np.hypot(f[1], f[2])))
    logger.debug("coarse_alignment", roll_deg=np.degrees(roll), pitch_deg=np.degrees(pitch),
                 samples=len(imu))
    return roll, pitch
