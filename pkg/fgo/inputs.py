from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator

from calib_config import CalibrationGuess, SensorNoiseSpec
from geomath.frames import GeodeticOrigin
from gnss.models import ObservationEpoch
from preintegration.models import ImuSeries, OdoSeries


class AmbiguityTruth(BaseModel):
    sat: str
    band: str
    t_from: float = 0.0                              # s, valid from this epoch on
    n_sd: int                                        # rover minus base, cycles


class TruthCalibration(BaseModel):
    translation: Tuple[float, float, float]          # p^b_m, m
    rpy_deg: Tuple[float, float, float]              # R^b_m
    s_v: float = 0.0
    s_w: float = 0.0
    lever_arm: Tuple[float, float, float] = (0.0, 0.0, 0.0)   # true p^b_g, m
    accel_bias: Tuple[float, float, float] = (0.0, 0.0, 0.0)  # m/s^2
    gyro_bias: Tuple[float, float, float] = (0.0, 0.0, 0.0)   # rad/s
    ambiguities: List[AmbiguityTruth] = Field(default_factory=list)

    def ambiguity_at(self, sat: str, band: str, t: float) -> Optional[int]:
        """True SD integer of (sat, band) at time ``t``."""
        value = None
        for a in self.ambiguities:
            if a.sat == sat and a.band == band and a.t_from <= t + 1e-9:
                if value is None or a.t_from >= value[0]:
                    value = (a.t_from, a.n_sd)
        return None if value is None else value[1]


class FaultRecord(BaseModel):
    kind: str                                        # pseudorange_step | cycle_slip | random_outlier | lever_arm
    t: Optional[float] = None
    sat: Optional[str] = None
    band: Optional[str] = None
    receiver: str = "rover"
    magnitude: float = 0.0                           # m (code) or cycles (slip)


class ScenarioInfo(BaseModel):
    """Everything about a dataset that is not a sensor stream.

    ``lever_arm`` is what the estimator is told; with a lever-arm fault it
    differs from ``truth.lever_arm``.
    """
    name: str = "custom"
    seed: int = 0
    origin_lat_deg: float
    origin_lon_deg: float
    origin_height: float = 0.0
    base_position: Tuple[float, float, float]        # ECEF, m
    lever_arm: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    initial_guess: CalibrationGuess = CalibrationGuess()
    initial_yaw_deg: float = 0.0                     # vehicle heading guess, ENU, CCW from north
    initial_position: Tuple[float, float, float] = (0.0, 0.0, 0.0)   # w-frame, used without GNSS
    noise: SensorNoiseSpec = SensorNoiseSpec()
    truth: Optional[TruthCalibration] = None
    faults: List[FaultRecord] = Field(default_factory=list)
    duration: float = 0.0                            # s

    @field_validator("origin_lat_deg")
    @classmethod
    def _latitude(cls, value: float) -> float:
        if abs(value) > 90.0:
            raise ValueError("origin latitude must be within [-90, 90] degrees")
        return value

    @property
    def origin(self) -> GeodeticOrigin:
        return GeodeticOrigin.from_degrees(self.origin_lat_deg, self.origin_lon_deg, self.origin_height)

    @property
    def base_position_ecef(self) -> np.ndarray:
        return np.asarray(self.base_position, dtype=float)


@dataclass
class CalibrationDataset:
    rover: List[ObservationEpoch]
    base: List[ObservationEpoch]
    imu: ImuSeries
    odo: OdoSeries
    scenario: ScenarioInfo
    truth: Optional[pd.DataFrame] = None             # per-epoch truth rows, when simulated

    def base_by_time(self) -> Dict[float, ObservationEpoch]:
        return {round(e.t, 6): e for e in self.base}

    @property
    def span(self) -> Tuple[float, float]:
        t0 = max(self.imu.t[0], self.odo.t[0])
        t1 = min(self.imu.t[-1], self.odo.t[-1])
        return float(t0), float(t1)
