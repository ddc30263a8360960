from dataclasses import dataclass
from typing import Dict, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, field_validator, model_validator


@dataclass(frozen=True)
class GnssRawMeasurement:
    """One (epoch, receiver, satellite, band) observation.

    ``carrier`` is stored in metres; the CSV carries cycles and the loader
    multiplies by ``wavelength``.
    """
    t: float
    sat: str
    band: str
    wavelength: float            # m
    pseudorange: float           # m
    carrier: float               # m
    doppler: float               # Hz, positive when the satellite recedes
    sat_pos: np.ndarray          # ECEF m
    sat_vel: np.ndarray          # ECEF m/s
    sat_clock: float             # s
    sat_clock_drift: float       # s/s
    elevation: float             # rad, at the receiver
    azimuth: float = 0.0         # rad
    lli: bool = False            # loss of lock since the previous epoch

    def __post_init__(self):
        if self.wavelength <= 0:
            raise ValueError(f"wavelength must be > 0 for {self.sat}/{self.band}")
        if not (0.0 < self.elevation <= np.pi / 2 + 1e-12):
            raise ValueError(f"elevation out of range for {self.sat} at t={self.t}: {self.elevation}")

    @property
    def constellation(self) -> str:
        return self.sat[0]

    @property
    def key(self) -> Tuple[str, str]:
        return (self.sat, self.band)

    @property
    def range_rate(self) -> float:
        """λ·D in m/s."""
        return self.wavelength * self.doppler


@dataclass(frozen=True)
class ObservationEpoch:
    t: float
    measurements: Tuple[GnssRawMeasurement, ...]

    def by_key(self) -> Dict[Tuple[str, str], GnssRawMeasurement]:
        return {m.key: m for m in self.measurements}


@dataclass(frozen=True)
class DdMeasurement:
    """Double difference (rover − base) of satellite ``sat`` against reference ``ref_sat``."""
    t: float
    ref_sat: str
    sat: str
    band: str
    wavelength: float
    pseudorange: float                   # P_DD, m
    carrier: float                       # L_DD, m
    var_pseudorange: float               # sum of the four legs, m^2
    var_carrier: float
    ref_var_pseudorange: float           # the two reference-satellite legs, shared in the group
    ref_var_carrier: float
    ref_sat_pos: np.ndarray
    sat_pos: np.ndarray
    elevation: float                     # rover elevation of ``sat``
    ref_elevation: float
    los_ref: Optional[np.ndarray] = None     # unit ECEF line of sight to ref_sat
    los_sat: Optional[np.ndarray] = None
    code_usable: bool = True

    def __post_init__(self):
        if self.ref_sat == self.sat:
            raise ValueError("DD reference and target satellite must differ")
        if self.var_pseudorange <= 0 or self.var_carrier <= 0:
            raise ValueError("DD variances must be > 0")

    @property
    def constellation(self) -> str:
        return self.sat[0]

    @property
    def group(self) -> Tuple[str, str, str]:
        return (self.sat[0], self.band, self.ref_sat)


class LeverArm(BaseModel):
    """IMU-to-antenna offset p^b_g in the body frame."""
    offset: Tuple[float, float, float] = (0.0, 0.0, 0.0)   # m
    estimate_online: bool = False

    @field_validator("offset")
    @classmethod
    def _sane_length(cls, value):
        if float(np.linalg.norm(value)) >= 10.0:
            raise ValueError("lever arm must be shorter than 10 m")
        return value

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.offset, dtype=float)


class OutlierReport(BaseModel):
    t: float
    sat: str
    band: str
    receiver: Literal["rover", "base", "dd"] = "rover"
    stage: Literal[1, 2]
    statistic: float
    threshold: float
    rejected: bool

    @model_validator(mode="after")
    def _rejected_exceeds_threshold(self):
        if self.rejected and not self.statistic > self.threshold:
            raise ValueError("a rejected measurement must have statistic > threshold")
        return self
