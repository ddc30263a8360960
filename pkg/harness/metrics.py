from typing import Dict, Optional

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, Field, model_validator

from fgo.inputs import TruthCalibration
from harness.errors import DataFormatError

logger = structlog.get_logger()

PARAMETERS = ["px", "py", "pz", "roll", "pitch", "yaw", "s_v", "s_w"]
ANGLE_PARAMETERS = {"roll", "pitch", "yaw"}

# Error band an estimate must stay inside to count as converged.
CONVERGENCE_TOLERANCE = {
    "px": 0.1, "py": 0.1, "pz": 0.1,
    "roll": 0.5, "pitch": 0.5, "yaw": 3.0,
    "s_v": 5e-3, "s_w": 1e-2,
}


class DrMetrics(BaseModel):
    max_horizontal: float                # m
    rmse_horizontal: float               # m
    max_vertical: float = 0.0
    rmse_vertical: float = 0.0
    samples: int = 0

    @model_validator(mode="after")
    def _rmse_below_max(self):
        if self.rmse_horizontal > self.max_horizontal + 1e-9:
            raise ValueError("horizontal RMSE cannot exceed the maximum error")
        return self


class ParameterError(BaseModel):
    estimate: float
    truth: float
    error: float                         # signed, estimate - truth
    converged_at: Optional[float] = None # s, or None when never converged


class ErrorSummary(BaseModel):
    parameters: Dict[str, ParameterError] = Field(default_factory=dict)
    dead_reckoning: Optional[DrMetrics] = None
    baseline: Optional[DrMetrics] = None


# ──────────────────────────────────────────────
# Dead-Reckoning Errors
# ──────────────────────────────────────────────
def align(estimate: pd.DataFrame, truth: pd.DataFrame, max_gap: float = 0.1) -> pd.DataFrame:
    """Truth positions interpolated at the estimate times; gaps above ``max_gap`` are an error."""
    t_truth = truth["t"].to_numpy(dtype=float)
    t_est = estimate["t"].to_numpy(dtype=float)
    if len(t_truth) == 0 or len(t_est) == 0:
        raise DataFormatError("cannot align empty series")
    pos = np.clip(np.searchsorted(t_truth, t_est), 0, len(t_truth) - 1)
    nearest = np.minimum(np.abs(t_truth[pos] - t_est), np.abs(t_truth[np.maximum(pos - 1, 0)] - t_est))
    outside = (t_est < t_truth[0] - max_gap) | (t_est > t_truth[-1] + max_gap) | (nearest > max_gap)
    if outside.any():
        k = int(np.flatnonzero(outside)[0])
        raise DataFormatError("estimate and truth series are misaligned",
                              {"t": float(t_est[k]), "max_gap": max_gap})
    return pd.DataFrame({axis: np.interp(t_est, t_truth, truth[axis].to_numpy(dtype=float)) for axis in "xyz"} |
                        {"t": t_est})


def error_metrics(estimate: pd.DataFrame, truth: pd.DataFrame, max_gap: float = 0.1) -> DrMetrics:
    """Horizontal MAX / RMSE of ``estimate`` against ``truth`` (vertical reported separately)."""
    ref = align(estimate, truth, max_gap)
    de = estimate["x"].to_numpy(dtype=float) - ref["x"].to_numpy()
    dn = estimate["y"].to_numpy(dtype=float) - ref["y"].to_numpy()
    du = estimate["z"].to_numpy(dtype=float) - ref["z"].to_numpy()
    horizontal = np.hypot(de, dn)
    return DrMetrics(
        max_horizontal=float(horizontal.max()),
        rmse_horizontal=float(np.sqrt(np.mean(horizontal ** 2))),
        max_vertical=float(np.abs(du).max()),
        rmse_vertical=float(np.sqrt(np.mean(du ** 2))),
        samples=len(horizontal),
    )


# ──────────────────────────────────────────────
# Calibration Errors
# ──────────────────────────────────────────────
def truth_values(truth: TruthCalibration) -> Dict[str, float]:
    return {
        "px": truth.translation[0], "py": truth.translation[1], "pz": truth.translation[2],
        "roll": truth.rpy_deg[0], "pitch": truth.rpy_deg[1], "yaw": truth.rpy_deg[2],
        "s_v": truth.s_v, "s_w": truth.s_w,
    }


def parameter_error(name: str, estimate, truth: float):
    err = np.asarray(estimate, dtype=float) - truth
    if name in ANGLE_PARAMETERS:
        err = (err + 180.0) % 360.0 - 180.0
    return err


def convergence_epoch(t: np.ndarray, errors: np.ndarray, tolerance: float) -> Optional[float]:
    """First time after which |error| stays within ``tolerance`` until the end."""
    inside = np.abs(errors) <= tolerance
    if len(inside) == 0 or not inside[-1]:
        return None
    outside = np.flatnonzero(~inside)
    first = 0 if outside.size == 0 else int(outside[-1]) + 1
    return float(t[first])


def calibration_errors(calibration: pd.DataFrame, truth: TruthCalibration) -> Dict[str, ParameterError]:
    if calibration.empty:
        raise DataFormatError("calibration table is empty")
    reference = truth_values(truth)
    t = calibration["t"].to_numpy(dtype=float)
    out = {}
    for name in PARAMETERS:
        series = calibration[name].to_numpy(dtype=float)
        errors = parameter_error(name, series, reference[name])
        out[name] = ParameterError(
            estimate=float(series[-1]),
            truth=float(reference[name]),
            error=float(errors[-1]),
            converged_at=convergence_epoch(t, errors, CONVERGENCE_TOLERANCE[name]),
        )
    return out


def row_at(frame: pd.DataFrame, t: float) -> pd.Series:
    """Row whose time is nearest ``t``."""
    k = int(np.argmin(np.abs(frame["t"].to_numpy(dtype=float) - t)))
    return frame.iloc[k]
