"""Local identifiability of the IMU-odometer extrinsics.

With virtual body-frame rates (v̌^b, ω̌^b) the odometer residuals depend only
on the extrinsic translation p^b_m and rotation R^b_m. Stacking the
sensitivity blocks over time gives a matrix whose column rank decides which
extrinsic directions a trajectory can identify.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
import scipy.linalg
import structlog

from geomath.rotation import euler_to_rot, skew
from preintegration.models import ImuSeries

logger = structlog.get_logger()

EXTRINSIC_AXES = ["px", "py", "pz", "roll", "pitch", "yaw"]
RANK_TOLERANCE = 1e-8
NULL_COMPONENT_TOLERANCE = 1e-3


@dataclass(frozen=True)
class VirtualBodyRates:
    t: float
    velocity: np.ndarray        # v̌^b, m/s
    angular_rate: np.ndarray    # ω̌^b, rad/s

    def __post_init__(self):
        if not (np.all(np.isfinite(self.velocity)) and np.all(np.isfinite(self.angular_rate))):
            raise ValueError(f"non-finite virtual rates at t={self.t}")


@dataclass
class ObservabilityReport:
    singular_values: np.ndarray
    rank: int
    null_basis: np.ndarray              # 6 x k, orthonormal columns
    identifiable: Dict[str, bool]
    n_blocks: int
    matrix: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def full_rank(self) -> bool:
        return self.rank == 6

    def to_dict(self) -> dict:
        return {
            "singular_values": [float(s) for s in self.singular_values],
            "rank": self.rank,
            "null_basis": self.null_basis.T.tolist(),
            "identifiable": dict(self.identifiable),
            "n_blocks": self.n_blocks,
        }


# ──────────────────────────────────────────────
# Observability Matrix
# ──────────────────────────────────────────────
def obs_block(rates: VirtualBodyRates, R_mb: np.ndarray, p_bm: np.ndarray) -> np.ndarray:
    """6x6 sensitivity of the odometer residuals to [p^b_m, θ^b_m] at one instant."""
    R_mb = np.asarray(R_mb, dtype=float)
    if not np.allclose(R_mb @ R_mb.T, np.eye(3), atol=1e-9):
        raise ValueError("R_mb must be a rotation matrix")
    w = skew(rates.angular_rate)
    M = np.zeros((6, 6))
    M[0:3, 0:3] = R_mb @ w
    M[0:3, 3:6] = skew(R_mb @ (rates.velocity + w @ np.asarray(p_bm, dtype=float)))
    M[3:6, 3:6] = skew(R_mb @ rates.angular_rate)
    return M


def stack_and_rank(
    blocks: Sequence[np.ndarray],
    tol: float = RANK_TOLERANCE,
    translation_frame: Optional[np.ndarray] = None,
) -> ObservabilityReport:
    """SVD rank of the stacked blocks with per-axis identifiability.

    ``translation_frame`` (R^b_m) expresses the translation columns in the
    vehicle frame, where planar motion leaves exactly the vertical axis free.
    """
    if len(blocks) == 0:
        raise ValueError("stack_and_rank needs at least one block")
    M = np.vstack(blocks)
    if translation_frame is not None:
        T = np.eye(6)
        T[0:3, 0:3] = translation_frame
        M = M @ T
    _, s, Vt = scipy.linalg.svd(M, full_matrices=True)
    if s[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(s > tol * s[0]))
    null = Vt[rank:].T
    identifiable = {
        axis: bool(null.shape[1] == 0 or np.max(np.abs(null[k])) <= NULL_COMPONENT_TOLERANCE)
        for k, axis in enumerate(EXTRINSIC_AXES)
    }
    logger.debug("observability_rank", rank=rank, blocks=len(blocks),
                 smallest=float(s[-1]), largest=float(s[0]))
    return ObservabilityReport(singular_values=s, rank=rank, null_basis=null,
                               identifiable=identifiable, n_blocks=len(blocks), matrix=M)


def analyze(rates: Sequence[VirtualBodyRates], R_mb: np.ndarray, p_bm: np.ndarray,
            tol: float = RANK_TOLERANCE, vehicle_frame: bool = True) -> ObservabilityReport:
    blocks = [obs_block(r, R_mb, p_bm) for r in rates]
    return stack_and_rank(blocks, tol, translation_frame=np.asarray(R_mb).T if vehicle_frame else None)


# ──────────────────────────────────────────────
# Virtual Rates
# ──────────────────────────────────────────────
def _body_rates(frame: pd.DataFrame, gyro: np.ndarray) -> List[VirtualBodyRates]:
    rates = []
    for row, w in zip(frame.itertuples(index=False), gyro):
        R_wb = euler_to_rot(*np.radians([row.roll, row.pitch, row.yaw]))
        v_b = R_wb.T @ np.array([row.vx, row.vy, row.vz])
        rates.append(VirtualBodyRates(t=float(row.t), velocity=v_b, angular_rate=np.asarray(w, dtype=float)))
    return rates


def rates_from_truth(truth: pd.DataFrame, t0: Optional[float] = None, t1: Optional[float] = None) -> List[VirtualBodyRates]:
    """Virtual rates from simulator truth rows (needs wx, wy, wz body rates)."""
    frame = truth
    if t0 is not None:
        frame = frame[frame["t"] >= t0]
    if t1 is not None:
        frame = frame[frame["t"] <= t1]
    return _body_rates(frame, frame[["wx", "wy", "wz"]].to_numpy())


def rates_from_estimates(trajectory: pd.DataFrame, imu: ImuSeries) -> List[VirtualBodyRates]:
    """Virtual rates from an estimated trajectory and bias-corrected gyro samples."""
    times = trajectory["t"].to_numpy()
    gyro = imu.gyro_at(times) - trajectory[["bgx", "bgy", "bgz"]].to_numpy()
    return _body_rates(trajectory, gyro)


# ──────────────────────────────────────────────
# Empirical Cross-Check
# ──────────────────────────────────────────────
@dataclass
class ParameterVerdict:
    parameter: str
    prior_std: float
    final_std: float
    observable: bool
    converged_at: Optional[float]          # first time std dropped below the threshold
    analytic: Optional[bool] = None        # identifiability from the rank analysis
    mismatch: bool = False


def empirical_crosscheck(
    calibration: pd.DataFrame,
    prior_std: Mapping[str, float],
    report: Optional[ObservabilityReport] = None,
    ratio: float = 0.8,
) -> List[ParameterVerdict]:
    """Labels a parameter unobservable when its final posterior std stays >= ratio x prior std."""
    verdicts = []
    for name, prior in prior_std.items():
        column = f"std_{name}"
        if column not in calibration.columns:
            continue
        std = calibration[column].to_numpy(dtype=float)
        valid = np.isfinite(std)
        if not valid.any():
            continue
        final = float(std[valid][-1])
        threshold = ratio * prior
        observable = final < threshold
        below = np.nonzero(valid & (std < threshold))[0]
        converged_at = float(calibration["t"].iloc[below[0]]) if below.size else None
        analytic = report.identifiable.get(name) if report is not None else None
        mismatch = analytic is not None and analytic != observable
        if mismatch:
            logger.warning("observability_mismatch", parameter=name, analytic=analytic, empirical=observable)
        verdicts.append(ParameterVerdict(name, float(prior), final, bool(observable), converged_at, analytic, mismatch))
    return verdicts


def prior_stds(priors) -> Dict[str, float]:
    """Prior std per reported calibration column (angles in degrees)."""
    return {
        "px": priors.mount_translation_std, "py": priors.mount_translation_std, "pz": priors.mount_translation_std,
        "roll": priors.mount_rotation_std_deg, "pitch": priors.mount_rotation_std_deg,
        "yaw": priors.mount_rotation_std_deg,
        "s_v": priors.scale_std, "s_w": priors.scale_std,
    }
