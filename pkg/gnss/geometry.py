from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import structlog

from geomath.rotation import skew
from gnss.constants import SPEED_OF_LIGHT
from gnss.double_difference import dd_covariance, group_double_differences
from gnss.models import DdMeasurement, LeverArm

logger = structlog.get_logger()


def antenna_position_velocity(
    nav,
    lever: LeverArm,
    omega_b: np.ndarray,
    R_en: np.ndarray,
    R_nw: Optional[np.ndarray] = None,
    origin_ecef: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Antenna phase-centre position and velocity in ECEF.

    p^e_g = o + R^e_n R^n_w (p^w_b + R^w_b p^b_g)
    v^e_g = R^e_n R^n_w (v^w_b + R^w_b ⌊ω^b×⌋ p^b_g)
    """
    R_nw = np.eye(3) if R_nw is None else R_nw
    origin_ecef = np.zeros(3) if origin_ecef is None else origin_ecef
    R_ew = R_en @ R_nw
    R_wb = nav.rotation
    l = lever.vector
    position = origin_ecef + R_ew @ (nav.position + R_wb @ l)
    velocity = R_ew @ (nav.velocity + R_wb @ (skew(omega_b) @ l))
    return position, velocity


def doppler_predicted(
    sat_pos: np.ndarray,
    sat_vel: np.ndarray,
    antenna_pos: np.ndarray,
    antenna_vel: np.ndarray,
    receiver_clock_drift: float = 0.0,
    sat_clock_drift: float = 0.0,
) -> float:
    """Predicted λ·D in m/s: range rate plus c(ṫ_r − ṫ^s); positive when receding."""
    los = np.asarray(sat_pos, dtype=float) - np.asarray(antenna_pos, dtype=float)
    rho = np.linalg.norm(los)
    if rho == 0.0:
        raise ValueError("satellite and antenna positions coincide")
    rate = los @ (np.asarray(sat_vel, dtype=float) - np.asarray(antenna_vel, dtype=float)) / rho
    return float(rate + SPEED_OF_LIGHT * (receiver_clock_drift - sat_clock_drift))


def dd_code_position(
    dds: Sequence[DdMeasurement],
    base_position: np.ndarray,
    x0: np.ndarray,
    iterations: int = 10,
) -> Tuple[np.ndarray, np.ndarray]:
    """Weighted Gauss-Newton rover position from DD pseudo-ranges.

    Returns ``(position_ecef, covariance)``. Needs at least three usable DDs.
    """
    usable = [d for d in dds if d.code_usable]
    if len(usable) < 3:
        raise ValueError(f"need >= 3 usable DD pseudo-ranges, got {len(usable)}")
    groups = group_double_differences(usable)
    whiteners = {g: np.linalg.inv(scipy.linalg.cholesky(dd_covariance(m, "pseudorange"), lower=True))
                 for g, m in groups.items()}

    x = np.asarray(x0, dtype=float).copy()
    base_position = np.asarray(base_position, dtype=float)
    H = np.zeros((3, 3))
    for _ in range(iterations):
        H = np.zeros((3, 3))
        b = np.zeros(3)
        for g, members in groups.items():
            r = np.empty(len(members))
            J = np.empty((len(members), 3))
            for i, d in enumerate(members):
                e_j = d.sat_pos - x
                e_i = d.ref_sat_pos - x
                rho_j, rho_i = np.linalg.norm(e_j), np.linalg.norm(e_i)
                base_sd = np.linalg.norm(d.sat_pos - base_position) - np.linalg.norm(d.ref_sat_pos - base_position)
                r[i] = d.pseudorange - ((rho_j - rho_i) - base_sd)
                J[i] = e_j / rho_j - e_i / rho_i
            W = whiteners[g]
            Jw, rw = W @ J, W @ r
            H += Jw.T @ Jw
            b += Jw.T @ rw
        dx = np.linalg.solve(H, -b)
        x += dx
        if np.linalg.norm(dx) < 1e-6:
            break
    return x, np.linalg.inv(H)
