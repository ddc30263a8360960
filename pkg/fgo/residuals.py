"""Residual models and their analytic Jacobians.

Every function returns ``(r, jacobians)`` where ``r`` is whitened with the
supplied (or derived) square-root information and ``jacobians`` maps a role
name to the matching whitened Jacobian block. Rotation blocks are with respect
to the right perturbation ``R · Exp(δθ)``.
"""
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from fgo.states import CalibState, NavState
from fgo.whitening import sqrt_information
from geomath.frames import GRAVITY
from geomath.rotation import right_jacobian, right_jacobian_inv, skew, so3_exp, so3_log
from gnss.constants import SPEED_OF_LIGHT
from gnss.double_difference import dd_covariance, group_double_differences
from gnss.models import DdMeasurement, GnssRawMeasurement
from preintegration.imu import ImuPreintegrated
from preintegration.motion import MotionConstraint
from preintegration.odometer import OdoPreintegrated

ODO_COVARIANCE_FLOOR = 1e-8


# ──────────────────────────────────────────────
# IMU
# ──────────────────────────────────────────────
def imu_factor_residual(
    nav_i: NavState,
    nav_j: NavState,
    pre: ImuPreintegrated,
    sqrt_info: Optional[np.ndarray] = None,
    gravity: np.ndarray = GRAVITY,
) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """15-vector ``[r_p, r_θ, r_v, r_ba, r_bg]`` between consecutive states."""
    S = sqrt_information(pre.covariance, floor=1e-14) if sqrt_info is None else sqrt_info
    R_i, R_j = nav_i.rotation, nav_j.rotation
    T = pre.dt
    dba = nav_i.accel_bias - pre.accel_bias
    dbg = nav_i.gyro_bias - pre.gyro_bias
    Jb = pre.bias_jacobians
    phi = Jb["q_bg"] @ dbg
    dp = pre.dp + Jb["p_ba"] @ dba + Jb["p_bg"] @ dbg
    dv = pre.dv + Jb["v_ba"] @ dba + Jb["v_bg"] @ dbg
    dR = pre.dR @ so3_exp(phi)

    a = nav_j.position - nav_i.position - nav_i.velocity * T - 0.5 * gravity * T ** 2
    b = nav_j.velocity - nav_i.velocity - gravity * T
    r_th = so3_log(dR.T @ R_i.T @ R_j)
    r = np.concatenate((
        R_i.T @ a - dp,
        r_th,
        R_i.T @ b - dv,
        nav_j.accel_bias - nav_i.accel_bias,
        nav_j.gyro_bias - nav_i.gyro_bias,
    ))

    Jinv = right_jacobian_inv(r_th)
    I3 = np.eye(3)
    blocks = {name: np.zeros((15, 3)) for name in
              ("p_i", "q_i", "v_i", "ba_i", "bg_i", "p_j", "q_j", "v_j", "ba_j", "bg_j")}
    blocks["p_i"][0:3] = -R_i.T
    blocks["q_i"][0:3] = skew(R_i.T @ a)
    blocks["q_i"][3:6] = -Jinv @ R_j.T @ R_i
    blocks["q_i"][6:9] = skew(R_i.T @ b)
    blocks["v_i"][0:3] = -R_i.T * T
    blocks["v_i"][6:9] = -R_i.T
    blocks["ba_i"][0:3] = -Jb["p_ba"]
    blocks["ba_i"][6:9] = -Jb["v_ba"]
    blocks["ba_i"][9:12] = -I3
    blocks["bg_i"][0:3] = -Jb["p_bg"]
    blocks["bg_i"][3:6] = -Jinv @ so3_exp(r_th).T @ right_jacobian(phi) @ Jb["q_bg"]
    blocks["bg_i"][6:9] = -Jb["v_bg"]
    blocks["bg_i"][12:15] = -I3
    blocks["p_j"][0:3] = R_i.T
    blocks["q_j"][3:6] = Jinv
    blocks["v_j"][6:9] = R_i.T
    blocks["ba_j"][9:12] = I3
    blocks["bg_j"][12:15] = I3
    return S @ r, {k: S @ v for k, v in blocks.items()}


# ──────────────────────────────────────────────
# Odometer
# ──────────────────────────────────────────────
def odo_factor_residual(
    nav_i: NavState,
    nav_j: NavState,
    calib: CalibState,
    pre: OdoPreintegrated,
    sqrt_info: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """6-vector ``[r_p, r_θ]``; ``s_v``/``s_ω`` are the instances at the first epoch."""
    S = sqrt_information(pre.covariance[0:6, 0:6], floor=ODO_COVARIANCE_FLOOR) if sqrt_info is None else sqrt_info
    R_i, R_j = nav_i.rotation, nav_j.rotation
    R_bm = calib.rotation_matrix
    delta = pre.calibration_delta(calib.translation, R_bm, calib.s_v, calib.s_w)
    J_p, J_th = pre.jacobian[0:3], pre.jacobian[3:6]
    phi = J_th @ delta
    dp = pre.dp + J_p @ delta
    dR = pre.dR @ so3_exp(phi)

    d = nav_j.position - nav_i.position
    r_th = so3_log(dR.T @ R_i.T @ R_j)
    r = np.concatenate((R_i.T @ d - dp, r_th))

    Jinv = right_jacobian_inv(r_th)
    # d(delta)/d(tangent of the calibration variables)
    D = np.eye(8)
    D[3:6, 3:6] = right_jacobian_inv(delta[3:6])
    rot_corr = -Jinv @ so3_exp(r_th).T @ right_jacobian(phi)
    calib_cols = np.vstack((-J_p @ D, rot_corr @ J_th @ D))

    blocks = {
        "p_i": np.vstack((-R_i.T, np.zeros((3, 3)))),
        "q_i": np.vstack((skew(R_i.T @ d), -Jinv @ R_j.T @ R_i)),
        "p_j": np.vstack((R_i.T, np.zeros((3, 3)))),
        "q_j": np.vstack((np.zeros((3, 3)), Jinv)),
        "pm": calib_cols[:, 0:3],
        "qm": calib_cols[:, 3:6],
        "sv": calib_cols[:, 6:7],
        "sw": calib_cols[:, 7:8],
    }
    return S @ r, {k: S @ v for k, v in blocks.items()}


# ──────────────────────────────────────────────
# Motion constraints
# ──────────────────────────────────────────────
def motion_residuals(
    nav: NavState,
    constraint: MotionConstraint,
    R_bm: np.ndarray,
    sigma: float,
) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """ZUPT: v^w_b = 0. NHC: lateral and vertical m-frame velocity = 0."""
    if constraint == MotionConstraint.ZUPT:
        return nav.velocity / sigma, {"v": np.eye(3) / sigma, "q": np.zeros((3, 3)), "qm": np.zeros((3, 3))}
    if constraint == MotionConstraint.NHC:
        R = nav.rotation
        v_b = R.T @ nav.velocity
        u = R_bm.T @ v_b
        rows = [0, 2]
        return u[rows] / sigma, {
            "v": (R_bm.T @ R.T)[rows] / sigma,
            "q": (R_bm.T @ skew(v_b))[rows] / sigma,
            "qm": skew(u)[rows] / sigma,
        }
    raise ValueError(f"no residual for motion constraint {constraint}")


# ──────────────────────────────────────────────
# GNSS
# ──────────────────────────────────────────────
@dataclass(frozen=True)
class GnssGeometry:
    """Fixed quantities needed to place the antenna in ECEF."""
    origin_ecef: np.ndarray
    R_ew: np.ndarray            # R^e_n R^n_w
    base_position: np.ndarray
    sigma_doppler: float = 0.05


@dataclass
class _DdGroup:
    members: List[DdMeasurement]
    code_rows: List[int]
    S_code: Optional[np.ndarray]
    S_phase: np.ndarray
    base_sd: np.ndarray


def prepare_dd_groups(dds: Sequence[DdMeasurement], base_position: np.ndarray) -> List[_DdGroup]:
    groups = []
    for _, members in sorted(group_double_differences(dds).items()):
        code_rows = [i for i, d in enumerate(members) if d.code_usable]
        S_code = None
        if code_rows:
            S_code = sqrt_information(dd_covariance([members[i] for i in code_rows], "pseudorange"))
        base_sd = np.array([np.linalg.norm(d.sat_pos - base_position) - np.linalg.norm(d.ref_sat_pos - base_position)
                            for d in members])
        groups.append(_DdGroup(members, code_rows, S_code, sqrt_information(dd_covariance(members, "carrier")), base_sd))
    return groups


def gnss_residuals(
    nav: NavState,
    clock_drift: float,
    dds: Sequence[DdMeasurement],
    dopplers: Sequence[GnssRawMeasurement],
    lever: np.ndarray,
    omega_b: np.ndarray,
    ambiguities: Mapping[Tuple[str, str], float],
    geometry: GnssGeometry,
    groups: Optional[List[_DdGroup]] = None,
) -> Tuple[np.ndarray, Dict[object, np.ndarray]]:
    """Whitened DD code, DD carrier and Doppler residuals of one epoch.

    ``clock_drift`` is c·ṫ_r in m/s. ``ambiguities`` maps (sat, band) to the SD
    ambiguity in cycles. Jacobian roles: ``p``, ``q``, ``v``, ``drift``, ``lever``
    and ``("amb", (sat, band))``.
    """
    groups = prepare_dd_groups(dds, geometry.base_position) if groups is None else groups
    R = nav.rotation
    R_ew = geometry.R_ew
    x = geometry.origin_ecef + R_ew @ (nav.position + R @ lever)
    dx_dp = R_ew
    dx_dq = -R_ew @ R @ skew(lever)
    dx_dl = R_ew @ R

    residuals: List[np.ndarray] = []
    rows: List[Dict[object, np.ndarray]] = []

    def _emit(r: np.ndarray, blocks: Dict[object, np.ndarray]):
        residuals.append(r)
        rows.append(blocks)

    for g in groups:
        n = len(g.members)
        pred = np.empty(n)
        D = np.empty((n, 3))
        for i, d in enumerate(g.members):
            e_j, e_i = d.sat_pos - x, d.ref_sat_pos - x
            rho_j, rho_i = np.linalg.norm(e_j), np.linalg.norm(e_i)
            pred[i] = (rho_j - rho_i) - g.base_sd[i]
            D[i] = e_j / rho_j - e_i / rho_i
        geo = {"p": D @ dx_dp, "q": D @ dx_dq, "lever": D @ dx_dl}

        if g.code_rows:
            idx = g.code_rows
            r_code = np.array([g.members[i].pseudorange for i in idx]) - pred[idx]
            _emit(g.S_code @ r_code, {k: g.S_code @ v[idx] for k, v in geo.items()})

        amb_cols: Dict[object, np.ndarray] = {}
        r_phase = np.empty(n)
        for i, d in enumerate(g.members):
            n_j = ambiguities[(d.sat, d.band)]
            n_i = ambiguities[(d.ref_sat, d.band)]
            r_phase[i] = d.carrier - pred[i] - d.wavelength * (n_j - n_i)
            amb_cols.setdefault(("amb", (d.sat, d.band)), np.zeros((n, 1)))[i, 0] -= d.wavelength
            amb_cols.setdefault(("amb", (d.ref_sat, d.band)), np.zeros((n, 1)))[i, 0] += d.wavelength
        blocks = {k: g.S_phase @ v for k, v in geo.items()}
        blocks.update({k: g.S_phase @ v for k, v in amb_cols.items()})
        _emit(g.S_phase @ r_phase, blocks)

    w_skew = skew(omega_b)
    v_x = R_ew @ (nav.velocity + R @ (w_skew @ lever))
    for m in dopplers:
        if not np.isfinite(m.doppler):
            continue
        e = m.sat_pos - x
        rho = np.linalg.norm(e)
        u = e / rho
        dv = m.sat_vel - v_x
        rate = u @ dv
        pred = rate + clock_drift - SPEED_OF_LIGHT * m.sat_clock_drift
        r = (m.range_rate - pred) / geometry.sigma_doppler
        dr_dx = (dv - rate * u) / rho
        dr_dvx = u
        s = 1.0 / geometry.sigma_doppler
        _emit(np.array([r]), {
            "p": s * (dr_dx @ dx_dp)[None, :],
            "q": s * (dr_dx @ dx_dq + dr_dvx @ (-R_ew @ R @ skew(w_skew @ lever)))[None, :],
            "v": s * (dr_dvx @ R_ew)[None, :],
            "drift": np.array([[-s]]),
            "lever": s * (dr_dx @ dx_dl + dr_dvx @ (R_ew @ R @ w_skew))[None, :],
        })

    if not residuals:
        return np.zeros(0), {}
    total = sum(len(r) for r in residuals)
    out: Dict[object, np.ndarray] = {}
    offset = 0
    for r, blocks in zip(residuals, rows):
        for k, v in blocks.items():
            if k not in out:
                out[k] = np.zeros((total, v.shape[1]))
            out[k][offset:offset + len(r)] = v
        offset += len(r)
    return np.concatenate(residuals), out
