from abc import ABC, abstractmethod
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import structlog

from calib_config import WindowSettings
from fgo.residuals import (
    ODO_COVARIANCE_FLOOR, GnssGeometry, gnss_residuals, imu_factor_residual, motion_residuals, odo_factor_residual,
    prepare_dd_groups,
)
from fgo.states import (
    LEVER_ARM_KEY, MOUNT_ROTATION_KEY, MOUNT_TRANSLATION_KEY, ROTATION_KINDS, CalibState, Key,
    NavState, VariableKind, dimension, epoch_key, local,
)
from fgo.whitening import sqrt_information
from geomath.rotation import quat_to_rot, right_jacobian_inv
from gnss.models import DdMeasurement, GnssRawMeasurement
from preintegration.imu import ImuPreintegrated
from preintegration.motion import MotionConstraint
from preintegration.odometer import OdoPreintegrated

logger = structlog.get_logger()

Values = Mapping[Key, np.ndarray]


def nav_from_values(values: Values, index: int, t: float = 0.0) -> NavState:
    return NavState(
        t=t,
        position=values[epoch_key(VariableKind.POSITION, index)],
        velocity=values[epoch_key(VariableKind.VELOCITY, index)],
        attitude=values[epoch_key(VariableKind.ROTATION, index)],
        accel_bias=values[epoch_key(VariableKind.ACCEL_BIAS, index)],
        gyro_bias=values[epoch_key(VariableKind.GYRO_BIAS, index)],
    )


def calib_from_values(values: Values, index: int) -> CalibState:
    lever = values.get(LEVER_ARM_KEY)
    return CalibState(
        s_v=float(values[epoch_key(VariableKind.SCALE_V, index)][0]),
        s_w=float(values[epoch_key(VariableKind.SCALE_W, index)][0]),
        translation=values[MOUNT_TRANSLATION_KEY],
        rotation=values[MOUNT_ROTATION_KEY],
        lever_arm=None if lever is None else lever,
    )


class Factor(ABC):
    """A residual block over a fixed tuple of variable keys."""
    robust: bool = False
    kind: str = "factor"

    def __init__(self, keys: Sequence[Key]):
        self.keys: Tuple[Key, ...] = tuple(keys)

    @abstractmethod
    def linearize(self, values: Values) -> Tuple[np.ndarray, List[np.ndarray]]:
        """Whitened residual and one Jacobian block per key, in ``self.keys`` order."""

    def residual(self, values: Values) -> np.ndarray:
        return self.linearize(values)[0]

    def refresh(self, values: Values) -> None:
        """Hook run before a solve; preintegrated factors re-integrate here."""


# ──────────────────────────────────────────────
# Priors and random walks
# ──────────────────────────────────────────────
class PriorFactor(Factor):
    kind = "prior"

    def __init__(self, key: Key, mean, sigma):
        super().__init__([key])
        self.mean = np.asarray(mean, dtype=float)
        self.sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (dimension(key),)).copy()

    def linearize(self, values):
        key = self.keys[0]
        delta = local(key, values[key], self.mean)
        J = right_jacobian_inv(delta) if key[0] in ROTATION_KINDS else np.eye(len(delta))
        return delta / self.sigma, [J / self.sigma[:, None]]


class BetweenFactor(Factor):
    """Random-walk link ``x1 − x0 ~ N(0, σ²)`` for vector-space variables."""
    kind = "between"

    def __init__(self, key0: Key, key1: Key, sigma: float):
        super().__init__([key0, key1])
        self.sigma = float(sigma)

    def linearize(self, values):
        k0, k1 = self.keys
        n = dimension(k0)
        r = (values[k1] - values[k0]) / self.sigma
        return r, [-np.eye(n) / self.sigma, np.eye(n) / self.sigma]


# ──────────────────────────────────────────────
# IMU and odometer
# ──────────────────────────────────────────────
_NAV_ROLES = ("p", "q", "v", "ba", "bg")
_NAV_KINDS = (VariableKind.POSITION, VariableKind.ROTATION, VariableKind.VELOCITY,
              VariableKind.ACCEL_BIAS, VariableKind.GYRO_BIAS)


class ImuFactor(Factor):
    kind = "imu"

    def __init__(self, i: int, j: int, pre: ImuPreintegrated, window: Optional[WindowSettings] = None):
        keys = [epoch_key(k, i) for k in _NAV_KINDS] + [epoch_key(k, j) for k in _NAV_KINDS]
        super().__init__(keys)
        self.i, self.j = i, j
        self.pre = pre
        self.window = window or WindowSettings()
        self._S = sqrt_information(pre.covariance, floor=1e-14)

    def refresh(self, values):
        ba = values[epoch_key(VariableKind.ACCEL_BIAS, self.i)]
        bg = values[epoch_key(VariableKind.GYRO_BIAS, self.i)]
        if self.pre.needs_reintegration(ba, bg, self.window.reintegrate_accel_bias, self.window.reintegrate_gyro_bias):
            logger.debug("imu_reintegrated", i=self.i, j=self.j)
            self.pre = self.pre.reintegrate(ba, bg)
            self._S = sqrt_information(self.pre.covariance, floor=1e-14)

    def linearize(self, values):
        r, J = imu_factor_residual(nav_from_values(values, self.i), nav_from_values(values, self.j),
                                   self.pre, sqrt_info=self._S)
        roles = [f"{n}_i" for n in _NAV_ROLES] + [f"{n}_j" for n in _NAV_ROLES]
        return r, [J[role] for role in roles]


class OdometerFactor(Factor):
    kind = "odometer"

    def __init__(self, i: int, j: int, pre: OdoPreintegrated, window: Optional[WindowSettings] = None):
        super().__init__([
            epoch_key(VariableKind.POSITION, i), epoch_key(VariableKind.ROTATION, i),
            epoch_key(VariableKind.POSITION, j), epoch_key(VariableKind.ROTATION, j),
            MOUNT_TRANSLATION_KEY, MOUNT_ROTATION_KEY,
            epoch_key(VariableKind.SCALE_V, i), epoch_key(VariableKind.SCALE_W, i),
        ])
        self.i, self.j = i, j
        self.pre = pre
        self.window = window or WindowSettings()
        self._S = self._whitener(pre)

    @staticmethod
    def _whitener(pre: OdoPreintegrated) -> np.ndarray:
        return sqrt_information(pre.covariance[0:6, 0:6], floor=ODO_COVARIANCE_FLOOR)

    def refresh(self, values):
        calib = calib_from_values(values, self.i)
        w = self.window
        if self.pre.needs_reintegration(calib.translation, calib.rotation_matrix, calib.s_v, calib.s_w,
                                        w.reintegrate_translation, np.radians(w.reintegrate_rotation_deg),
                                        w.reintegrate_scale):
            logger.debug("odometer_reintegrated", i=self.i, j=self.j)
            bg = values.get(epoch_key(VariableKind.GYRO_BIAS, self.i))
            self.pre = self.pre.reintegrate(calib.translation, calib.rotation_matrix, calib.s_v, calib.s_w, bg)
            self._S = self._whitener(self.pre)

    def linearize(self, values):
        r, J = odo_factor_residual(nav_from_values(values, self.i), nav_from_values(values, self.j),
                                   calib_from_values(values, self.i), self.pre, sqrt_info=self._S)
        return r, [J[role] for role in ("p_i", "q_i", "p_j", "q_j", "pm", "qm", "sv", "sw")]


class MotionFactor(Factor):
    kind = "motion"

    def __init__(self, index: int, constraint: MotionConstraint, sigma: float):
        if constraint == MotionConstraint.NONE:
            raise ValueError("no factor for an unconstrained window")
        super().__init__([epoch_key(VariableKind.VELOCITY, index), epoch_key(VariableKind.ROTATION, index),
                          MOUNT_ROTATION_KEY])
        self.index = index
        self.constraint = constraint
        self.sigma = sigma

    def linearize(self, values):
        nav = nav_from_values(values, self.index)
        r, J = motion_residuals(nav, self.constraint, quat_to_rot(values[MOUNT_ROTATION_KEY]), self.sigma)
        return r, [J["v"], J["q"], J["qm"]]


# ──────────────────────────────────────────────
# GNSS
# ──────────────────────────────────────────────
class GnssFactor(Factor):
    """DD code/carrier and Doppler residuals of one epoch, Huber-weighted by the solver."""
    robust = True
    kind = "gnss"

    def __init__(self, index: int, dds: Sequence[DdMeasurement], dopplers: Sequence[GnssRawMeasurement],
                 geometry: GnssGeometry, omega_b: np.ndarray, ambiguity_keys: Mapping[Tuple[str, str], Key],
                 lever: Optional[np.ndarray] = None):
        """``lever`` is the fixed p^b_g; pass None to read it from the lever-arm variable."""
        self.index = index
        self.dds = list(dds)
        self.dopplers = [m for m in dopplers if np.isfinite(m.doppler)]
        self.geometry = geometry
        self.omega_b = np.asarray(omega_b, dtype=float)
        self.lever = None if lever is None else np.asarray(lever, dtype=float)
        used = sorted({(d.sat, d.band) for d in self.dds} | {(d.ref_sat, d.band) for d in self.dds})
        missing = [k for k in used if k not in ambiguity_keys]
        if missing:
            raise ValueError(f"no ambiguity variable for {missing}")
        self.ambiguity_keys = {k: ambiguity_keys[k] for k in used}
        keys = [epoch_key(VariableKind.POSITION, index), epoch_key(VariableKind.ROTATION, index),
                epoch_key(VariableKind.VELOCITY, index), epoch_key(VariableKind.CLOCK_DRIFT, index)]
        if self.lever is None:
            keys.append(LEVER_ARM_KEY)
        keys.extend(self.ambiguity_keys[k] for k in used)
        super().__init__(keys)
        self._groups = prepare_dd_groups(self.dds, geometry.base_position)

    @property
    def observed(self) -> List[Tuple[str, str]]:
        return list(self.ambiguity_keys)

    def linearize(self, values):
        nav = nav_from_values(values, self.index)
        lever = values[LEVER_ARM_KEY] if self.lever is None else self.lever
        ambiguities = {k: float(values[key][0]) for k, key in self.ambiguity_keys.items()}
        r, J = gnss_residuals(nav, float(values[self.keys[3]][0]), self.dds, self.dopplers, lever,
                              self.omega_b, ambiguities, self.geometry, groups=self._groups)
        m = len(r)

        def block(role, dim):
            return J.get(role, np.zeros((m, dim)))

        blocks = [block("p", 3), block("q", 3), block("v", 3), block("drift", 1)]
        if self.lever is None:
            blocks.append(block("lever", 3))
        blocks.extend(block(("amb", k), 1) for k in self.ambiguity_keys)
        return r, blocks
