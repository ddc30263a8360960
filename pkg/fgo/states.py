"""State containers and variable keys for the sliding-window graph.

A variable key is a tuple ``(kind, index)``: per-epoch variables use the
state index, window-wide calibration variables use ``None`` and carrier
ambiguities use ``(sat, band, arc)``.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Hashable, Optional, Tuple

import numpy as np

from geomath.rotation import quat_boxminus, quat_boxplus, quat_normalize, quat_to_rot


class VariableKind(str, Enum):
    POSITION = "p"
    ROTATION = "q"
    VELOCITY = "v"
    ACCEL_BIAS = "ba"
    GYRO_BIAS = "bg"
    CLOCK_DRIFT = "drift"        # c·ṫ_r in m/s
    SCALE_V = "sv"
    SCALE_W = "sw"
    MOUNT_TRANSLATION = "pm"     # p^b_m
    MOUNT_ROTATION = "qm"        # q^b_m
    LEVER_ARM = "pg"             # p^b_g
    AMBIGUITY = "n"              # SD carrier ambiguity, cycles


Key = Tuple[VariableKind, Hashable]

DIMENSIONS: Dict[VariableKind, int] = {
    VariableKind.POSITION: 3,
    VariableKind.ROTATION: 3,
    VariableKind.VELOCITY: 3,
    VariableKind.ACCEL_BIAS: 3,
    VariableKind.GYRO_BIAS: 3,
    VariableKind.CLOCK_DRIFT: 1,
    VariableKind.SCALE_V: 1,
    VariableKind.SCALE_W: 1,
    VariableKind.MOUNT_TRANSLATION: 3,
    VariableKind.MOUNT_ROTATION: 3,
    VariableKind.LEVER_ARM: 3,
    VariableKind.AMBIGUITY: 1,
}

ROTATION_KINDS = frozenset({VariableKind.ROTATION, VariableKind.MOUNT_ROTATION})
EPOCH_KINDS = (
    VariableKind.POSITION, VariableKind.ROTATION, VariableKind.VELOCITY,
    VariableKind.ACCEL_BIAS, VariableKind.GYRO_BIAS, VariableKind.CLOCK_DRIFT,
    VariableKind.SCALE_V, VariableKind.SCALE_W,
)

MOUNT_TRANSLATION_KEY: Key = (VariableKind.MOUNT_TRANSLATION, None)
MOUNT_ROTATION_KEY: Key = (VariableKind.MOUNT_ROTATION, None)
LEVER_ARM_KEY: Key = (VariableKind.LEVER_ARM, None)


def epoch_key(kind: VariableKind, index: int) -> Key:
    return (kind, index)


def ambiguity_key(sat: str, band: str, arc: int) -> Key:
    return (VariableKind.AMBIGUITY, (sat, band, arc))


def dimension(key: Key) -> int:
    return DIMENSIONS[key[0]]


def retract(key: Key, value: np.ndarray, delta: np.ndarray) -> np.ndarray:
    if key[0] in ROTATION_KINDS:
        return quat_boxplus(value, delta)
    return value + delta


def local(key: Key, value: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Tangent-space difference ``value ⊟ reference``."""
    if key[0] in ROTATION_KINDS:
        return quat_boxminus(value, reference)
    return np.asarray(value, dtype=float) - np.asarray(reference, dtype=float)


# ──────────────────────────────────────────────
# State Snapshots
# ──────────────────────────────────────────────
@dataclass
class NavState:
    t: float
    position: np.ndarray         # p^w_b
    velocity: np.ndarray         # v^w_b
    attitude: np.ndarray         # q^w_b, [w, x, y, z]
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.attitude = quat_normalize(self.attitude)
        self.accel_bias = np.asarray(self.accel_bias, dtype=float)
        self.gyro_bias = np.asarray(self.gyro_bias, dtype=float)

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_rot(self.attitude)


@dataclass
class CalibState:
    s_v: float
    s_w: float
    translation: np.ndarray              # p^b_m
    rotation: np.ndarray                 # q^b_m
    lever_arm: Optional[np.ndarray] = None

    def __post_init__(self):
        self.translation = np.asarray(self.translation, dtype=float)
        self.rotation = quat_normalize(self.rotation)
        if self.lever_arm is not None:
            self.lever_arm = np.asarray(self.lever_arm, dtype=float)

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_rot(self.rotation)


@dataclass
class AmbiguityEstimate:
    value: float                         # float SD ambiguity, cycles
    fixed: Optional[int] = None

    def __post_init__(self):
        if self.fixed is not None and int(self.fixed) != self.fixed:
            raise ValueError("fixed ambiguities must be integers")


@dataclass
class GnssState:
    clock_drift: float                   # ṫ_r, s/s
    ambiguities: Dict[Tuple[str, str], AmbiguityEstimate] = field(default_factory=dict)
