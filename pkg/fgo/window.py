from typing import Callable, Dict, Iterable, List, Optional, Set, Tuple

import numpy as np
import structlog

from fgo.factors import Factor, calib_from_values, nav_from_values
from fgo.states import (
    EPOCH_KINDS, CalibState, Key, NavState, VariableKind, dimension, epoch_key,
)

logger = structlog.get_logger()


class FactorGraphWindow:
    """Sliding window of estimator states and the factors that connect them.

    Variables are kept in insertion order so that solves are deterministic.
    Per-epoch variables are keyed by the state index; window-wide variables
    (mount extrinsics, lever arm) and ambiguity arcs have their own keys.
    """

    def __init__(self, capacity: int = 3):
        if capacity < 2:
            raise ValueError("window capacity must be >= 2")
        self.capacity = capacity
        self.values: Dict[Key, np.ndarray] = {}
        self.factors: List[Factor] = []
        self.states: List[int] = []
        self.times: Dict[int, float] = {}
        self.fixed: Set[Key] = set()

    # ──────────────────────────────────────────────
    # Variables
    # ──────────────────────────────────────────────
    def add_variable(self, key: Key, value, fixed: bool = False) -> None:
        value = np.atleast_1d(np.asarray(value, dtype=float)).copy()
        expected = 4 if key[0] in (VariableKind.ROTATION, VariableKind.MOUNT_ROTATION) else dimension(key)
        if value.shape != (expected,):
            raise ValueError(f"variable {key} expects shape ({expected},), got {value.shape}")
        if key in self.values:
            raise ValueError(f"variable {key} already in window")
        self.values[key] = value
        if fixed:
            self.fixed.add(key)

    def add_state(self, index: int, t: float, nav: NavState, clock_drift: float, s_v: float, s_w: float) -> None:
        if self.states and index <= self.states[-1]:
            raise ValueError(f"state index {index} is not newer than {self.states[-1]}")
        self.states.append(index)
        self.times[index] = float(t)
        self.add_variable(epoch_key(VariableKind.POSITION, index), nav.position)
        self.add_variable(epoch_key(VariableKind.ROTATION, index), nav.attitude)
        self.add_variable(epoch_key(VariableKind.VELOCITY, index), nav.velocity)
        self.add_variable(epoch_key(VariableKind.ACCEL_BIAS, index), nav.accel_bias)
        self.add_variable(epoch_key(VariableKind.GYRO_BIAS, index), nav.gyro_bias)
        self.add_variable(epoch_key(VariableKind.CLOCK_DRIFT, index), clock_drift)
        self.add_variable(epoch_key(VariableKind.SCALE_V, index), s_v)
        self.add_variable(epoch_key(VariableKind.SCALE_W, index), s_w)

    def remove_variables(self, keys: Iterable[Key]) -> None:
        for key in keys:
            self.values.pop(key, None)
            self.fixed.discard(key)

    def drop_state(self, index: int) -> None:
        self.remove_variables(epoch_key(kind, index) for kind in EPOCH_KINDS)
        self.states.remove(index)
        self.times.pop(index, None)

    def state_keys(self, index: int) -> List[Key]:
        return [epoch_key(kind, index) for kind in EPOCH_KINDS]

    def free_keys(self) -> List[Key]:
        return [k for k in self.values if k not in self.fixed]

    # ──────────────────────────────────────────────
    # Factors
    # ──────────────────────────────────────────────
    def add_factor(self, factor: Factor) -> None:
        missing = [k for k in factor.keys if k not in self.values]
        if missing:
            raise ValueError(f"{factor.kind} factor references unknown variables {missing}")
        self.factors.append(factor)

    def remove_factors(self, predicate: Callable[[Factor], bool]) -> List[Factor]:
        removed = [f for f in self.factors if predicate(f)]
        self.factors = [f for f in self.factors if not predicate(f)]
        return removed

    def factors_touching(self, keys: Iterable[Key]) -> List[Factor]:
        keys = set(keys)
        return [f for f in self.factors if keys.intersection(f.keys)]

    # ──────────────────────────────────────────────
    # Structure
    # ──────────────────────────────────────────────
    def ordering(self, keys: Optional[List[Key]] = None) -> Tuple[Dict[Key, slice], int]:
        """Tangent-space column slices for ``keys`` (default: all free variables)."""
        keys = self.free_keys() if keys is None else keys
        slices, offset = {}, 0
        for key in keys:
            n = dimension(key)
            slices[key] = slice(offset, offset + n)
            offset += n
        return slices, offset

    @property
    def full(self) -> bool:
        return len(self.states) >= self.capacity

    @property
    def oldest(self) -> Optional[int]:
        return self.states[0] if self.states else None

    @property
    def latest(self) -> Optional[int]:
        return self.states[-1] if self.states else None

    def nav_state(self, index: int) -> NavState:
        nav = nav_from_values(self.values, index, t=self.times[index])
        return nav

    def calib_state(self, index: int) -> CalibState:
        return calib_from_values(self.values, index)

    def snapshot(self) -> Dict[Key, np.ndarray]:
        return {k: v.copy() for k, v in self.values.items()}

    def restore(self, values: Dict[Key, np.ndarray]) -> None:
        for k, v in values.items():
            if k in self.values:
                self.values[k] = v.copy()
