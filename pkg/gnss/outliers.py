from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import structlog

from gnss.double_difference import elevation_variance, predicted_range_difference
from gnss.models import DdMeasurement, ObservationEpoch, OutlierReport

logger = structlog.get_logger()


# ──────────────────────────────────────────────
# Stage 1: Doppler-predicted pseudo-range consistency
# ──────────────────────────────────────────────
@dataclass
class _StreamAnchor:
    t: float
    predicted: float          # pseudo-range carried forward from the last accepted epoch
    anchor_var: float         # variance of the anchoring pseudo-range
    range_rate: float         # λD at ``t``
    coasted: int = 0


class DopplerScreen:
    """Per-satellite pseudo-range screen fed one epoch at a time.

    The pseudo-range predicted from the last accepted epoch plus the
    trapezoid-integrated Doppler is compared with the new pseudo-range.
    A rejected epoch keeps the prediction coasting (up to ``max_coast``
    epochs) so a single spike does not poison its successor.
    """

    def __init__(self, receiver: str, sigma0_code: float, sigma_doppler: float,
                 k1: float = 4.0, max_coast: int = 5, max_gap: float = 3.0):
        self.receiver = receiver
        self.sigma0_code = sigma0_code
        self.sigma_doppler = sigma_doppler
        self.k1 = k1
        self.max_coast = max_coast
        self.max_gap = max_gap
        self._streams: Dict[Tuple[str, str], _StreamAnchor] = {}

    def _anchor(self, m) -> _StreamAnchor:
        return _StreamAnchor(t=m.t, predicted=m.pseudorange,
                             anchor_var=elevation_variance(m.elevation, self.sigma0_code),
                             range_rate=m.range_rate)

    def update(self, epoch: ObservationEpoch) -> List[OutlierReport]:
        reports = []
        for m in epoch.measurements:
            key = m.key
            state = self._streams.get(key)
            if state is None or not np.isfinite(m.doppler) or m.t - state.t > self.max_gap or m.t <= state.t:
                self._streams[key] = self._anchor(m)
                continue

            dt = m.t - state.t
            predicted = state.predicted + 0.5 * (state.range_rate + m.range_rate) * dt
            steps = state.coasted + 1
            gate_var = (elevation_variance(m.elevation, self.sigma0_code) + state.anchor_var
                        + steps * 0.5 * dt ** 2 * self.sigma_doppler ** 2)
            statistic = abs(m.pseudorange - predicted) / np.sqrt(gate_var)
            rejected = statistic > self.k1
            reports.append(OutlierReport(t=m.t, sat=m.sat, band=m.band, receiver=self.receiver,
                                         stage=1, statistic=float(statistic),
                                         threshold=self.k1, rejected=bool(rejected)))
            if not rejected:
                self._streams[key] = self._anchor(m)
            elif state.coasted < self.max_coast:
                state.predicted = predicted
                state.range_rate = m.range_rate
                state.t = m.t
                state.coasted += 1
            else:
                logger.warning("doppler_screen_reanchored", sat=m.sat, band=m.band,
                               receiver=self.receiver, t=m.t)
                self._streams[key] = self._anchor(m)

            if rejected:
                logger.info("outlier_rejected", stage=1, sat=m.sat, band=m.band,
                            receiver=self.receiver, t=m.t, statistic=round(float(statistic), 2))
        return reports


def screen_outliers_stage1(
    epochs: Iterable[ObservationEpoch],
    receiver: str = "rover",
    sigma0_code: float = 0.3,
    sigma_doppler: float = 0.05,
    k1: float = 4.0,
    max_coast: int = 5,
) -> List[OutlierReport]:
    """Batch form of :class:`DopplerScreen` over a time-ordered epoch stream."""
    screen = DopplerScreen(receiver, sigma0_code, sigma_doppler, k1=k1, max_coast=max_coast)
    reports: List[OutlierReport] = []
    for epoch in epochs:
        reports.extend(screen.update(epoch))
    return reports


def excluded_keys(reports: Iterable[OutlierReport]) -> Set[Tuple[str, str]]:
    return {(r.sat, r.band) for r in reports if r.rejected}


# ──────────────────────────────────────────────
# Stage 2: DD pseudo-range vs preintegrated prediction
# ──────────────────────────────────────────────
def screen_outliers_stage2(
    dds: Sequence[DdMeasurement],
    predicted_antenna: Optional[np.ndarray],
    base_position: np.ndarray,
    prediction_cov: Optional[np.ndarray] = None,
    k2: float = 3.0,
) -> Tuple[List[OutlierReport], List[DdMeasurement]]:
    """Marks DD pseudo-ranges inconsistent with the predicted antenna position as unusable.

    Carrier-phase DDs are kept. With no prediction the stage is skipped.
    """
    if predicted_antenna is None:
        return [], list(dds)
    cov = np.zeros((3, 3)) if prediction_cov is None else prediction_cov
    reports: List[OutlierReport] = []
    screened: List[DdMeasurement] = []
    for dd in dds:
        if not dd.code_usable:
            screened.append(dd)
            continue
        u_j = dd.sat_pos - predicted_antenna
        u_i = dd.ref_sat_pos - predicted_antenna
        d = u_j / np.linalg.norm(u_j) - u_i / np.linalg.norm(u_i)
        residual = dd.pseudorange - predicted_range_difference(dd, predicted_antenna, base_position)
        statistic = abs(residual) / np.sqrt(dd.var_pseudorange + d @ cov @ d)
        rejected = statistic > k2
        reports.append(OutlierReport(t=dd.t, sat=dd.sat, band=dd.band, receiver="dd", stage=2,
                                     statistic=float(statistic), threshold=k2, rejected=bool(rejected)))
        if rejected:
            logger.info("outlier_rejected", stage=2, sat=dd.sat, ref_sat=dd.ref_sat, band=dd.band,
                        t=dd.t, statistic=round(float(statistic), 2))
            screened.append(replace(dd, code_usable=False))
        else:
            screened.append(dd)
    return reports, screened
