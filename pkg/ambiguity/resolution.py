from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import structlog

from ambiguity.lambda_search import lambda_search
from fgo.factors import Factor
from fgo.states import Key

logger = structlog.get_logger()

SdKey = Tuple[str, str]                  # (sat, band)


@dataclass(frozen=True)
class DdPair:
    band: str
    ref_sat: str
    sat: str

    @property
    def ref_key(self) -> SdKey:
        return (self.ref_sat, self.band)

    @property
    def sat_key(self) -> SdKey:
        return (self.sat, self.band)


@dataclass
class FloatAmbiguitySet:
    values: np.ndarray                   # a_DD, cycles
    covariance: np.ndarray               # Q_DD, cycles²
    pairs: List[DdPair] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def bands(self) -> List[str]:
        return sorted({p.band for p in self.pairs})

    def subset(self, indices: Sequence[int]) -> "FloatAmbiguitySet":
        idx = np.asarray(list(indices), dtype=int)
        return FloatAmbiguitySet(
            values=self.values[idx],
            covariance=self.covariance[np.ix_(idx, idx)],
            pairs=[self.pairs[i] for i in idx],
        )


@dataclass
class FixResult:
    best: np.ndarray
    second: np.ndarray
    q1: float
    q2: float
    ratio: float
    accepted: bool
    ambiguities: FloatAmbiguitySet
    reason: str = ""

    @property
    def dimension(self) -> int:
        return len(self.ambiguities)

    def integers(self) -> Dict[DdPair, int]:
        return {p: int(v) for p, v in zip(self.ambiguities.pairs, self.best)}


def _constellation(sat: str) -> str:
    return sat[0]


# ──────────────────────────────────────────────
# SD → DD
# ──────────────────────────────────────────────
def sd_to_dd(
    keys: Sequence[SdKey],
    a_sd: np.ndarray,
    Q_sd: np.ndarray,
    references: Mapping[Tuple[str, str], str],
) -> FloatAmbiguitySet:
    """Differences SD ambiguities against a reference satellite per (constellation, band).

    ``references`` maps (constellation, band) to the reference satellite; groups
    with no listed reference, or whose reference is absent, are skipped.
    """
    keys = list(keys)
    a_sd = np.asarray(a_sd, dtype=float)
    Q_sd = np.asarray(Q_sd, dtype=float)
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate satellite in SD ambiguity set")
    index = {k: i for i, k in enumerate(keys)}
    rows, pairs = [], []
    for sat, band in keys:
        ref = references.get((_constellation(sat), band))
        if ref is None or ref == sat or (ref, band) not in index:
            continue
        row = np.zeros(len(keys))
        row[index[(sat, band)]] = 1.0
        row[index[(ref, band)]] = -1.0
        rows.append(row)
        pairs.append(DdPair(band=band, ref_sat=ref, sat=sat))
    if not rows:
        return FloatAmbiguitySet(values=np.zeros(0), covariance=np.zeros((0, 0)), pairs=[])
    G = np.vstack(rows)
    Q_dd = G @ Q_sd @ G.T
    Q_dd = 0.5 * (Q_dd + Q_dd.T)
    try:
        np.linalg.cholesky(Q_dd)
    except np.linalg.LinAlgError as exc:
        raise ValueError("DD ambiguity covariance is singular") from exc
    return FloatAmbiguitySet(values=G @ a_sd, covariance=Q_dd, pairs=pairs)


# ──────────────────────────────────────────────
# Integer Fix + Ratio Test
# ──────────────────────────────────────────────
def _rejected(amb: FloatAmbiguitySet, reason: str) -> FixResult:
    rounded = np.round(amb.values)
    return FixResult(best=rounded, second=rounded, q1=float("nan"), q2=float("nan"), ratio=0.0,
                     accepted=False, ambiguities=amb, reason=reason)


def ils_fix(amb: FloatAmbiguitySet, ratio_threshold: float = 3.0, condition_limit: float = 1e12) -> FixResult:
    if len(amb) == 0:
        return _rejected(amb, "empty")
    condition = float(np.linalg.cond(amb.covariance))
    if not np.isfinite(condition) or condition > condition_limit:
        logger.warning("ambiguity_covariance_ill_conditioned", condition=condition, dimension=len(amb))
        return _rejected(amb, "ill_conditioned")
    try:
        candidates, dist, _ = lambda_search(amb.values, amb.covariance, m=2)
    except (ValueError, RuntimeError) as exc:
        logger.warning("ambiguity_search_failed", error=str(exc), dimension=len(amb))
        return _rejected(amb, "search_failed")
    q1, q2 = float(dist[0]), float(dist[1])
    ratio = float("inf") if q1 <= 0.0 else q2 / q1
    accepted = ratio >= ratio_threshold
    return FixResult(
        best=candidates[:, 0],
        second=candidates[:, 1],
        q1=q1,
        q2=q2,
        ratio=ratio,
        accepted=accepted,
        ambiguities=amb,
        reason="" if accepted else "ratio",
    )


def partial_fix(
    amb: FloatAmbiguitySet,
    elevations: Mapping[str, float],
    min_elevation_deg: float = 30.0,
    ratio_threshold: float = 3.0,
    condition_limit: float = 1e12,
) -> FixResult:
    """Retries the integer fix on pairs whose satellites are both above ``min_elevation_deg``."""
    cutoff = np.radians(min_elevation_deg)
    keep = [i for i, p in enumerate(amb.pairs)
            if elevations.get(p.sat, 0.0) > cutoff and elevations.get(p.ref_sat, 0.0) > cutoff]
    if not keep:
        return _rejected(amb.subset([]), "no_high_satellites")
    return ils_fix(amb.subset(keep), ratio_threshold, condition_limit)


# ──────────────────────────────────────────────
# Fixed-Integer Factor
# ──────────────────────────────────────────────
class AmbiguityFixFactor(Factor):
    """Pins an SD ambiguity difference to its fixed DD integer."""
    kind = "ambiguity_fix"

    def __init__(self, pair: DdPair, ref_key: Key, sat_key: Key, integer: int, variance: float = 1e-6):
        super().__init__([ref_key, sat_key])
        self.pair = pair
        self.integer = int(integer)
        self.sigma = float(np.sqrt(variance))

    def linearize(self, values):
        ref_key, sat_key = self.keys
        r = (values[sat_key] - values[ref_key] - self.integer) / self.sigma
        return r, [np.array([[-1.0 / self.sigma]]), np.array([[1.0 / self.sigma]])]


def ar_factor(fix: FixResult, ambiguity_keys: Mapping[SdKey, Key], variance: float = 1e-6) -> List[AmbiguityFixFactor]:
    """Fix factors for an accepted result; pairs with a satellite out of view are dropped."""
    if not fix.accepted:
        raise ValueError("cannot build fix factors from a rejected fix")
    factors = []
    for pair, integer in fix.integers().items():
        ref_key = ambiguity_keys.get(pair.ref_key)
        sat_key = ambiguity_keys.get(pair.sat_key)
        if ref_key is None or sat_key is None:
            logger.info("ambiguity_fix_dropped", sat=pair.sat, ref_sat=pair.ref_sat, band=pair.band)
            continue
        factors.append(AmbiguityFixFactor(pair, ref_key, sat_key, integer, variance))
    return factors
