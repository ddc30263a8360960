from collections import defaultdict
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import structlog

from gnss.models import DdMeasurement, GnssRawMeasurement

logger = structlog.get_logger()


def elevation_variance(elevation: float, sigma0: float) -> float:
    """Elevation-dependent variance (σ₀·√(1 + 1/sin El))², in m²."""
    if elevation <= 0.0:
        raise ValueError(f"satellite below horizon (El={elevation:.4f} rad)")
    return sigma0 ** 2 * (1.0 + 1.0 / np.sin(elevation))


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def form_double_differences(
    rover: Sequence[GnssRawMeasurement],
    base: Sequence[GnssRawMeasurement],
    *,
    sigma0_code: float = 0.3,
    sigma0_phase: float = 0.003,
    code_excluded: Optional[Set[Tuple[str, str]]] = None,
    receiver_position: Optional[np.ndarray] = None,
) -> List[DdMeasurement]:
    """Forms DDs per (constellation, band) against the highest-elevation common satellite.

    ``code_excluded`` holds (sat, band) keys whose pseudo-range was screened out;
    those satellites are avoided as reference and their DD code is marked unusable.
    Groups with fewer than two common satellites are skipped with a warning.
    """
    code_excluded = code_excluded or set()
    base_by_key: Dict[Tuple[str, str], GnssRawMeasurement] = {m.key: m for m in base}

    groups: Dict[Tuple[str, str], List[Tuple[GnssRawMeasurement, GnssRawMeasurement]]] = defaultdict(list)
    for rm in rover:
        bm = base_by_key.get(rm.key)
        if bm is None:
            continue
        if abs(rm.t - bm.t) > 1e-6:
            raise ValueError(f"rover/base epoch mismatch: {rm.t} vs {bm.t}")
        groups[(rm.constellation, rm.band)].append((rm, bm))

    out: List[DdMeasurement] = []
    for (constellation, band), pairs in sorted(groups.items()):
        if len(pairs) < 2:
            logger.warning("dd_insufficient_common_satellites",
                           t=pairs[0][0].t if pairs else None,
                           constellation=constellation, band=band, common=len(pairs))
            continue

        usable = [p for p in pairs if p[0].key not in code_excluded]
        candidates = usable if usable else pairs
        ref_r, ref_b = max(candidates, key=lambda p: (p[0].elevation, p[0].sat))
        ref_code_ok = ref_r.key not in code_excluded

        ref_var_p = elevation_variance(ref_r.elevation, sigma0_code) + elevation_variance(ref_b.elevation, sigma0_code)
        ref_var_l = elevation_variance(ref_r.elevation, sigma0_phase) + elevation_variance(ref_b.elevation, sigma0_phase)
        sd_ref_p = ref_r.pseudorange - ref_b.pseudorange
        sd_ref_l = ref_r.carrier - ref_b.carrier

        for rm, bm in sorted(pairs, key=lambda p: p[0].sat):
            if rm.sat == ref_r.sat:
                continue
            var_p = ref_var_p + elevation_variance(rm.elevation, sigma0_code) + elevation_variance(bm.elevation, sigma0_code)
            var_l = ref_var_l + elevation_variance(rm.elevation, sigma0_phase) + elevation_variance(bm.elevation, sigma0_phase)
            los_ref = los_sat = None
            if receiver_position is not None:
                los_ref = _unit(ref_r.sat_pos - receiver_position)
                los_sat = _unit(rm.sat_pos - receiver_position)
            out.append(DdMeasurement(
                t=rm.t,
                ref_sat=ref_r.sat,
                sat=rm.sat,
                band=band,
                wavelength=rm.wavelength,
                pseudorange=(rm.pseudorange - bm.pseudorange) - sd_ref_p,
                carrier=(rm.carrier - bm.carrier) - sd_ref_l,
                var_pseudorange=var_p,
                var_carrier=var_l,
                ref_var_pseudorange=ref_var_p,
                ref_var_carrier=ref_var_l,
                ref_sat_pos=np.asarray(ref_r.sat_pos, dtype=float),
                sat_pos=np.asarray(rm.sat_pos, dtype=float),
                elevation=rm.elevation,
                ref_elevation=ref_r.elevation,
                los_ref=los_ref,
                los_sat=los_sat,
                code_usable=ref_code_ok and rm.key not in code_excluded,
            ))
    return out


def group_double_differences(dds: Iterable[DdMeasurement]) -> Dict[Tuple[str, str, str], List[DdMeasurement]]:
    groups: Dict[Tuple[str, str, str], List[DdMeasurement]] = defaultdict(list)
    for dd in dds:
        groups[dd.group].append(dd)
    return dict(groups)


def dd_covariance(group: Sequence[DdMeasurement], kind: str = "carrier") -> np.ndarray:
    """Covariance of DDs sharing one reference: diag(own legs) + reference legs · 11ᵀ."""
    if kind == "carrier":
        var = np.array([d.var_carrier for d in group])
        ref = np.array([d.ref_var_carrier for d in group])
    elif kind == "pseudorange":
        var = np.array([d.var_pseudorange for d in group])
        ref = np.array([d.ref_var_pseudorange for d in group])
    else:
        raise ValueError(f"unknown DD kind: {kind}")
    n = len(group)
    return np.diag(var - ref) + np.full((n, n), ref[0] if n else 0.0)


def predicted_range_difference(dd: DdMeasurement, antenna_ecef: np.ndarray, base_ecef: np.ndarray) -> float:
    """ρ_DD from geometry: (ρ_r,j − ρ_b,j) − (ρ_r,i − ρ_b,i)."""
    rover = np.linalg.norm(dd.sat_pos - antenna_ecef) - np.linalg.norm(dd.ref_sat_pos - antenna_ecef)
    base = np.linalg.norm(dd.sat_pos - base_ecef) - np.linalg.norm(dd.ref_sat_pos - base_ecef)
    return float(rover - base)
