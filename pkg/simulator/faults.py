import dataclasses
from typing import List, Optional, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, Field, field_validator

from fgo.inputs import AmbiguityTruth, CalibrationDataset, FaultRecord
from gnss.models import GnssRawMeasurement, ObservationEpoch

logger = structlog.get_logger()


class PseudorangeStep(BaseModel):
    t: float                                 # s, first affected epoch
    sat: str
    band: str = "1"
    magnitude: float                         # m
    epochs: int = Field(default=1, ge=1)
    receiver: str = "rover"


class CycleSlip(BaseModel):
    t: float
    sat: str
    band: str = "1"
    cycles: int

    @field_validator("cycles")
    @classmethod
    def _non_zero(cls, value: int) -> int:
        if value == 0:
            raise ValueError("a cycle slip needs a non-zero cycle count")
        return value


class FaultSpec(BaseModel):
    pseudorange_steps: List[PseudorangeStep] = Field(default_factory=list)
    cycle_slips: List[CycleSlip] = Field(default_factory=list)
    lever_arm_error: Optional[Tuple[float, float, float]] = None   # m, added to the assumed lever arm
    outliers_per_100: float = Field(default=0.0, ge=0)             # random rover pseudo-range outliers
    outlier_magnitude: Tuple[float, float] = (5.0, 10.0)           # m

    @property
    def empty(self) -> bool:
        return (not self.pseudorange_steps and not self.cycle_slips
                and self.lever_arm_error is None and self.outliers_per_100 == 0.0)


def _replace(epoch: ObservationEpoch, sat: str, band: str, **changes) -> Tuple[ObservationEpoch, bool]:
    hit = False
    measurements = []
    for m in epoch.measurements:
        if m.sat == sat and m.band == band:
            hit = True
            updates = {}
            for name, delta in changes.items():
                if name == "lli":
                    updates["lli"] = delta
                else:
                    updates[name] = getattr(m, name) + delta
            m = dataclasses.replace(m, **updates)
        measurements.append(m)
    return ObservationEpoch(t=epoch.t, measurements=tuple(measurements)), hit


def _check_span(dataset: CalibrationDataset, t: float) -> None:
    t0, t1 = dataset.rover[0].t, dataset.rover[-1].t
    if not t0 <= t <= t1:
        raise ValueError(f"fault epoch {t} outside the dataset span [{t0}, {t1}]")


def inject_faults(dataset: CalibrationDataset, spec: FaultSpec, rng: np.random.Generator) -> CalibrationDataset:
    """Applies faults to a copy of ``dataset`` and records each one in the scenario truth."""
    rover = list(dataset.rover)
    base = list(dataset.base)
    scenario = dataset.scenario.model_copy(deep=True)
    records: List[FaultRecord] = []

    for step in spec.pseudorange_steps:
        _check_span(dataset, step.t)
        stream = rover if step.receiver == "rover" else base
        applied = 0
        for k, epoch in enumerate(stream):
            if epoch.t >= step.t - 1e-9 and applied < step.epochs:
                stream[k], hit = _replace(epoch, step.sat, step.band, pseudorange=step.magnitude)
                if hit:
                    records.append(FaultRecord(kind="pseudorange_step", t=epoch.t, sat=step.sat, band=step.band,
                                               receiver=step.receiver, magnitude=step.magnitude))
                applied += 1

    for slip in spec.cycle_slips:
        _check_span(dataset, slip.t)
        first = True
        for k, epoch in enumerate(rover):
            if epoch.t < slip.t - 1e-9:
                continue
            lam = next((m.wavelength for m in epoch.measurements if m.key == (slip.sat, slip.band)), None)
            if lam is None:
                continue
            changes = {"carrier": slip.cycles * lam}
            if first:
                changes["lli"] = True
            rover[k], _ = _replace(epoch, slip.sat, slip.band, **changes)
            if first:
                records.append(FaultRecord(kind="cycle_slip", t=epoch.t, sat=slip.sat, band=slip.band,
                                           magnitude=float(slip.cycles)))
                if scenario.truth is not None:
                    before = scenario.truth.ambiguity_at(slip.sat, slip.band, epoch.t)
                    if before is not None:
                        scenario.truth.ambiguities.append(AmbiguityTruth(
                            sat=slip.sat, band=slip.band, t_from=epoch.t, n_sd=before + slip.cycles))
                first = False

    if spec.outliers_per_100 > 0.0:
        lo, hi = spec.outlier_magnitude
        for k, epoch in enumerate(rover):
            if not epoch.measurements or rng.uniform() >= spec.outliers_per_100 / 100.0:
                continue
            target: GnssRawMeasurement = epoch.measurements[int(rng.integers(len(epoch.measurements)))]
            magnitude = float(rng.uniform(lo, hi) * rng.choice([-1.0, 1.0]))
            rover[k], _ = _replace(epoch, target.sat, target.band, pseudorange=magnitude)
            records.append(FaultRecord(kind="random_outlier", t=epoch.t, sat=target.sat, band=target.band,
                                       magnitude=magnitude))

    if spec.lever_arm_error is not None:
        assumed = np.asarray(scenario.lever_arm, dtype=float) + np.asarray(spec.lever_arm_error, dtype=float)
        scenario.lever_arm = tuple(float(x) for x in assumed)
        records.append(FaultRecord(kind="lever_arm", magnitude=float(np.linalg.norm(spec.lever_arm_error))))

    scenario.faults = list(scenario.faults) + records
    logger.info("faults_injected", total=len(records),
                by_kind={kind: sum(r.kind == kind for r in records) for kind in sorted({r.kind for r in records})})
    return dataclasses.replace(dataset, rover=rover, base=base, scenario=scenario)
