"""CSV/JSON persistence for datasets and calibration runs.

Dataset directory layout::

    rover.csv, base.csv   t, sat, band, P, L_cycles, D, sat_x..sat_vz, sat_clk, sat_clk_drift, el_deg, az_deg, lli
    imu.csv               t, ax, ay, az, gx, gy, gz
    odo.csv               t, v, omega
    truth.csv             per-epoch truth rows (simulated data only)
    scenario.json         ScenarioInfo
"""
import json
import os
import re
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import structlog
from pydantic import ValidationError

from fgo.inputs import CalibrationDataset, ScenarioInfo
from fgo.pipeline import CalibrationRun
from gnss.constants import wavelength
from gnss.models import GnssRawMeasurement, ObservationEpoch
from harness.errors import DataFormatError, UnitSanityError
from preintegration.models import ImuSeries, OdoSeries

logger = structlog.get_logger()

OBSERVATION_COLUMNS = ["t", "sat", "band", "P", "L_cycles", "D", "sat_x", "sat_y", "sat_z",
                       "sat_vx", "sat_vy", "sat_vz", "sat_clk", "sat_clk_drift", "el_deg", "az_deg", "lli"]
IMU_COLUMNS = ["t", "ax", "ay", "az", "gx", "gy", "gz"]
ODO_COLUMNS = ["t", "v", "omega"]
DATASET_FILES = ["rover.csv", "base.csv", "imu.csv", "odo.csv", "truth.csv", "scenario.json"]
RUN_FILES = ["calibration.csv", "trajectory.csv", "fixes.csv", "outliers.csv", "windows.csv"]

MAX_GYRO = 20.0          # rad/s; larger values usually mean deg/s
MAX_ACCEL = 100.0        # m/s^2
MAX_SPEED = 60.0         # m/s
FILE_LINE_OFFSET = 2     # header is line 1


# ──────────────────────────────────────────────
# CSV Reading
# ──────────────────────────────────────────────
def _read_csv(path: str, columns: Sequence[str], optional: Sequence[str] = ()) -> pd.DataFrame:
    if not os.path.exists(path):
        raise DataFormatError(f"missing file {os.path.basename(path)}", {"path": path})
    try:
        frame = pd.read_csv(path, dtype={"sat": str, "band": str})
    except pd.errors.ParserError as exc:
        match = re.search(r"line (\d+)", str(exc))
        raise DataFormatError(f"malformed CSV row in {os.path.basename(path)}",
                              {"path": path, "line": int(match.group(1)) if match else None,
                               "detail": str(exc)}) from exc
    except pd.errors.EmptyDataError as exc:
        raise DataFormatError(f"empty file {os.path.basename(path)}", {"path": path}) from exc
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataFormatError(f"{os.path.basename(path)} lacks columns {missing}", {"path": path, "missing": missing})
    for column in columns:
        if column in ("sat", "band"):
            if frame[column].isna().any():
                line = int(np.flatnonzero(frame[column].isna())[0]) + FILE_LINE_OFFSET
                raise DataFormatError(f"empty {column} field", {"path": path, "line": line, "column": column})
            continue
        numeric = pd.to_numeric(frame[column], errors="coerce")
        bad = numeric.isna() | ~np.isfinite(numeric.fillna(0.0))
        if bad.any():
            line = int(np.flatnonzero(bad.to_numpy())[0]) + FILE_LINE_OFFSET
            raise DataFormatError(f"non-numeric value in column {column}",
                                  {"path": path, "line": line, "column": column})
        frame[column] = numeric.astype(float)
    for column in optional:
        if column in frame.columns:
            frame[column] = pd.to_numeric(frame[column], errors="coerce").fillna(0.0)
    return frame


def _check_range(frame: pd.DataFrame, mask: np.ndarray, path: str, message: str, column: str) -> None:
    if mask.any():
        line = int(np.flatnonzero(mask)[0]) + FILE_LINE_OFFSET
        raise UnitSanityError(message, {"path": path, "line": line, "column": column,
                                        "value": float(frame[column].iloc[line - FILE_LINE_OFFSET])})


def load_observations(path: str) -> List[ObservationEpoch]:
    frame = _read_csv(path, OBSERVATION_COLUMNS[:-1], optional=["lli"])
    if "lli" not in frame.columns:
        frame["lli"] = 0.0
    el = frame["el_deg"].to_numpy()
    _check_range(frame, (el <= 0.0) | (el > 90.0), path, "elevation outside (0, 90] degrees", "el_deg")
    _check_range(frame, frame["P"].to_numpy() <= 0.0, path, "pseudo-range must be positive", "P")

    epochs: Dict[float, List[GnssRawMeasurement]] = {}
    for i, row in enumerate(frame.itertuples(index=False)):
        try:
            lam = wavelength(row.sat, row.band)
        except ValueError as exc:
            raise DataFormatError(str(exc), {"path": path, "line": i + FILE_LINE_OFFSET}) from exc
        m = GnssRawMeasurement(
            t=float(row.t), sat=row.sat, band=row.band, wavelength=lam,
            pseudorange=float(row.P), carrier=float(row.L_cycles) * lam, doppler=float(row.D),
            sat_pos=np.array([row.sat_x, row.sat_y, row.sat_z]),
            sat_vel=np.array([row.sat_vx, row.sat_vy, row.sat_vz]),
            sat_clock=float(row.sat_clk), sat_clock_drift=float(row.sat_clk_drift),
            elevation=float(np.radians(row.el_deg)), azimuth=float(np.radians(row.az_deg)),
            lli=bool(row.lli),
        )
        epochs.setdefault(round(m.t, 6), []).append(m)
    times = sorted(epochs)
    return [ObservationEpoch(t=epochs[t][0].t, measurements=tuple(epochs[t])) for t in times]


def _monotonic(frame: pd.DataFrame, path: str) -> None:
    t = frame["t"].to_numpy()
    bad = np.flatnonzero(np.diff(t) <= 0.0)
    if bad.size:
        raise DataFormatError("timestamps must be strictly increasing",
                              {"path": path, "line": int(bad[0]) + 1 + FILE_LINE_OFFSET})


def load_imu(path: str) -> ImuSeries:
    frame = _read_csv(path, IMU_COLUMNS)
    _monotonic(frame, path)
    gyro = frame[["gx", "gy", "gz"]].to_numpy()
    accel = frame[["ax", "ay", "az"]].to_numpy()
    _check_range(frame, np.any(np.abs(gyro) > MAX_GYRO, axis=1), path, "gyro rate implausible for rad/s", "gx")
    _check_range(frame, np.any(np.abs(accel) > MAX_ACCEL, axis=1), path, "specific force implausible for m/s^2", "ax")
    return ImuSeries(frame["t"].to_numpy(), accel, gyro)


def load_odometer(path: str) -> OdoSeries:
    frame = _read_csv(path, ODO_COLUMNS)
    _monotonic(frame, path)
    _check_range(frame, np.abs(frame["v"].to_numpy()) > MAX_SPEED, path, "odometer speed implausible for m/s", "v")
    _check_range(frame, np.abs(frame["omega"].to_numpy()) > MAX_GYRO, path,
                 "odometer bearing rate implausible for rad/s", "omega")
    return OdoSeries(frame["t"].to_numpy(), frame["v"].to_numpy(), frame["omega"].to_numpy())


def load_scenario(path: str) -> ScenarioInfo:
    if not os.path.exists(path):
        raise DataFormatError("missing file scenario.json", {"path": path})
    try:
        with open(path, encoding="utf-8") as fh:
            return ScenarioInfo.model_validate(json.load(fh))
    except json.JSONDecodeError as exc:
        raise DataFormatError("scenario.json is not valid JSON", {"path": path, "line": exc.lineno}) from exc
    except ValidationError as exc:
        raise DataFormatError("scenario.json failed validation", {"path": path, "errors": exc.errors()}) from exc


def load_dataset(directory: str) -> CalibrationDataset:
    truth_path = os.path.join(directory, "truth.csv")
    dataset = CalibrationDataset(
        rover=load_observations(os.path.join(directory, "rover.csv")),
        base=load_observations(os.path.join(directory, "base.csv")),
        imu=load_imu(os.path.join(directory, "imu.csv")),
        odo=load_odometer(os.path.join(directory, "odo.csv")),
        scenario=load_scenario(os.path.join(directory, "scenario.json")),
        truth=pd.read_csv(truth_path) if os.path.exists(truth_path) else None,
    )
    logger.info("dataset_loaded", directory=directory, epochs=len(dataset.rover),
                imu_samples=len(dataset.imu), odo_samples=len(dataset.odo))
    return dataset


# ──────────────────────────────────────────────
# Writing
# ──────────────────────────────────────────────
def observations_frame(epochs: Sequence[ObservationEpoch]) -> pd.DataFrame:
    rows = []
    for epoch in epochs:
        for m in epoch.measurements:
            rows.append({
                "t": m.t, "sat": m.sat, "band": m.band, "P": m.pseudorange, "L_cycles": m.carrier / m.wavelength,
                "D": m.doppler,
                "sat_x": m.sat_pos[0], "sat_y": m.sat_pos[1], "sat_z": m.sat_pos[2],
                "sat_vx": m.sat_vel[0], "sat_vy": m.sat_vel[1], "sat_vz": m.sat_vel[2],
                "sat_clk": m.sat_clock, "sat_clk_drift": m.sat_clock_drift,
                "el_deg": float(np.degrees(m.elevation)), "az_deg": float(np.degrees(m.azimuth)),
                "lli": int(m.lli),
            })
    return pd.DataFrame(rows, columns=OBSERVATION_COLUMNS)


def _write_json(path: str, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def save_dataset(dataset: CalibrationDataset, directory: str) -> List[str]:
    os.makedirs(directory, exist_ok=True)
    observations_frame(dataset.rover).to_csv(os.path.join(directory, "rover.csv"), index=False)
    observations_frame(dataset.base).to_csv(os.path.join(directory, "base.csv"), index=False)
    imu = dataset.imu
    pd.DataFrame({"t": imu.t, "ax": imu.accel[:, 0], "ay": imu.accel[:, 1], "az": imu.accel[:, 2],
                  "gx": imu.gyro[:, 0], "gy": imu.gyro[:, 1], "gz": imu.gyro[:, 2]}
                 ).to_csv(os.path.join(directory, "imu.csv"), index=False)
    odo = dataset.odo
    pd.DataFrame({"t": odo.t, "v": odo.v, "omega": odo.omega}).to_csv(os.path.join(directory, "odo.csv"), index=False)
    written = ["rover.csv", "base.csv", "imu.csv", "odo.csv"]
    if dataset.truth is not None:
        dataset.truth.to_csv(os.path.join(directory, "truth.csv"), index=False)
        written.append("truth.csv")
    _write_json(os.path.join(directory, "scenario.json"), dataset.scenario.model_dump(mode="json"))
    written.append("scenario.json")
    logger.info("dataset_saved", directory=directory, files=written)
    return written


def write_run(run: CalibrationRun, directory: str, manifest: Optional[dict] = None) -> List[str]:
    os.makedirs(directory, exist_ok=True)
    frames = {"calibration.csv": run.calibration, "trajectory.csv": run.trajectory, "fixes.csv": run.fixes,
              "outliers.csv": run.outliers, "windows.csv": run.windows}
    for name, frame in frames.items():
        frame.to_csv(os.path.join(directory, name), index=False)
    written = list(frames)
    if manifest is not None:
        write_manifest(directory, manifest)
        written.append("manifest.json")
    return written


def write_manifest(directory: str, manifest: dict) -> str:
    """Echo of everything needed to re-run a command bit-identically."""
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, "manifest.json")
    _write_json(path, manifest)
    return path


def write_json(path: str, payload) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    _write_json(path, payload)
    return path


def read_table(path: str, required: Sequence[str] = ("t",)) -> pd.DataFrame:
    """Reads a run CSV (calibration, trajectory) and checks its key columns."""
    if not os.path.exists(path):
        raise DataFormatError(f"missing file {os.path.basename(path)}", {"path": path})
    frame = pd.read_csv(path)
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DataFormatError(f"{os.path.basename(path)} lacks columns {missing}", {"path": path, "missing": missing})
    return frame
