import json
import math
import os
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from calib_config import CalibSettings, SimulationSettings
from fgo.inputs import TruthCalibration
from gnss.constants import wavelength
from gnss.models import GnssRawMeasurement, ObservationEpoch
from harness.dataset_io import (
    load_dataset, load_imu, load_observations, load_odometer, load_scenario, observations_frame, read_table,
    save_dataset,
)
from harness.dead_reckoning import dead_reckon, evaluate_outage, select_calibration, truth_nav
from harness.errors import DataFormatError, ManifestError, UnitSanityError
from harness.manifest import RunManifest, load_manifest
from harness.metrics import (
    PARAMETERS, DrMetrics, calibration_errors, convergence_epoch, error_metrics, parameter_error, row_at,
)
from harness.montecarlo import divergence_flags, run_montecarlo, std_error_correlation, summarize
from simulator.scenarios import simulate

SHORT = CalibSettings(simulation=SimulationSettings(duration=60.0, n_satellites=8))
TRUTH = TruthCalibration(translation=(0.2, -0.3, 0.1), rpy_deg=(2.0, -1.0, 3.0), s_v=0.01, s_w=-0.02)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    return str(path)


@pytest.fixture(scope="module")
def noiseless():
    return simulate("default", SHORT, seed=11, noiseless=True)


# ──────────────────────────────────────────────
# Metrics
# ──────────────────────────────────────────────
def test_error_metrics_max_and_rmse():
    truth = pd.DataFrame({"t": [0.0, 1.0, 2.0, 3.0], "x": 0.0, "y": 0.0, "z": 0.0})
    estimate = pd.DataFrame({"t": [0.0, 1.0, 2.0, 3.0], "x": [0.0, 3.0, 0.0, 0.0],
                             "y": [0.0, 4.0, 0.0, 0.0], "z": [0.0, 0.0, -2.0, 0.0]})
    m = error_metrics(estimate, truth)
    assert m.max_horizontal == pytest.approx(5.0)
    assert m.rmse_horizontal == pytest.approx(2.5)
    assert m.max_vertical == pytest.approx(2.0)
    assert m.rmse_vertical == pytest.approx(1.0)
    assert m.samples == 4


def test_linear_drift_rmse():
    t = np.linspace(0.0, 10.0, 100001)
    truth = pd.DataFrame({"t": t, "x": 0.0, "y": 0.0, "z": 0.0})
    estimate = pd.DataFrame({"t": t, "x": t, "y": 0.0, "z": 0.0})
    m = error_metrics(estimate, truth)
    assert m.max_horizontal == pytest.approx(10.0)
    assert m.rmse_horizontal == pytest.approx(10.0 / math.sqrt(3.0), rel=1e-4)


def test_truth_is_interpolated_and_gaps_rejected():
    truth = pd.DataFrame({"t": [0.0, 1.0], "x": [0.0, 2.0], "y": 0.0, "z": 0.0})
    m = error_metrics(pd.DataFrame({"t": [0.5], "x": [1.0], "y": [0.0], "z": [0.0]}), truth)
    assert m.max_horizontal == pytest.approx(0.0)
    with pytest.raises(DataFormatError, match="misaligned"):
        error_metrics(pd.DataFrame({"t": [5.0], "x": [0.0], "y": [0.0], "z": [0.0]}), truth)
    with pytest.raises(DataFormatError):
        error_metrics(pd.DataFrame({"t": [], "x": [], "y": [], "z": []}), truth)


def test_dr_metrics_rejects_rmse_above_max():
    with pytest.raises(ValidationError):
        DrMetrics(max_horizontal=1.0, rmse_horizontal=2.0)


def test_convergence_epoch():
    t = np.arange(5.0)
    assert convergence_epoch(t, np.array([1.0, 0.05, 0.2, 0.05, 0.01]), 0.1) == 3.0
    assert convergence_epoch(t, np.array([0.0, 0.0, 0.0, 0.0, 0.5]), 0.1) is None
    assert convergence_epoch(t, np.zeros(5), 0.1) == 0.0


def test_angle_errors_wrap():
    assert float(parameter_error("yaw", 179.0, -179.0)) == pytest.approx(-2.0)
    assert float(parameter_error("roll", -170.0, 175.0)) == pytest.approx(15.0)
    assert float(parameter_error("s_v", 0.3, 0.1)) == pytest.approx(0.2)


def test_calibration_errors_against_truth():
    t = np.arange(0.0, 10.0)
    calibration = pd.DataFrame({"t": t})
    truth = {"px": 0.2, "py": -0.3, "pz": 0.1, "roll": 2.0, "pitch": -1.0, "yaw": 3.0, "s_v": 0.01, "s_w": -0.02}
    for name in PARAMETERS:
        calibration[name] = truth[name]
    calibration.loc[:3, "px"] = 1.0
    calibration["yaw"] = 3.0 + np.where(t < 9, 10.0, 1.0)
    errors = calibration_errors(calibration, TRUTH)
    assert errors["px"].error == pytest.approx(0.0)
    assert errors["px"].converged_at == 4.0
    assert errors["yaw"].error == pytest.approx(1.0)
    assert errors["yaw"].converged_at == 9.0
    assert errors["s_w"].converged_at == 0.0
    with pytest.raises(DataFormatError):
        calibration_errors(calibration.iloc[0:0], TRUTH)
    assert row_at(calibration, 4.4)["t"] == 4.0


# ──────────────────────────────────────────────
# Loaders
# ──────────────────────────────────────────────
IMU_HEADER = ["t", "ax", "ay", "az", "gx", "gy", "gz"]


def test_imu_loader_reports_line_numbers(tmp_path):
    path = write_csv(tmp_path / "imu.csv", IMU_HEADER, [[0.0, 0, 0, 9.8, 0, 0, 0], [0.01, 0, 0, 9.8, 0, 0, 0],
                                                        [0.01, 0, 0, 9.8, 0, 0, 0]])
    with pytest.raises(DataFormatError) as exc:
        load_imu(path)
    assert exc.value.context["line"] == 4
    assert exc.value.exit_code == 2

    path = write_csv(tmp_path / "imu.csv", IMU_HEADER, [[0.0, 0, 0, 9.8, 0, 0, 0], [0.01, 0, 0, 9.8, "abc", 0, 0]])
    with pytest.raises(DataFormatError) as exc:
        load_imu(path)
    assert exc.value.context == {"path": path, "line": 3, "column": "gx"}


def test_imu_loader_flags_degrees(tmp_path):
    path = write_csv(tmp_path / "imu.csv", IMU_HEADER, [[0.0, 0, 0, 9.8, 0, 0, 0], [0.01, 0, 0, 9.8, 0, 0, 0],
                                                        [0.02, 0, 0, 9.8, 45.0, 0, 0]])
    with pytest.raises(UnitSanityError) as exc:
        load_imu(path)
    assert exc.value.code == "unit_sanity"
    assert exc.value.context["line"] == 4
    assert exc.value.context["value"] == 45.0


def test_odometer_loader(tmp_path):
    good = load_odometer(write_csv(tmp_path / "odo.csv", ["t", "v", "omega"], [[0.0, 1.0, 0.0], [0.04, 1.1, 0.1]]))
    assert len(good) == 2
    with pytest.raises(UnitSanityError):
        load_odometer(write_csv(tmp_path / "odo.csv", ["t", "v", "omega"], [[0.0, 100.0, 0.0]]))
    with pytest.raises(DataFormatError, match="lacks columns"):
        load_odometer(write_csv(tmp_path / "odo.csv", ["t", "v"], [[0.0, 1.0]]))
    with pytest.raises(DataFormatError, match="missing file"):
        load_odometer(str(tmp_path / "absent.csv"))


def _measurement(sat="G01", band="1", el=0.8):
    return GnssRawMeasurement(
        t=1.0, sat=sat, band=band, wavelength=wavelength(sat, band), pseudorange=2.1e7, carrier=2.1e7 + 3.0,
        doppler=-120.5, sat_pos=np.array([1.5e7, 1.0e7, 1.8e7]), sat_vel=np.array([100.0, -2000.0, 500.0]),
        sat_clock=1e-5, sat_clock_drift=1e-12, elevation=el, azimuth=1.2, lli=True,
    )


def test_observation_csv_keeps_carrier_in_metres(tmp_path):
    epoch = ObservationEpoch(t=1.0, measurements=(_measurement(), _measurement("G02", "2", 0.4)))
    path = str(tmp_path / "rover.csv")
    observations_frame([epoch]).to_csv(path, index=False)
    loaded = load_observations(path)
    assert len(loaded) == 1
    by_key = loaded[0].by_key()
    m = by_key[("G02", "2")]
    assert m.carrier == pytest.approx(2.1e7 + 3.0, abs=1e-6)
    assert m.elevation == pytest.approx(0.4)
    assert m.lli


def test_observation_loader_errors(tmp_path):
    frame = observations_frame([ObservationEpoch(t=1.0, measurements=(_measurement(),))])
    bad_el = frame.copy()
    bad_el.loc[0, "el_deg"] = 0.0
    bad_el.to_csv(tmp_path / "a.csv", index=False)
    with pytest.raises(UnitSanityError, match="elevation"):
        load_observations(str(tmp_path / "a.csv"))
    bad_band = frame.copy()
    bad_band.loc[0, "band"] = "9"
    bad_band.to_csv(tmp_path / "b.csv", index=False)
    with pytest.raises(DataFormatError) as exc:
        load_observations(str(tmp_path / "b.csv"))
    assert exc.value.context["line"] == 2


def test_scenario_loader_errors(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text("{not json")
    with pytest.raises(DataFormatError, match="not valid JSON"):
        load_scenario(str(path))
    path.write_text(json.dumps({"origin_lat_deg": 95.0, "origin_lon_deg": 0.0, "base_position": [0, 0, 0]}))
    with pytest.raises(DataFormatError, match="failed validation"):
        load_scenario(str(path))


def test_dataset_directory_round_trip(tmp_path, noiseless):
    written = save_dataset(noiseless, str(tmp_path))
    assert "truth.csv" in written and "scenario.json" in written
    loaded = load_dataset(str(tmp_path))
    assert len(loaded.rover) == len(noiseless.rover)
    assert loaded.scenario.truth == noiseless.scenario.truth
    np.testing.assert_allclose(loaded.imu.accel, noiseless.imu.accel)
    first = noiseless.rover[5].measurements[0]
    again = loaded.rover[5].by_key()[first.key]
    assert again.carrier == pytest.approx(first.carrier, abs=1e-6)
    assert again.elevation == pytest.approx(first.elevation)


def test_read_table_checks_columns(tmp_path):
    pd.DataFrame({"t": [0.0], "px": [0.1]}).to_csv(tmp_path / "calibration.csv", index=False)
    assert len(read_table(str(tmp_path / "calibration.csv"), ("t", "px"))) == 1
    with pytest.raises(DataFormatError):
        read_table(str(tmp_path / "calibration.csv"), ("t", "s_v"))


# ──────────────────────────────────────────────
# Dead Reckoning
# ──────────────────────────────────────────────
def test_dead_reckoning_with_truth_calibration(noiseless):
    path, metrics = evaluate_outage(noiseless, "truth", outage_start=25.0, config=SHORT)
    assert path["t"].iloc[0] == 25.0
    assert path["t"].iloc[-1] == pytest.approx(60.0)
    assert metrics.max_horizontal < 0.25
    assert set(path["motion"].iloc[1:]) <= {"nhc", "none", "zupt"}


def test_dead_reckoning_inputs(noiseless):
    with pytest.raises(DataFormatError):
        select_calibration(noiseless, "final", None)
    initial = select_calibration(noiseless, "initial")
    assert initial.s_v == noiseless.scenario.initial_guess.s_v
    init = truth_nav(noiseless, 30.0)
    with pytest.raises(ValueError):
        dead_reckon(noiseless.imu, noiseless.odo, initial, init, outage_start=30.0, t_end=20.0, config=SHORT)


# ──────────────────────────────────────────────
# Manifest
# ──────────────────────────────────────────────
def test_manifest_validation():
    with pytest.raises(ValidationError):
        RunManifest(seeds=[1])
    with pytest.raises(ValidationError):
        RunManifest(seeds=[1, 1])
    with pytest.raises(ValidationError):
        RunManifest(scenario="spatial", seeds=[1, 2])
    manifest = RunManifest(mode="le-online", seeds=[3, 4])
    assert manifest.settings().mode == "le-online"


def test_load_manifest(tmp_path):
    with pytest.raises(ManifestError, match="not found"):
        load_manifest(str(tmp_path / "absent.json"))
    path = tmp_path / "manifest.json"
    path.write_text("[")
    with pytest.raises(ManifestError, match="not valid JSON"):
        load_manifest(str(path))
    path.write_text(json.dumps({"seeds": [1, 2], "config": "calib.json"}))
    with pytest.raises(ManifestError, match="does not exist"):
        load_manifest(str(path))
    (tmp_path / "calib.json").write_text(json.dumps({"mc_workers": 1}))
    manifest = load_manifest(str(path))
    assert manifest.config == os.path.join(str(tmp_path), "calib.json")
    assert manifest.settings().mc_workers == 1


# ──────────────────────────────────────────────
# Monte Carlo
# ──────────────────────────────────────────────
def test_divergence_flags():
    costs = {0: 1.0, 1: 1.2, 2: 50.0, 3: float("nan"), 4: 1.1}
    flags = divergence_flags(costs, {4: "solver blew up"})
    assert flags == {0: False, 1: False, 2: True, 3: True, 4: True}


def _runs(rows):
    return pd.DataFrame(rows, columns=["seed", "checkpoint", "t", "parameter", "estimate", "truth", "error",
                                       "abs_error", "std", "diverged"])


def test_summarize_excludes_diverged_runs():
    runs = _runs([
        (0, "final", 60.0, "px", 0.21, 0.2, 0.01, 0.01, 0.02, False),
        (1, "final", 60.0, "px", 0.17, 0.2, -0.03, 0.03, 0.04, False),
        (2, "final", 60.0, "px", 5.0, 0.2, 4.8, 4.8, 0.02, True),
    ])
    stats = summarize(runs)
    row = stats.iloc[0]
    assert row["runs"] == 2
    assert row["mean_abs_error"] == pytest.approx(0.02)
    assert row["mean_error"] == pytest.approx(-0.01)
    assert row["mean_reported_std"] == pytest.approx(0.03)
    assert summarize(runs[runs["diverged"]]).empty


def test_std_error_correlation():
    rows = [(s, "final", 60.0, "px", 0.0, 0.0, 0.0, 0.01 * (s + 1), 0.02 * (s + 1), False) for s in range(4)]
    rows += [(s, "final", 60.0, "py", 0.0, 0.0, 0.0, 0.01, 0.02, False) for s in range(4)]
    corr = std_error_correlation(_runs(rows))
    assert corr["px"] == pytest.approx(1.0)
    assert corr["py"] is None


def test_run_montecarlo_aggregates_seeds(tmp_path):
    def fake_run_seed(seed, scenario, config_data, faults_data, checkpoints, *rest):
        if seed == 2:
            return {"seed": seed, "rows": [], "final_cost": float("nan"), "restarts": 0, "error": "boom"}
        rows = [{"seed": seed, "checkpoint": "final", "t": 60.0, "parameter": name, "estimate": 0.1 * seed,
                 "truth": 0.0, "error": 0.1 * seed, "abs_error": 0.1 * seed, "std": 0.05, "diverged": False}
                for name in PARAMETERS]
        return {"seed": seed, "rows": rows, "final_cost": 1.0 + seed, "restarts": 0, "error": None}

    manifest = RunManifest(seeds=[0, 1, 2], output_dir=str(tmp_path / "mc"))
    with patch("harness.montecarlo.run_seed", side_effect=fake_run_seed):
        result = run_montecarlo(manifest, SHORT, workers=1)
    summary = result["summary"]
    assert summary["failures"] == 1
    assert summary["diverged_seeds"] == [2]
    assert summary["final"]["px"]["mean_abs_error"] == pytest.approx(0.05)
    for name in ("mc_runs.csv", "mc_stats.csv", "errors.json", "manifest.json"):
        assert os.path.exists(tmp_path / "mc" / name)


# ──────────────────────────────────────────────
# Command Line
# ──────────────────────────────────────────────
def last_error(capsys) -> dict:
    lines = [line for line in capsys.readouterr().err.splitlines() if line.strip()]
    return json.loads(lines[-1])


@patch("main.setup_logging")
def test_main_reports_missing_dataset(_setup, tmp_path, capsys):
    from main import main

    assert main(["calibrate", "--data", str(tmp_path / "absent")]) == 2
    error = last_error(capsys)
    assert error["code"] == "data_format"
    assert "rover.csv" in error["message"]


@patch("main.setup_logging")
def test_main_rejects_bad_config(_setup, tmp_path, capsys):
    from main import main

    assert main(["calibrate", "--data", str(tmp_path), "--config", str(tmp_path / "absent.json")]) == 2
    assert last_error(capsys)["code"] == "config"

    config = tmp_path / "calib.json"
    config.write_text(json.dumps({"window": {"capacity": 1}}))
    assert main(["calibrate", "--data", str(tmp_path), "--config", str(config)]) == 2
    error = last_error(capsys)
    assert error["code"] == "config"
    assert any("WINDOW__CAPACITY" in e for e in error["context"]["errors"])


@patch("main.setup_logging")
def test_main_maps_unexpected_failures(_setup, tmp_path, capsys):
    from main import main

    with patch("harness.dataset_io.load_dataset", side_effect=RuntimeError("boom")):
        assert main(["calibrate", "--data", str(tmp_path)]) == 1
    error = last_error(capsys)
    assert error == {"code": "internal_error", "message": "boom", "context": {"type": "RuntimeError"}}
