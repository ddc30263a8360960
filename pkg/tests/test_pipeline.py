import dataclasses
import json
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest
from structlog.testing import capture_logs

from ambiguity.resolution import AmbiguityFixFactor
from calib_config import CalibSettings, SimulationSettings
from fgo.pipeline import CALIBRATION_COLUMNS, LEVER_COLUMNS, TRAJECTORY_COLUMNS, CalibrationPipeline, run_calibration
from fgo.solver import SolveStatus
from fgo.states import VariableKind, ambiguity_key
from harness.dead_reckoning import evaluate_outage
from harness.metrics import calibration_errors
from simulator.faults import CycleSlip, FaultSpec
from simulator.scenarios import simulate

SHORT = SimulationSettings(duration=60.0, n_satellites=8, perturb_guess=False)


@pytest.fixture(scope="module")
def noiseless():
    return simulate("default", CalibSettings(simulation=SHORT), seed=5, noiseless=True)


@pytest.fixture(scope="module")
def noiseless_run(noiseless):
    return run_calibration(noiseless, CalibSettings(simulation=SHORT))


def test_run_tables(noiseless, noiseless_run):
    run = noiseless_run
    assert list(run.calibration.columns) == CALIBRATION_COLUMNS
    assert list(run.trajectory.columns) == TRAJECTORY_COLUMNS
    assert len(run.calibration) == len(noiseless.rover)
    assert np.isfinite(run.calibration.to_numpy(dtype=float)).all()
    assert set(run.windows["status"]) <= {s.value for s in SolveStatus}
    assert run.restarts == 0
    assert (run.windows["stage"] == "float").sum() == len(noiseless.rover)


def test_accepted_fixes_match_truth_integers(noiseless, noiseless_run):
    fixes = noiseless_run.fixes
    accepted = fixes[fixes["accepted"].astype(bool)]
    assert len(accepted) > 0
    truth = noiseless.scenario.truth
    for row in accepted.itertuples():
        for name, value in json.loads(row.integers).items():
            pair, band = name.split("/")
            sat, ref = pair.split("-")
            expected = truth.ambiguity_at(sat, band, row.t) - truth.ambiguity_at(ref, band, row.t)
            assert value == expected, f"{name} at t={row.t}"


def test_final_gnss_state_matches_truth_integers(noiseless, noiseless_run):
    state = noiseless_run.final_gnss
    assert state is not None
    assert np.isfinite(state.clock_drift)
    assert set(state.ambiguities) <= {m.key for m in noiseless.rover[-1].measurements}
    fixed = {sd: a.fixed for sd, a in state.ambiguities.items() if a.fixed is not None}
    assert len(fixed) >= 2
    truth = noiseless.scenario.truth
    t = noiseless.rover[-1].t
    for (sat_a, band_a), n_a in fixed.items():
        for (sat_b, band_b), n_b in fixed.items():
            if sat_a[0] == sat_b[0] and band_a == band_b:
                expected = truth.ambiguity_at(sat_a, band_a, t) - truth.ambiguity_at(sat_b, band_b, t)
                assert n_a - n_b == expected


def test_identical_inputs_give_identical_tables(noiseless, noiseless_run):
    again = run_calibration(noiseless, CalibSettings(simulation=SHORT))
    pd.testing.assert_frame_equal(again.calibration, noiseless_run.calibration)
    pd.testing.assert_frame_equal(again.trajectory, noiseless_run.trajectory)


def test_online_lever_mode_adds_lever_columns(noiseless):
    run = run_calibration(noiseless, CalibSettings(simulation=SHORT, mode="le-online"))
    assert list(run.calibration.columns) == CALIBRATION_COLUMNS + LEVER_COLUMNS
    assert run.final_calibration.lever_arm is not None


def test_runs_without_gnss(noiseless):
    run = run_calibration(noiseless, CalibSettings(simulation=SHORT, use_gnss=False))
    assert len(run.calibration) > 50
    assert run.fixes.empty
    assert np.isfinite(run.calibration[["px", "py", "yaw"]].to_numpy()).all()


def test_float_only_mode_records_no_fixes(noiseless):
    run = run_calibration(noiseless, CalibSettings(simulation=SHORT, mode="tc-war"))
    assert run.fixes.empty
    assert set(run.windows["stage"]) == {"float"}


def test_too_short_dataset_is_rejected(noiseless):
    tiny = dataclasses.replace(noiseless, rover=noiseless.rover[:1])
    with pytest.raises(ValueError):
        run_calibration(tiny, CalibSettings(simulation=SHORT))


def test_cycle_slip_restarts_arc_and_retires_the_old_one(noiseless):
    sats = sorted({m.sat for m in noiseless.rover[0].measurements})[:3]
    faults = FaultSpec(cycle_slips=[CycleSlip(t=20.0, sat=sat, cycles=3) for sat in sats])
    slipped = simulate("default", CalibSettings(simulation=SHORT), seed=5, faults=faults, noiseless=True)
    pipeline = CalibrationPipeline(slipped, CalibSettings(simulation=SHORT))

    with capture_logs() as logs, patch.object(CalibrationPipeline, "_drop_fixes_for", autospec=True,
                                              side_effect=CalibrationPipeline._drop_fixes_for) as drop:
        run = pipeline.run()

    restarted = {e["sat"]: e["arc"] for e in logs
                 if e["event"] == "ambiguity_arc_restarted" and e["slip"] and e["band"] == "1"}
    assert set(restarted) == set(sats)
    dropped = {call.args[1] for call in drop.call_args_list}
    assert {(sat, "1") for sat in sats} <= dropped

    window = pipeline.window
    arcs = [k for k in window.values if k[0] == VariableKind.AMBIGUITY]
    for sat, old_arc in restarted.items():
        assert ambiguity_key(sat, "1", old_arc) not in window.values
        assert (sat, "1") in run.final_gnss.ambiguities
    for factor in window.factors:
        if isinstance(factor, AmbiguityFixFactor):
            assert all(key in window.values for key in factor.keys)
    live_pairs = {m.key for m in slipped.rover[-1].measurements}
    assert len(arcs) == len(run.final_gnss.ambiguities) <= len(live_pairs)
    assert len({key[1][:2] for key in arcs}) == len(arcs)

    truth = slipped.scenario.truth
    accepted = run.fixes[run.fixes["accepted"].astype(bool) & (run.fixes["t"] > 20.0)]
    assert len(accepted) > 0
    for row in accepted.itertuples():
        for name, value in json.loads(row.integers).items():
            pair, band = name.split("/")
            sat, ref = pair.split("-")
            expected = truth.ambiguity_at(sat, band, row.t) - truth.ambiguity_at(ref, band, row.t)
            assert value == expected, f"{name} at t={row.t}"

# ──────────────────────────────────────────────
# Acceptance Runs
# ──────────────────────────────────────────────
@pytest.mark.slow
def test_default_scenario_calibrates():
    config = CalibSettings()
    dataset = simulate("default", config, seed=0)
    run = run_calibration(dataset, config)
    errors = calibration_errors(run.calibration, dataset.scenario.truth)
    assert abs(errors["px"].error) < 0.3
    assert abs(errors["py"].error) < 0.3
    assert abs(errors["roll"].error) < 1.0
    assert abs(errors["pitch"].error) < 1.0
    assert abs(errors["yaw"].error) < 10.0

    prior = config.priors.mount_translation_std
    assert (run.calibration["std_pz"] >= 0.8 * prior).all()
    pz0 = dataset.scenario.initial_guess.translation[2]
    assert (abs(run.calibration["pz"] - pz0) <= prior).all()


@pytest.mark.slow
def test_calibration_improves_dead_reckoning():
    config = CalibSettings()
    dataset = simulate("dr_validation", config, seed=1)
    run = run_calibration(dataset, config)
    _, calibrated = evaluate_outage(dataset, "final", 100.0, run.calibration, run.trajectory, config)
    _, initial = evaluate_outage(dataset, "initial", 100.0, run.calibration, run.trajectory, config)
    assert calibrated.max_horizontal <= initial.max_horizontal


@pytest.mark.slow
def test_online_lever_arm_absorbs_lever_fault():
    faults = FaultSpec(lever_arm_error=(0.1, 0.1, 0.1))
    fixed = CalibSettings(mode="le-fixed")
    online = CalibSettings(mode="le-online")
    dataset = simulate("default", fixed, seed=2, faults=faults)
    err_fixed = calibration_errors(run_calibration(dataset, fixed).calibration, dataset.scenario.truth)
    err_online = calibration_errors(run_calibration(dataset, online).calibration, dataset.scenario.truth)
    fixed_xy = abs(err_fixed["px"].error) + abs(err_fixed["py"].error)
    online_xy = abs(err_online["px"].error) + abs(err_online["py"].error)
    assert online_xy <= fixed_xy + 0.02
