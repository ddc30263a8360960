import math

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from calib_config import PriorSettings, SimulationSettings
from geomath.rotation import euler_to_rot, skew
from observability.analysis import (EXTRINSIC_AXES, ObservabilityReport, VirtualBodyRates, analyze,
                                    empirical_crosscheck, obs_block, prior_stds, rates_from_truth,
                                    stack_and_rank)
from preintegration.models import MountExtrinsics
from simulator.scenarios import default_trajectory, spatial_rates, straight_trajectory
from simulator.trajectory import generate_trajectory

MOUNT = MountExtrinsics.from_rpy([0.2, -0.3, 0.1], *np.radians([2.0, -1.0, 3.0]))


def planar_rates(segments, mount=MOUNT, step=0.1):
    """Body-frame rates for m-frame (speed, yaw rate, duration) segments."""
    rates, t = [], 0.0
    for speed, yaw_rate, duration in segments:
        for _ in range(int(round(duration / step))):
            omega_b = mount.rotation @ np.array([0.0, 0.0, yaw_rate])
            v_b = mount.rotation @ np.array([0.0, speed, 0.0]) - skew(omega_b) @ mount.translation
            rates.append(VirtualBodyRates(t=t, velocity=v_b, angular_rate=omega_b))
            t += step
    return rates


def run(rates, mount=MOUNT):
    return analyze(rates, mount.rotation.T, mount.translation)


# ──────────────────────────────────────────────
# Rank analysis
# ──────────────────────────────────────────────
def test_planar_motion_leaves_vertical_translation_free():
    report = run(planar_rates([(1.0, 0.0, 5.0), (0.25, 0.1, 10.0)]))
    assert report.rank == 5
    assert report.null_basis.shape == (6, 1)
    assert abs(report.null_basis[2, 0]) == pytest.approx(1.0, abs=1e-6)
    assert report.identifiable == {axis: axis != "pz" for axis in EXTRINSIC_AXES}


def test_constant_circle_alone_is_rank_four():
    report = run(planar_rates([(0.25, 0.1, 10.0)]))
    assert report.rank == 4
    assert not report.identifiable["pz"]
    assert not report.identifiable["py"]
    assert not report.identifiable["yaw"]
    assert report.identifiable["px"]


def test_straight_driving_only_sees_roll_and_yaw():
    report = run(planar_rates([(1.5, 0.0, 10.0)]))
    assert report.rank == 2
    assert [a for a, ok in report.identifiable.items() if ok] == ["roll", "yaw"]


def test_spatial_rotation_is_full_rank():
    report = run(spatial_rates())
    assert report.rank == 6
    assert report.full_rank
    assert all(report.identifiable.values())
    payload = report.to_dict()
    assert payload["rank"] == 6 and payload["null_basis"] == []


def test_translation_frame_switch_keeps_rank():
    rates = planar_rates([(1.0, 0.0, 5.0), (0.25, 0.1, 10.0)])
    body = analyze(rates, MOUNT.rotation.T, MOUNT.translation, vehicle_frame=False)
    assert body.rank == 5
    # the free direction is the m-frame up axis seen from the body
    assert_allclose(np.abs(body.null_basis[0:3, 0]), np.abs(MOUNT.rotation @ [0.0, 0.0, 1.0]), atol=1e-6)


def test_obs_block_validates_rotation():
    rates = VirtualBodyRates(t=0.0, velocity=np.ones(3), angular_rate=np.zeros(3))
    with pytest.raises(ValueError):
        obs_block(rates, 2.0 * np.eye(3), np.zeros(3))
    with pytest.raises(ValueError):
        VirtualBodyRates(t=0.0, velocity=np.array([np.nan, 0.0, 0.0]), angular_rate=np.zeros(3))


# ──────────────────────────────────────────────
# Trajectories
# ──────────────────────────────────────────────
def truth_frame(spec, start, stop):
    motion = generate_trajectory(spec).body_motion(MOUNT)
    return motion.frame(np.arange(int(start * 10), int(stop * 10) + 1) / 10.0)


def test_default_trajectory_is_rank_five():
    sim = SimulationSettings(duration=120.0)
    rates = rates_from_truth(truth_frame(default_trajectory(sim), 45.0, 120.0))
    report = run(rates)
    assert report.rank == 5
    assert abs(report.null_basis[2, 0]) > 0.999


def test_straight_trajectory_is_rank_deficient():
    sim = SimulationSettings(duration=60.0)
    frame = truth_frame(straight_trajectory(sim), 20.0, 60.0)
    report = run(rates_from_truth(frame, t0=25.0))
    assert report.rank == 2
    assert not report.identifiable["pitch"]


def test_rates_from_truth_rotates_velocity_into_body():
    frame = pd.DataFrame({
        "t": [0.0, 1.0, 2.0], "roll": [0.0] * 3, "pitch": [0.0] * 3, "yaw": [90.0] * 3,
        "vx": [0.0] * 3, "vy": [1.0] * 3, "vz": [0.0] * 3,
        "wx": [0.0] * 3, "wy": [0.0] * 3, "wz": [0.1] * 3,
    })
    rates = rates_from_truth(frame, t0=0.5, t1=1.5)
    assert [r.t for r in rates] == [1.0]
    assert_allclose(rates[0].velocity, [1.0, 0.0, 0.0], atol=1e-12)
    assert_allclose(rates[0].angular_rate, [0.0, 0.0, 0.1])


# ──────────────────────────────────────────────
# Empirical cross-check
# ──────────────────────────────────────────────
def test_empirical_crosscheck_labels_parameters():
    t = np.arange(10.0)
    calibration = pd.DataFrame({
        "t": t,
        "std_px": [0.5, 0.45, 0.3, 0.2, 0.1, 0.05, 0.05, 0.05, 0.05, 0.05],
        "std_pz": np.full(10, 0.49),
        "std_yaw": np.full(10, np.nan),
    })
    report = ObservabilityReport(singular_values=np.ones(6), rank=5, null_basis=np.zeros((6, 1)),
                                 identifiable={"px": False, "pz": False}, n_blocks=1)
    verdicts = {v.parameter: v for v in empirical_crosscheck(calibration, {"px": 0.5, "pz": 0.5, "yaw": 5.0,
                                                                            "s_v": 0.05}, report)}
    assert set(verdicts) == {"px", "pz"}
    assert verdicts["px"].observable and verdicts["px"].converged_at == pytest.approx(2.0)
    assert verdicts["px"].mismatch
    assert not verdicts["pz"].observable and not verdicts["pz"].mismatch
    assert verdicts["pz"].converged_at is None


def test_prior_stds_cover_reported_columns():
    stds = prior_stds(PriorSettings())
    assert set(stds) == {"px", "py", "pz", "roll", "pitch", "yaw", "s_v", "s_w"}
    assert stds["yaw"] == PriorSettings().mount_rotation_std_deg
    assert math.isfinite(stds["s_v"])


def test_stack_and_rank_reports_free_axis():
    block = np.diag([1.0, 2.0, 0.0, 1.0, 1.0, 3.0])
    report = stack_and_rank([block, 2.0 * block])
    assert report.rank == 5
    assert report.n_blocks == 2
    assert [axis for axis in EXTRINSIC_AXES if not report.identifiable[axis]] == ["pz"]
    assert abs(report.null_basis[2, 0]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        stack_and_rank([])
