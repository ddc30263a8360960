import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from calib_config import MotionGates, SensorNoiseSpec
from fgo.states import NavState
from geomath.frames import GRAVITY
from geomath.rotation import euler_to_rot, rot_to_quat, rot_z, so3_exp, so3_log
from preintegration.alignment import coarse_align
from preintegration.imu import imu_preintegrate
from preintegration.models import ImuSeries, MountExtrinsics, OdometerIntrinsics, OdoSeries
from preintegration.motion import MotionConstraint, detect_motion
from preintegration.odometer import odo_body_rates, odo_preintegrate, odo_project


def imu_series(duration=1.0, rate=100.0, accel=(0.0, 0.0, 0.0), gyro=(0.0, 0.0, 0.0), t0=0.0):
    t = t0 + np.arange(int(round(duration * rate)) + 1) / rate
    return ImuSeries(t, np.tile(np.asarray(accel, dtype=float), (len(t), 1)),
                     np.tile(np.asarray(gyro, dtype=float), (len(t), 1)))


def odo_series(duration=1.0, rate=25.0, v=0.0, omega=0.0, t0=0.0):
    t = t0 + np.arange(int(round(duration * rate)) + 1) / rate
    return OdoSeries(t, np.full(len(t), float(v)), np.full(len(t), float(omega)))


def random_imu(rng, duration=1.0, rate=100.0):
    t = np.arange(int(round(duration * rate)) + 1) / rate
    accel = np.array([0.3, -0.2, 9.8]) + 0.5 * rng.normal(size=(len(t), 3))
    gyro = np.array([0.02, -0.01, 0.2]) + 0.05 * rng.normal(size=(len(t), 3))
    return ImuSeries(t, accel, gyro)


# ──────────────────────────────────────────────
# Series containers
# ──────────────────────────────────────────────
def test_series_require_increasing_time():
    with pytest.raises(ValueError):
        ImuSeries(np.array([0.0, 0.0]), np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        OdoSeries(np.array([0.0, 1.0]), np.zeros(3), np.zeros(2))


def test_between_interpolates_boundaries():
    imu = ImuSeries(np.array([0.0, 1.0, 2.0]),
                    np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [4.0, 0.0, 0.0]]), np.zeros((3, 3)))
    cut = imu.between(0.5, 1.5)
    assert_allclose(cut.t, [0.5, 1.0, 1.5])
    assert_allclose(cut.accel[:, 0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        imu.between(-1.0, 1.0)


def test_odometer_intrinsics_gain_must_stay_positive():
    with pytest.raises(ValueError):
        OdometerIntrinsics(s_v=-1.5)


# ──────────────────────────────────────────────
# IMU preintegration
# ──────────────────────────────────────────────
def test_constant_acceleration_deltas():
    pre = imu_preintegrate(imu_series(accel=(1.0, 0.0, 0.0)), (np.zeros(3), np.zeros(3)))
    assert pre.dt == pytest.approx(1.0)
    assert_allclose(pre.dp, [0.5, 0.0, 0.0], atol=1e-12)
    assert_allclose(pre.dv, [1.0, 0.0, 0.0], atol=1e-12)
    assert_allclose(pre.dR, np.eye(3), atol=1e-12)


def test_constant_rotation_rate():
    pre = imu_preintegrate(imu_series(gyro=(0.0, 0.0, 0.3)), (np.zeros(3), np.zeros(3)))
    assert_allclose(pre.dR, rot_z(0.3), atol=1e-12)


def test_bias_is_subtracted():
    bias = np.array([0.0, 0.0, 0.3])
    pre = imu_preintegrate(imu_series(gyro=bias), (np.zeros(3), bias))
    assert_allclose(pre.dR, np.eye(3), atol=1e-12)


def test_stationary_prediction_holds_state():
    R = euler_to_rot(0.05, -0.03, 1.0)
    f = R.T @ -GRAVITY
    pre = imu_preintegrate(imu_series(accel=f), (np.zeros(3), np.zeros(3)))
    nav = NavState(t=0.0, position=[1.0, 2.0, 3.0], velocity=np.zeros(3), attitude=rot_to_quat(R))
    out = pre.predict(nav)
    assert out.t == pytest.approx(1.0)
    assert_allclose(out.position, [1.0, 2.0, 3.0], atol=1e-9)
    assert_allclose(out.velocity, np.zeros(3), atol=1e-9)
    assert_allclose(out.rotation, R, atol=1e-12)


def test_bias_jacobians_match_reintegration(rng):
    imu = random_imu(rng)
    ba0, bg0 = np.array([0.01, -0.02, 0.03]), np.array([1e-3, -2e-3, 5e-4])
    pre = imu_preintegrate(imu, (ba0, bg0))
    ba1 = ba0 + np.array([2e-3, 1e-3, -2e-3])
    bg1 = bg0 + np.array([-5e-5, 5e-5, 2e-5])
    dp, dv, dR = pre.corrected(ba1, bg1)
    exact = pre.reintegrate(ba1, bg1)
    assert_allclose(dp, exact.dp, atol=1e-6)
    assert_allclose(dv, exact.dv, atol=1e-6)
    assert np.linalg.norm(so3_log(dR.T @ exact.dR)) < 1e-7
    assert not pre.needs_reintegration(ba1, bg1, accel_tol=0.05, gyro_tol=0.005)
    assert pre.needs_reintegration(ba1 + 0.1, bg1, accel_tol=0.05, gyro_tol=0.005)


def test_covariance_is_symmetric_and_grows(rng):
    imu = random_imu(rng, duration=2.0)
    short = imu_preintegrate(imu.between(0.0, 1.0), (np.zeros(3), np.zeros(3)))
    full = imu_preintegrate(imu, (np.zeros(3), np.zeros(3)))
    for pre in (short, full):
        assert pre.covariance.shape == (15, 15)
        assert_allclose(pre.covariance, pre.covariance.T)
        assert np.min(np.linalg.eigvalsh(pre.covariance)) > -1e-15
    assert np.trace(full.covariance[0:9, 0:9]) > np.trace(short.covariance[0:9, 0:9])


def test_preintegration_rejects_short_or_gappy_input():
    with pytest.raises(ValueError):
        imu_preintegrate(imu_series(duration=0.0), (np.zeros(3), np.zeros(3)))
    gappy = ImuSeries(np.array([0.0, 0.01, 0.5]), np.zeros((3, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        imu_preintegrate(gappy, (np.zeros(3), np.zeros(3)), max_dt=0.1)


# ──────────────────────────────────────────────
# Odometer preintegration
# ──────────────────────────────────────────────
def test_straight_odometer_moves_forward():
    pre = odo_preintegrate(odo_series(v=2.0), imu_series(), OdometerIntrinsics(), MountExtrinsics.identity())
    assert_allclose(pre.dp, [0.0, 2.0, 0.0], atol=1e-12)
    assert_allclose(pre.dR, np.eye(3), atol=1e-12)


def test_speed_scale_factor_stretches_distance():
    pre = odo_preintegrate(odo_series(v=2.0), imu_series(), OdometerIntrinsics(s_v=0.1),
                           MountExtrinsics.identity())
    assert pre.dp[1] == pytest.approx(2.2)


def test_mount_rotation_maps_forward_axis():
    mount = MountExtrinsics.from_rpy(np.zeros(3), 0.0, 0.0, math.pi / 2)
    pre = odo_preintegrate(odo_series(v=1.0), imu_series(), OdometerIntrinsics(), mount)
    assert_allclose(pre.dp, mount.rotation @ [0.0, 1.0, 0.0], atol=1e-12)
    assert_allclose(pre.dp, [-1.0, 0.0, 0.0], atol=1e-12)


def test_turning_integrates_heading():
    pre = odo_preintegrate(odo_series(v=1.0, omega=0.2), imu_series(gyro=(0.0, 0.0, 0.2)),
                           OdometerIntrinsics(), MountExtrinsics.identity())
    assert_allclose(pre.dR, rot_z(0.2), atol=1e-12)
    # arc of radius 5 m swept through 0.2 rad
    assert_allclose(pre.dp, [-5.0 * (1 - math.cos(0.2)), 5.0 * math.sin(0.2), 0.0], atol=1e-5)


def test_calibration_jacobian_matches_reintegration():
    odo = odo_series(duration=1.0, v=1.5, omega=0.3)
    gyro = imu_series(duration=1.0, gyro=(0.01, -0.02, 0.3))
    mount = MountExtrinsics.from_rpy([0.2, -0.3, 0.1], 0.03, -0.02, 0.05)
    pre = odo_preintegrate(odo, gyro, OdometerIntrinsics(s_v=0.01, s_w=-0.02), mount)

    translation = mount.translation + np.array([0.01, -0.02, 0.015])
    R_bm = mount.rotation @ so3_exp([0.5e-3, -0.8e-3, 1e-3])
    s_v, s_w = 0.013, -0.018
    dp, dR = pre.corrected(translation, R_bm, s_v, s_w)
    exact = pre.reintegrate(translation, R_bm, s_v, s_w)
    assert_allclose(dp, exact.dp, atol=5e-5)
    assert np.linalg.norm(so3_log(dR.T @ exact.dR)) < 1e-5
    assert not pre.needs_reintegration(translation, R_bm, s_v, s_w, 0.05, math.radians(1.0), 0.01)


def test_odometer_covariance_and_coverage():
    odo = odo_series(v=1.0)
    pre = odo_preintegrate(odo, imu_series(), OdometerIntrinsics(walk_v=1e-3), MountExtrinsics.identity(),
                           noise=SensorNoiseSpec())
    assert pre.covariance.shape == (8, 8)
    assert_allclose(pre.covariance, pre.covariance.T)
    assert pre.covariance[1, 1] > 0.0
    with pytest.raises(ValueError):
        odo_preintegrate(odo_series(duration=2.0), imu_series(duration=1.0), OdometerIntrinsics(),
                         MountExtrinsics.identity())


# ──────────────────────────────────────────────
# Motion detection and alignment
# ──────────────────────────────────────────────
@pytest.mark.parametrize("gyro_deg_s, speed, expected", [
    (0.0, 0.0, MotionConstraint.ZUPT),
    (1.0, 0.01, MotionConstraint.ZUPT),
    (1.0, 2.0, MotionConstraint.NHC),
    (10.0, 2.0, MotionConstraint.NONE),
    (1.0, 0.5, MotionConstraint.NONE),
])
def test_detect_motion(gyro_deg_s, speed, expected):
    imu = imu_series(gyro=(0.0, 0.0, math.radians(gyro_deg_s)))
    assert detect_motion(imu, odo_series(v=speed), MotionGates()) == expected


def test_detect_motion_needs_full_window():
    assert detect_motion(imu_series(duration=0.5), odo_series(duration=0.5)) == MotionConstraint.NONE


def test_detect_motion_removes_gyro_bias():
    bias = np.array([0.0, 0.0, math.radians(1.0)])
    imu = imu_series(gyro=bias)
    assert detect_motion(imu, odo_series(v=2.0), gyro_bias=bias) == MotionConstraint.ZUPT


def test_detect_motion_uses_per_sample_gyro_magnitude():
    imu = imu_series()
    sign = np.where(np.arange(len(imu)) % 2 == 0, 1.0, -1.0)
    gyro = np.outer(sign, [math.radians(1.0), 0.0, 0.0])
    jittery = ImuSeries(imu.t, imu.accel, gyro)
    assert np.degrees(np.linalg.norm(gyro.mean(axis=0))) < MotionGates().zupt_gyro_deg_s
    assert detect_motion(jittery, odo_series(v=2.0)) == MotionConstraint.NHC
    assert detect_motion(jittery, odo_series(v=0.5)) == MotionConstraint.NONE


def test_coarse_align_recovers_roll_and_pitch():
    R = euler_to_rot(0.05, -0.03, 2.0)
    roll, pitch = coarse_align(imu_series(accel=R.T @ -GRAVITY))
    assert roll == pytest.approx(0.05, abs=1e-12)
    assert pitch == pytest.approx(-0.03, abs=1e-12)


def test_odometer_projection_and_body_rates():
    v_m, w_m = odo_project(2.0, 0.1)
    assert_allclose(v_m, [0.0, 2.0, 0.0])
    assert_allclose(w_m, [0.0, 0.0, 0.1])

    mount = MountExtrinsics(rot_z(math.pi / 2), np.array([0.2, -0.3, 0.1]))
    v_b, w_b = odo_body_rates(v_m, w_m, mount, np.array([0.0, 0.0, 0.1]))
    assert_allclose(v_b, [-2.03, -0.02, 0.0], atol=1e-12)
    assert_allclose(w_b, [0.0, 0.0, 0.1], atol=1e-12)
