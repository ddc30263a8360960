import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

from geomath.frames import (FrameTag, GeodeticOrigin, convert_position, ecef_enu_rotation, ecef_to_enu,
                            ecef_to_geodetic, elevation_azimuth, enu_to_ecef, geodetic_to_ecef)
from geomath.rotation import (euler_to_rot, quat_boxminus, quat_boxplus, quat_exp, quat_log, quat_mul,
                              quat_normalize, quat_to_rot, right_jacobian, right_jacobian_inv, rot_to_euler,
                              rot_to_quat, rot_z, skew, so3_exp, so3_log, vee)


def random_quat(rng):
    return quat_normalize(rng.normal(size=4))


# ──────────────────────────────────────────────
# Rotations
# ──────────────────────────────────────────────
def test_skew_vee_and_cross_product(rng):
    a, b = rng.normal(size=3), rng.normal(size=3)
    assert_allclose(skew(a) @ b, np.cross(a, b))
    assert_allclose(vee(skew(a)), a)


def test_quat_mul_composes_rotations(rng):
    p, q = random_quat(rng), random_quat(rng)
    assert_allclose(quat_to_rot(quat_mul(p, q)), quat_to_rot(p) @ quat_to_rot(q), atol=1e-12)


def test_rot_to_quat_recovers_quaternion_up_to_sign(rng):
    for _ in range(20):
        q = random_quat(rng)
        back = rot_to_quat(quat_to_rot(q))
        assert back[0] >= 0.0
        assert_allclose(back, q * np.sign(q[0]), atol=1e-12)


def test_quat_normalize_rejects_zero():
    with pytest.raises(ValueError):
        quat_normalize([0.0, 0.0, 0.0, 0.0])


def test_exp_log_consistency(rng):
    phi = rng.normal(size=3) * 0.7
    assert_allclose(quat_log(quat_exp(phi)), phi, atol=1e-12)
    assert_allclose(so3_log(so3_exp(phi)), phi, atol=1e-10)
    assert_allclose(quat_to_rot(quat_exp(phi)), so3_exp(phi), atol=1e-12)


def test_small_angle_branches_agree():
    phi = np.array([1e-10, -2e-10, 3e-10])
    assert_allclose(so3_exp(phi), np.eye(3) + skew(phi), atol=1e-18)
    assert_allclose(quat_log(quat_exp(phi)), phi, atol=1e-18)


def test_boxplus_boxminus_inverse(rng):
    q = random_quat(rng)
    delta = rng.normal(size=3) * 0.3
    assert_allclose(quat_boxminus(quat_boxplus(q, delta), q), delta, atol=1e-12)


def test_right_jacobian_first_order(rng):
    phi = rng.normal(size=3) * 0.5
    delta = rng.normal(size=3) * 1e-6
    lhs = so3_exp(phi + delta)
    rhs = so3_exp(phi) @ so3_exp(right_jacobian(phi) @ delta)
    assert_allclose(lhs, rhs, atol=1e-11)
    assert_allclose(right_jacobian_inv(phi) @ right_jacobian(phi), np.eye(3), atol=1e-12)


def test_euler_round_trip_and_yaw_only():
    roll, pitch, yaw = 0.1, -0.2, 2.5
    assert_allclose(rot_to_euler(euler_to_rot(roll, pitch, yaw)), [roll, pitch, yaw], atol=1e-12)
    assert_allclose(euler_to_rot(0.0, 0.0, 0.7), rot_z(0.7), atol=1e-12)


def test_euler_zyx_order():
    R = euler_to_rot(0.3, 0.2, 0.1)
    expected = rot_z(0.1) @ so3_exp([0.0, 0.2, 0.0]) @ so3_exp([0.3, 0.0, 0.0])
    assert_allclose(R, expected, atol=1e-12)


# ──────────────────────────────────────────────
# Frames
# ──────────────────────────────────────────────
def test_geodetic_round_trip():
    lat, lon, h = math.radians(30.5), math.radians(114.3), 35.0
    xyz = geodetic_to_ecef(lat, lon, h)
    lat2, lon2, h2 = ecef_to_geodetic(xyz)
    assert float(lat2) == pytest.approx(lat, abs=1e-11)
    assert float(lon2) == pytest.approx(lon, abs=1e-11)
    assert float(h2) == pytest.approx(h, abs=1e-4)


def test_equator_prime_meridian_is_semi_major_axis():
    assert_allclose(geodetic_to_ecef(0.0, 0.0, 0.0), [6378137.0, 0.0, 0.0])


def test_enu_round_trip_and_rotation_is_orthonormal():
    origin = GeodeticOrigin.from_degrees(30.5, 114.3, 20.0)
    R = origin.rotation
    assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    enu = np.array([[10.0, -5.0, 2.0], [100.0, 200.0, -3.0]])
    assert_allclose(ecef_to_enu(enu_to_ecef(enu, origin), origin), enu, atol=1e-6)


def test_position_conversions_compose():
    origin = GeodeticOrigin.from_degrees(30.5, 114.3, 20.0)
    p_w = np.array([120.0, -40.0, 3.0])
    p_e = convert_position(p_w, FrameTag.WORLD, FrameTag.ECEF, origin)
    assert_allclose(p_e, enu_to_ecef(p_w, origin), atol=1e-9)
    assert_allclose(convert_position(p_w, FrameTag.WORLD, FrameTag.NAV, origin), p_w)
    via_nav = convert_position(convert_position(p_e, FrameTag.ECEF, FrameTag.NAV, origin),
                               FrameTag.NAV, FrameTag.WORLD, origin)
    assert_allclose(via_nav, convert_position(p_e, FrameTag.ECEF, FrameTag.WORLD, origin), atol=1e-9)
    assert_allclose(via_nav, p_w, atol=1e-6)
    with pytest.raises(ValueError):
        convert_position(p_w, FrameTag.BODY, FrameTag.WORLD, origin)
    with pytest.raises(ValueError):
        convert_position(p_w, FrameTag.WORLD, FrameTag.MOUNT, origin)


def test_up_axis_increases_height():
    origin = GeodeticOrigin.from_degrees(45.0, 10.0, 0.0)
    _, _, h = ecef_to_geodetic(enu_to_ecef([0.0, 0.0, 100.0], origin))
    assert float(h) == pytest.approx(100.0, abs=1e-4)


def test_elevation_azimuth_zenith_and_north():
    origin = GeodeticOrigin.from_degrees(30.0, 114.0, 0.0)
    rcv = origin.ecef
    el, _ = elevation_azimuth(enu_to_ecef([0.0, 0.0, 2.0e7], origin), rcv)
    assert el == pytest.approx(math.pi / 2, abs=1e-9)
    el, az = elevation_azimuth(enu_to_ecef([0.0, 1.0e7, 1.0e7], origin), rcv)
    assert el == pytest.approx(math.pi / 4, abs=1e-6)
    assert az == pytest.approx(0.0, abs=1e-6)
    _, az = elevation_azimuth(enu_to_ecef([1.0e7, 0.0, 1.0e7], origin), rcv)
    assert az == pytest.approx(math.pi / 2, abs=1e-6)


def test_origin_latitude_is_validated():
    with pytest.raises(ValidationError):
        GeodeticOrigin(lat=2.0, lon=0.0)


def test_ecef_enu_rotation_axes():
    origin = GeodeticOrigin.from_degrees(0.0, 0.0)
    R = ecef_enu_rotation(origin)
    assert_allclose(R[:, 0], [0.0, 1.0, 0.0], atol=1e-12)   # east
    assert_allclose(R[:, 1], [0.0, 0.0, 1.0], atol=1e-12)   # north
    assert_allclose(R[:, 2], [1.0, 0.0, 0.0], atol=1e-12)   # up
    tilted = ecef_enu_rotation(GeodeticOrigin.from_degrees(22.3, 114.18))
    assert_allclose(tilted.T @ tilted, np.eye(3), atol=1e-12)
    assert np.linalg.det(tilted) == pytest.approx(1.0)
