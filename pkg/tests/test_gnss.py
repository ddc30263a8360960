import math
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

from fgo.states import NavState
from geomath.frames import GeodeticOrigin, ecef_enu_rotation, elevation_azimuth, enu_to_ecef
from geomath.rotation import rot_to_quat, rot_z
from gnss.constants import SPEED_OF_LIGHT, wavelength
from gnss.double_difference import (dd_covariance, elevation_variance, form_double_differences,
                                    group_double_differences, predicted_range_difference)
from gnss.geometry import antenna_position_velocity, dd_code_position, doppler_predicted
from gnss.models import GnssRawMeasurement, LeverArm, ObservationEpoch, OutlierReport
from gnss.outliers import DopplerScreen, excluded_keys, screen_outliers_stage1, screen_outliers_stage2

ORIGIN = GeodeticOrigin.from_degrees(30.53, 114.36, 25.0)
SKY = [  # (sat, elevation deg, azimuth deg)
    ("G01", 80.0, 30.0),
    ("G02", 45.0, 100.0),
    ("G03", 35.0, 200.0),
    ("G04", 25.0, 290.0),
    ("G05", 60.0, 250.0),
    ("E01", 70.0, 150.0),
    ("E02", 30.0, 340.0),
]


def sat_position(el_deg, az_deg, distance=2.2e7):
    el, az = math.radians(el_deg), math.radians(az_deg)
    los = np.array([math.cos(el) * math.sin(az), math.cos(el) * math.cos(az), math.sin(el)])
    return enu_to_ecef(los * distance, ORIGIN)


def observe(receiver_ecef, t, clock_bias, ambiguities, sky=SKY, band="1", sat_clock=2e-5):
    out = []
    for sat, el_deg, az_deg in sky:
        pos = sat_position(el_deg, az_deg)
        rho = float(np.linalg.norm(pos - receiver_ecef))
        el, az = elevation_azimuth(pos, receiver_ecef)
        lam = wavelength(sat, band)
        clocks = SPEED_OF_LIGHT * (clock_bias - sat_clock)
        out.append(GnssRawMeasurement(
            t=t, sat=sat, band=band, wavelength=lam,
            pseudorange=rho + clocks, carrier=rho + clocks + lam * ambiguities[sat],
            doppler=0.0, sat_pos=pos, sat_vel=np.zeros(3), sat_clock=sat_clock, sat_clock_drift=0.0,
            elevation=el, azimuth=az,
        ))
    return out


@pytest.fixture
def scene():
    base = ORIGIN.ecef
    rover = enu_to_ecef([35.0, -12.0, 1.5], ORIGIN)
    n_rover = {sat: 1000 + 7 * k for k, (sat, _, _) in enumerate(SKY)}
    n_base = {sat: -300 + 3 * k for k, (sat, _, _) in enumerate(SKY)}
    rover_obs = observe(rover, 0.0, 1e-3, n_rover)
    base_obs = observe(base, 0.0, -4e-4, n_base)
    return rover, base, rover_obs, base_obs, n_rover, n_base


# ──────────────────────────────────────────────
# Constants and models
# ──────────────────────────────────────────────
def test_wavelengths():
    assert wavelength("G07", "1") == pytest.approx(0.19029, abs=1e-5)
    assert wavelength("G07", "2") == pytest.approx(0.24421, abs=1e-5)
    with pytest.raises(ValueError):
        wavelength("R01", "1")


def test_raw_measurement_validates_elevation_and_wavelength():
    kwargs = dict(t=0.0, sat="G01", band="1", wavelength=0.19, pseudorange=2e7, carrier=2e7, doppler=0.0,
                  sat_pos=np.zeros(3), sat_vel=np.zeros(3), sat_clock=0.0, sat_clock_drift=0.0)
    with pytest.raises(ValueError):
        GnssRawMeasurement(elevation=0.0, **kwargs)
    with pytest.raises(ValueError):
        GnssRawMeasurement(elevation=0.5, **{**kwargs, "wavelength": 0.0})
    m = GnssRawMeasurement(elevation=0.5, **{**kwargs, "doppler": 10.0})
    assert m.range_rate == pytest.approx(1.9)
    assert m.key == ("G01", "1")


def test_lever_arm_length_limit():
    assert_allclose(LeverArm(offset=(0.1, 0.2, 1.0)).vector, [0.1, 0.2, 1.0])
    with pytest.raises(ValidationError):
        LeverArm(offset=(8.0, 8.0, 0.0))


def test_outlier_report_consistency():
    with pytest.raises(ValidationError):
        OutlierReport(t=0.0, sat="G01", band="1", stage=1, statistic=2.0, threshold=4.0, rejected=True)
    ok = OutlierReport(t=0.0, sat="G01", band="1", stage=1, statistic=5.0, threshold=4.0, rejected=True)
    assert excluded_keys([ok]) == {("G01", "1")}


def test_elevation_variance():
    assert elevation_variance(math.pi / 2, 0.3) == pytest.approx(2 * 0.09)
    assert elevation_variance(math.radians(30.0), 0.3) == pytest.approx(0.09 * 3.0)
    with pytest.raises(ValueError):
        elevation_variance(0.0, 0.3)


# ──────────────────────────────────────────────
# Double differences
# ──────────────────────────────────────────────
def test_double_differences_cancel_clocks(scene):
    rover, base, rover_obs, base_obs, n_rover, n_base = scene
    dds = form_double_differences(rover_obs, base_obs)
    # one reference per constellation: 4 GPS + 1 Galileo DDs
    assert len(dds) == len(SKY) - 2
    for dd in dds:
        geometric = predicted_range_difference(dd, rover, base)
        assert dd.pseudorange == pytest.approx(geometric, abs=1e-5)
        n_dd = (n_rover[dd.sat] - n_base[dd.sat]) - (n_rover[dd.ref_sat] - n_base[dd.ref_sat])
        assert dd.carrier == pytest.approx(geometric + dd.wavelength * n_dd, abs=1e-5)


def test_reference_is_highest_elevation(scene):
    _, _, rover_obs, base_obs, _, _ = scene
    groups = group_double_differences(form_double_differences(rover_obs, base_obs))
    assert set(groups) == {("G", "1", "G01"), ("E", "1", "E01")}


def test_reference_avoids_excluded_code(scene):
    _, _, rover_obs, base_obs, _, _ = scene
    dds = form_double_differences(rover_obs, base_obs, code_excluded={("G01", "1")})
    gps = [d for d in dds if d.constellation == "G"]
    assert {d.ref_sat for d in gps} == {"G05"}
    g01 = next(d for d in gps if d.sat == "G01")
    assert not g01.code_usable
    assert all(d.code_usable for d in gps if d.sat != "G01")


def test_single_satellite_group_is_skipped(scene):
    _, _, rover_obs, base_obs, _, _ = scene
    rover_obs = [m for m in rover_obs if m.sat != "E02"]
    dds = form_double_differences(rover_obs, base_obs)
    assert all(d.constellation == "G" for d in dds)


def test_dd_covariance_structure(scene):
    _, _, rover_obs, base_obs, _, _ = scene
    gps = [d for d in form_double_differences(rover_obs, base_obs) if d.constellation == "G"]
    for kind, var, ref in (("carrier", "var_carrier", "ref_var_carrier"),
                           ("pseudorange", "var_pseudorange", "ref_var_pseudorange")):
        cov = dd_covariance(gps, kind)
        assert_allclose(np.diag(cov), [getattr(d, var) for d in gps])
        assert cov[0, 1] == pytest.approx(getattr(gps[0], ref))
        assert np.all(np.linalg.eigvalsh(cov) > 0)
    with pytest.raises(ValueError):
        dd_covariance(gps, "doppler")


def test_dd_code_position_recovers_rover(scene):
    rover, base, rover_obs, base_obs, _, _ = scene
    dds = form_double_differences(rover_obs, base_obs)
    x, cov = dd_code_position(dds, base, rover + np.array([40.0, -25.0, 30.0]))
    assert_allclose(x, rover, atol=1e-4)
    assert cov.shape == (3, 3)
    with pytest.raises(ValueError):
        dd_code_position(dds[:2], base, rover)


# ──────────────────────────────────────────────
# Antenna
# ──────────────────────────────────────────────
def test_antenna_position_velocity_applies_lever_arm():
    nav = NavState(t=0.0, position=[1.0, 2.0, 3.0], velocity=[1.0, 0.0, 0.0],
                   attitude=rot_to_quat(rot_z(math.pi / 2)))
    lever = LeverArm(offset=(0.0, 0.3, 0.8))
    omega = np.array([0.0, 0.0, 0.1])

    position, velocity = antenna_position_velocity(nav, lever, omega, np.eye(3))
    assert_allclose(position, [0.7, 2.0, 3.8], atol=1e-12)
    assert_allclose(velocity, [1.0, -0.03, 0.0], atol=1e-12)

    R_en = ecef_enu_rotation(ORIGIN)
    position_e, velocity_e = antenna_position_velocity(nav, lever, omega, R_en, origin_ecef=ORIGIN.ecef)
    assert_allclose(position_e, enu_to_ecef(position, ORIGIN), atol=1e-6)
    assert_allclose(velocity_e, R_en @ velocity, atol=1e-12)


# ──────────────────────────────────────────────
# Doppler
# ──────────────────────────────────────────────
def test_doppler_prediction_receding_is_positive():
    sat = np.array([2.0e7, 0.0, 0.0])
    rate = doppler_predicted(sat, np.array([100.0, 50.0, 0.0]), np.zeros(3), np.zeros(3))
    assert rate == pytest.approx(100.0)
    with_clock = doppler_predicted(sat, np.array([100.0, 0.0, 0.0]), np.zeros(3), np.zeros(3),
                                   receiver_clock_drift=1e-9, sat_clock_drift=0.0)
    assert with_clock == pytest.approx(100.0 + SPEED_OF_LIGHT * 1e-9)
    with pytest.raises(ValueError):
        doppler_predicted(sat, np.zeros(3), sat, np.zeros(3))


# ──────────────────────────────────────────────
# Outlier screening
# ──────────────────────────────────────────────
def _doppler_stream(spike_at=None, spike=20.0, n=6):
    lam = wavelength("G01", "1")
    epochs = []
    for k in range(n):
        t = float(k)
        pr = 2.1e7 + 120.0 * t + (spike if k == spike_at else 0.0)
        epochs.append(ObservationEpoch(t=t, measurements=(GnssRawMeasurement(
            t=t, sat="G01", band="1", wavelength=lam, pseudorange=pr, carrier=pr, doppler=120.0 / lam,
            sat_pos=np.zeros(3), sat_vel=np.zeros(3), sat_clock=0.0, sat_clock_drift=0.0,
            elevation=math.pi / 4),)))
    return epochs


def test_doppler_screen_rejects_spike_and_recovers():
    screen = DopplerScreen("rover", sigma0_code=0.3, sigma_doppler=0.05)
    reports = []
    for epoch in _doppler_stream(spike_at=3):
        reports.extend(screen.update(epoch))
    assert [r.t for r in reports] == [1.0, 2.0, 3.0, 4.0, 5.0]
    assert [r.rejected for r in reports] == [False, False, True, False, False]
    assert reports[3].statistic < 1e-3


def test_stage1_clean_stream_has_no_rejections():
    reports = screen_outliers_stage1(_doppler_stream(), sigma0_code=0.3, sigma_doppler=0.05)
    assert reports and not excluded_keys(reports)


def test_stage2_flags_corrupted_dd(scene):
    rover, base, rover_obs, base_obs, _, _ = scene
    dds = form_double_differences(rover_obs, base_obs)
    dds[1] = replace(dds[1], pseudorange=dds[1].pseudorange + 50.0)
    reports, screened = screen_outliers_stage2(dds, rover, base, np.eye(3) * 0.01, k2=3.0)
    assert len(reports) == len(dds)
    rejected = [r for r in reports if r.rejected]
    assert [(r.sat, r.stage) for r in rejected] == [(dds[1].sat, 2)]
    assert not screened[1].code_usable
    assert screened[1].carrier == dds[1].carrier
    assert all(d.code_usable for i, d in enumerate(screened) if i != 1)


def test_stage2_without_prediction_is_skipped(scene):
    _, base, rover_obs, base_obs, _, _ = scene
    dds = form_double_differences(rover_obs, base_obs)
    reports, screened = screen_outliers_stage2(dds, None, base)
    assert reports == [] and screened == dds
