import itertools
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from ambiguity.lambda_search import lambda_search, ld_factorize, reduction
from ambiguity.resolution import (DdPair, FloatAmbiguitySet, ar_factor, ils_fix, partial_fix, sd_to_dd)
from fgo.states import ambiguity_key


def correlated_covariance(rng, n=3, scale=0.3):
    A = rng.normal(size=(n, n)) * scale
    return A @ A.T + 0.01 * np.eye(n)


def brute_force(a, Q, radius=4):
    Qi = np.linalg.inv(Q)
    centre = np.round(a)
    best = []
    for offset in itertools.product(range(-radius, radius + 1), repeat=len(a)):
        z = centre + np.array(offset)
        d = a - z
        best.append((float(d @ Qi @ d), tuple(z)))
    best.sort()
    return best[:2]


def pairs(n, band="1"):
    return [DdPair(band=band, ref_sat="G01", sat=f"G{k + 2:02d}") for k in range(n)]


# ──────────────────────────────────────────────
# LAMBDA building blocks
# ──────────────────────────────────────────────
def test_ld_factorization_reconstructs(rng):
    Q = correlated_covariance(rng, 4)
    L, D = ld_factorize(Q)
    assert_allclose(np.diag(L), np.ones(4))
    assert_allclose(np.triu(L, 1), 0.0)
    assert_allclose(L.T @ np.diag(D) @ L, Q, atol=1e-12)
    with pytest.raises(ValueError):
        ld_factorize(-np.eye(2))


def test_reduction_is_unimodular_and_consistent(rng):
    Q = correlated_covariance(rng, 4)
    L, D = ld_factorize(Q)
    Z = reduction(L, D)
    assert_allclose(Z, np.round(Z))
    assert abs(np.linalg.det(Z)) == pytest.approx(1.0)
    assert_allclose(L.T @ np.diag(D) @ L, Z.T @ Q @ Z, atol=1e-10)


@pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
def test_lambda_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    Q = correlated_covariance(rng, 3)
    a = rng.normal(size=3) * 5.0
    candidates, s, _ = lambda_search(a, Q, m=2)
    expected = brute_force(a, Q)
    assert_allclose(s, [expected[0][0], expected[1][0]], rtol=1e-8)
    assert tuple(candidates[:, 0]) == expected[0][1]
    assert np.all(np.diff(s) >= 0.0)


def test_lambda_rejects_bad_shapes():
    with pytest.raises(ValueError):
        lambda_search(np.zeros(0), np.zeros((0, 0)))
    with pytest.raises(ValueError):
        lambda_search(np.zeros(2), np.eye(3))


# ──────────────────────────────────────────────
# SD → DD
# ──────────────────────────────────────────────
def test_sd_to_dd_differences_against_reference():
    keys = [("G01", "1"), ("G02", "1"), ("G03", "1"), ("E01", "1")]
    amb = sd_to_dd(keys, np.array([10.2, 5.1, 7.9, 3.0]), np.eye(4) * 0.01, {("G", "1"): "G01"})
    assert amb.pairs == [DdPair("1", "G01", "G02"), DdPair("1", "G01", "G03")]
    assert_allclose(amb.values, [5.1 - 10.2, 7.9 - 10.2])
    assert_allclose(amb.covariance, [[0.02, 0.01], [0.01, 0.02]])
    assert amb.bands == ["1"]


def test_sd_to_dd_errors():
    keys = [("G01", "1"), ("G02", "1")]
    with pytest.raises(ValueError):
        sd_to_dd(keys + [("G01", "1")], np.zeros(3), np.eye(3), {("G", "1"): "G01"})
    with pytest.raises(ValueError):
        sd_to_dd(keys, np.zeros(2), np.zeros((2, 2)), {("G", "1"): "G01"})
    assert len(sd_to_dd(keys, np.zeros(2), np.eye(2), {})) == 0


# ──────────────────────────────────────────────
# Fix decisions
# ──────────────────────────────────────────────
def test_ils_fix_accepts_near_integer_solution():
    truth = np.array([3.0, -7.0, 12.0])
    Q = np.array([[0.004, 0.002, 0.001], [0.002, 0.005, 0.002], [0.001, 0.002, 0.006]])
    fix = ils_fix(FloatAmbiguitySet(truth + [0.03, -0.02, 0.04], Q, pairs(3)), ratio_threshold=3.0)
    assert fix.accepted and fix.reason == ""
    assert_allclose(fix.best, truth)
    assert fix.ratio >= 3.0
    assert fix.integers()[DdPair("1", "G01", "G02")] == 3


def test_ils_fix_rejects_ambiguous_solution():
    fix = ils_fix(FloatAmbiguitySet(np.array([0.5, 0.5]), np.eye(2) * 0.05, pairs(2)), ratio_threshold=3.0)
    assert not fix.accepted
    assert fix.reason == "ratio"
    assert fix.ratio == pytest.approx(1.0)


def test_ils_fix_guards():
    empty = FloatAmbiguitySet(np.zeros(0), np.zeros((0, 0)), [])
    assert ils_fix(empty).reason == "empty"
    bad = FloatAmbiguitySet(np.zeros(2), np.diag([1.0, 1e-14]), pairs(2))
    assert ils_fix(bad, condition_limit=1e12).reason == "ill_conditioned"


def test_partial_fix_keeps_high_satellites():
    truth = np.array([3.0, -7.0, 12.0])
    amb = FloatAmbiguitySet(truth + [0.3, 0.01, -0.02], np.diag([0.5, 0.003, 0.003]), pairs(3))
    elevations = {"G01": math.radians(70), "G02": math.radians(15), "G03": math.radians(45),
                  "G04": math.radians(40)}
    fix = partial_fix(amb, elevations, min_elevation_deg=30.0)
    assert fix.dimension == 2
    assert [p.sat for p in fix.ambiguities.pairs] == ["G03", "G04"]
    assert fix.accepted
    none = partial_fix(amb, {"G01": math.radians(10)}, min_elevation_deg=30.0)
    assert not none.accepted and none.reason == "no_high_satellites"


def test_ar_factor_builds_pins_and_drops_missing():
    truth = np.array([3.0, -7.0])
    fix = ils_fix(FloatAmbiguitySet(truth + 0.01, np.eye(2) * 0.002, pairs(2)))
    keys = {("G01", "1"): ambiguity_key("G01", "1", 0), ("G02", "1"): ambiguity_key("G02", "1", 0)}
    factors = ar_factor(fix, keys, variance=1e-4)
    assert len(factors) == 1
    f = factors[0]
    values = {keys[("G01", "1")]: np.array([10.0]), keys[("G02", "1")]: np.array([13.5])}
    r, blocks = f.linearize(values)
    assert r[0] == pytest.approx((13.5 - 10.0 - 3.0) / 0.01)
    assert blocks[0][0, 0] == pytest.approx(-100.0)

    rejected = ils_fix(FloatAmbiguitySet(np.array([0.5, 0.5]), np.eye(2) * 0.05, pairs(2)))
    with pytest.raises(ValueError):
        ar_factor(rejected, keys)
