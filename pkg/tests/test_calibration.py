import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raptarkit.calibration import (
    DegenerateGeometry, PointPairSet, calibrate, envelope_corners, fit_rigid, format_offset,
    simulate_dial_gauge,
)
from raptarkit.config import parse_config
from raptarkit.se3 import BracketOffset, RigidTransform, offset_transform, rotation_from_euler

offsets = st.builds(
    BracketOffset,
    st.floats(-179, 179), st.floats(-80, 80), st.floats(-179, 179),
    st.floats(-0.1, 0.1), st.floats(-0.1, 0.1), st.floats(-0.1, 0.1),
)


def test_exact_recovery_default():
    b = BracketOffset()
    t, rms = fit_rigid(simulate_dial_gauge(b, 8, 0.0))
    assert t.allclose(offset_transform(b), 1e-9) and rms < 1e-12


@given(offsets, st.integers(3, 60))
@settings(max_examples=100, deadline=None)
def test_round_trip_random_offsets(b, n):
    t, rms = fit_rigid(simulate_dial_gauge(b, n, 0.0, seed=n))
    assert t.allclose(offset_transform(b), 1e-9)
    assert rms < 1e-9


def test_three_corners_enough():
    b = BracketOffset(30, 10, -5, 0.01, -0.02, 0.04)
    pairs = simulate_dial_gauge(b, 3, 0.0)
    t, _ = fit_rigid(pairs)
    assert t.allclose(offset_transform(b), 1e-9)


def test_collinear_rejected():
    p = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
    with pytest.raises(DegenerateGeometry):
        fit_rigid(PointPairSet(p, p))
    with pytest.raises(DegenerateGeometry):
        fit_rigid(PointPairSet(np.zeros((4, 3)), np.zeros((4, 3))))


def test_reflection_not_returned():
    p = envelope_corners()
    mirrored = p * np.array([1, 1, -1])
    t, rms = fit_rigid(PointPairSet(p, mirrored))
    assert np.linalg.det(t.rotation) == pytest.approx(1.0)
    assert rms > 0


def test_envelope_box():
    c = envelope_corners()
    assert np.allclose(c.max(axis=0) - c.min(axis=0), [0.06, 0.04, 0.03])
    pts = simulate_dial_gauge(BracketOffset.zero(), 100, 0.0, seed=1).nominal
    h = np.array([0.03, 0.02, 0.015])
    on_face = np.isclose(np.abs(pts), h).any(axis=1)
    assert on_face.all() and (np.abs(pts) <= h + 1e-15).all()


@given(offsets, st.integers(0, 1000))
@settings(max_examples=50, deadline=None)
def test_rms_invariant_under_common_motion(b, seed):
    pairs = simulate_dial_gauge(b, 20, 1e-3, seed=seed)
    rng = np.random.default_rng(seed)
    g = RigidTransform(rotation_from_euler(*rng.uniform(-170, 170, 3)), rng.uniform(-1, 1, 3))
    moved = PointPairSet(g.apply(pairs.nominal), g.apply(pairs.measured))
    assert fit_rigid(moved)[1] == pytest.approx(fit_rigid(pairs)[1], rel=1e-9)


def mc_rms(sigma, n=50, trials=300, seed=0):
    rng = np.random.default_rng(seed)
    return np.array([fit_rigid(simulate_dial_gauge(BracketOffset(), n, sigma, rng))[1] for _ in range(trials)])


def test_rms_matches_expectation():
    sigma, n = 0.3e-3, 50
    r = mc_rms(sigma, n, 1000)
    # E[rms^2] = sigma^2 (3 - 6/n) for a 6-parameter fit of 3n coordinates
    expect = sigma * math.sqrt(3) * math.sqrt(1 - 6 / (3 * n))
    assert np.mean(r ** 2) == pytest.approx(expect ** 2, rel=0.03)
    assert np.mean(r) == pytest.approx(0.51e-3, abs=0.01e-3)


def test_rms_linear_in_sigma():
    means = [mc_rms(s, trials=200, seed=1).mean() / s for s in (0.1e-3, 0.3e-3, 1.0e-3)]
    assert max(means) / min(means) < 1.03


def test_translation_error_typical():
    rng = np.random.default_rng(4)
    b = BracketOffset()
    errs = []
    for _ in range(200):
        t, _ = fit_rigid(simulate_dial_gauge(b, 100, 1e-3, rng))
        errs.append(np.linalg.norm(t.translation - offset_transform(b).translation))
    assert np.median(errs) < 0.5e-3


def test_offset_file_loads_into_config():
    est, rms = calibrate(BracketOffset(-100, 0, 0, 0.02, 0.02, 0.03), 50, 0.3e-3, seed=2)
    cfg = parse_config(format_offset(est, rms))
    assert cfg.offset == est
    assert abs(cfg.offset.yaw + 100) < 0.2 and abs(cfg.offset.x - 0.02) < 1e-3
