import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from raptarkit.metrics import (
    SNR_CAP_DB, DegenerateVariance, KeyMismatch, PatternGrid, compare, coverage, read_point_errors,
    repeatability, write_point_errors,
)
from raptarkit.scanlog import ScanLog, ScanSample
from raptarkit.se3 import generate_grid


def grid_of(values, phis=None):
    keys = [((phis[i] if phis else float(i)), 10.0, 0.1) for i in range(len(values))]
    return PatternGrid.from_items(zip(keys, values))


finite = st.floats(-80, 20, allow_nan=False)
vectors = arrays(np.float64, st.integers(3, 40), elements=finite)


def test_identity():
    g = grid_of([-30.0, -35.0, -42.0])
    r = compare(g, g)
    assert r.mae == 0 and r.rmse == 0 and r.r_squared == 1.0 and r.snr == SNR_CAP_DB


def test_two_point_hand_example():
    r = compare(grid_of([0.0, 2.0]), grid_of([1.0, 5.0]))
    assert r.mae == pytest.approx(2.0)
    assert r.rmse == pytest.approx(math.sqrt(5.0))
    assert r.rmse == pytest.approx(2.2360, abs=1e-4)


def test_affine_r_squared():
    ref = np.array([-30.0, -33.0, -41.0, -50.0])
    r = compare(grid_of(2 * ref + 1), grid_of(ref))
    assert r.r_squared == pytest.approx(1.0, abs=1e-12) and r.mae > 0


def test_constant_reference_absent():
    r = compare(grid_of([-30.0, -31.0]), grid_of([-30.0, -30.0]))
    assert r.r_squared is None and r.snr is None and r.notes
    with pytest.raises(DegenerateVariance):
        compare(grid_of([-30.0, -31.0]), grid_of([-30.0, -30.0]), strict=True)


def test_key_mismatch():
    a = grid_of([1.0, 2.0, 3.0])
    b = PatternGrid.from_items([((0.0, 10.0, 0.1), 1.0), ((1.0, 10.0, 0.1), 2.0), ((9.0, 10.0, 0.1), 3.0)])
    with pytest.raises(KeyMismatch):
        compare(a, b)
    with pytest.raises(KeyMismatch):
        repeatability([a, b])


def test_order_independent_alignment():
    a = grid_of([1.0, 2.0, 3.0])
    b = PatternGrid(tuple(reversed(a.keys)), a.values[::-1].copy())
    assert compare(a, b).mae == 0.0


def test_snr_definition():
    ref = np.array([0.0, 2.0, 4.0, 6.0])
    meas = ref + np.array([0.5, -0.5, 0.5, -0.5])
    r = compare(grid_of(meas), grid_of(ref))
    assert r.snr == pytest.approx(10 * math.log10(np.var(ref) / 0.25))


@given(vectors, st.data())
@settings(max_examples=200, deadline=None)
def test_rmse_at_least_mae_and_symmetry(m, data):
    ref = data.draw(arrays(np.float64, len(m), elements=finite))
    a, b = grid_of(m), grid_of(ref)
    r = compare(a, b)
    assert r.rmse >= r.mae - 1e-12 >= -1e-12
    assert r.error_max >= r.error_median >= r.error_min >= 0
    s = compare(b, a)
    assert s.mae == pytest.approx(r.mae) and s.rmse == pytest.approx(r.rmse)


@given(vectors, st.floats(0.1, 10), st.floats(-20, 20), st.data())
@settings(max_examples=200, deadline=None)
def test_r_squared_affine_invariant(m, scale, shift, data):
    ref = data.draw(arrays(np.float64, len(m), elements=finite))
    assume(np.ptp(m) > 1e-3 and np.ptp(ref) > 1e-3)
    r1 = compare(grid_of(m), grid_of(ref)).r_squared
    r2 = compare(grid_of(scale * m + shift), grid_of(ref)).r_squared
    r3 = compare(grid_of(m), grid_of(scale * ref + shift)).r_squared
    assert r2 == pytest.approx(r1, abs=1e-9) and r3 == pytest.approx(r1, abs=1e-9)


@given(st.permutations(list(range(-60, -20))), st.floats(-30, 30))
@settings(max_examples=100, deadline=None)
def test_main_lobe_shift_invariant(perm, c):
    m = np.array(perm, dtype=float)
    phis = [float(i * 7 % 360) for i in range(len(m))]
    ref = grid_of(m, phis)
    a = compare(grid_of(m, phis), ref)
    b = compare(grid_of(m + c, phis), ref)
    assert a.main_lobe == b.main_lobe == (phis[int(np.argmax(m))], 10.0)


def test_noise_consistency():
    rng = np.random.default_rng(8)
    sigma = 0.7
    ref = rng.uniform(-60, -20, 400)
    r = compare(grid_of(ref + rng.normal(0, sigma, 400)), grid_of(ref))
    assert abs(r.mae / (sigma * math.sqrt(2 / math.pi)) - 1) < 0.10
    assert abs(r.rmse / sigma - 1) < 0.10


def test_repeatability_examples():
    a = grid_of([-30.0, -40.0, -50.0])
    assert repeatability([a, a]).mean_mad == 0.0
    b = grid_of([-29.5, -39.5, -49.5])
    rep = repeatability([a, b])
    assert rep.mean_mad == pytest.approx(0.5) and rep.worst_pair == pytest.approx(0.5)
    with pytest.raises(ValueError):
        repeatability([a])


def test_repeatability_noise_oracle():
    # Monte-Carlo oracle for E|N(0, 2 sigma^2)|, then the same statistic through the library
    rng = np.random.default_rng(99)
    sigma = 0.2
    mc = np.mean(np.abs(rng.normal(0, sigma, 200_000) - rng.normal(0, sigma, 200_000)))
    assert mc == pytest.approx(sigma * math.sqrt(2) * math.sqrt(2 / math.pi), rel=0.01)
    ref = rng.uniform(-60, -20, 252)
    runs = [grid_of(ref + rng.normal(0, sigma, 252)) for _ in range(3)]
    assert abs(repeatability(runs).mean_mad / mc - 1) < 0.15


def test_coverage_examples():
    grid = generate_grid(20, 0, 60, 20, [0.08])
    rows = [ScanSample("t", i, c.phi, c.theta, c.r, -30.0) for i, c in enumerate(grid)]
    assert coverage(ScanLog(rows), grid) == 100.0
    assert coverage(ScanLog(rows[:71]), grid) == pytest.approx(98.61, abs=0.005)
    assert coverage(ScanLog([]), grid) == 0.0
    # duplicates count once
    assert coverage(ScanLog(rows[:10] + rows[:10]), grid) == pytest.approx(1000 / 72)


def test_point_export_round_trip(tmp_path):
    m, r = grid_of([-30.0, -31.5, -40.25]), grid_of([-30.5, -31.0, -40.0])
    p = tmp_path / "points.csv"
    write_point_errors(p, m, r)
    rows = read_point_errors(p)
    assert p.read_text().splitlines()[0] == "phi,theta,r,measured_dbm,reference_dbm,error_db"
    assert [row["error_db"] for row in rows] == [0.5, -0.5, -0.25]


def test_report_writers():
    r = compare(grid_of([-30.0, -31.5, -40.25]), grid_of([-30.5, -31.0, -40.0]))
    kv = dict(line.split("=", 1) for line in r.to_keyvalue().splitlines())
    assert float(kv["mae_db"]) == r.mae
    head = r.to_text().splitlines()[0].split("\t")
    assert head[:3] == ["Scan", "MAE (dB)", "RMSE (dB)"]
