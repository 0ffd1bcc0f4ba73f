import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from raptarkit.geometry import point_box_distance, segment_box_distance, segment_segment_distance

vec = arrays(np.float64, 3, elements=st.floats(-1, 1, allow_nan=False))
half = arrays(np.float64, 3, elements=st.floats(0.01, 0.5, allow_nan=False))

T = np.linspace(0.0, 1.0, 2001)


def sampled_segment_box(p0, p1, h):
    pts = p0[None] + T[:, None] * (p1 - p0)[None]
    return point_box_distance(pts, h).min()


def sampled_segment_segment(a0, a1, b0, b1):
    s = np.linspace(0, 1, 401)
    pa = a0[None] + s[:, None] * (a1 - a0)[None]
    pb = b0[None] + s[:, None] * (b1 - b0)[None]
    return np.linalg.norm(pa[:, None] - pb[None], axis=-1).min()


def test_point_box_inside_and_outside():
    h = np.array([1.0, 2.0, 3.0])
    assert point_box_distance([0.5, 0.5, 0.5], h) == 0.0
    assert np.isclose(point_box_distance([2.0, 0.0, 0.0], h), 1.0)
    assert np.isclose(point_box_distance([2.0, 3.0, 0.0], h), np.sqrt(2.0))


@given(vec, vec, half)
@settings(max_examples=300, deadline=None)
def test_segment_box_against_sampling(p0, p1, h):
    exact = float(segment_box_distance(p0, p1, h))
    sampled = float(sampled_segment_box(p0, p1, h))
    step = np.linalg.norm(p1 - p0) / (len(T) - 1)
    assert exact <= sampled + 1e-12
    assert sampled - exact <= step + 1e-9


def test_segment_box_crossing_is_zero():
    assert segment_box_distance([-2, 0, 0], [2, 0, 0], [0.1, 0.1, 0.1]) == 0.0


def test_segment_box_broadcasts():
    p0 = np.array([[2.0, 0, 0], [0, 3.0, 0]])
    p1 = np.array([[3.0, 0, 0], [0, 4.0, 0]])
    d = segment_box_distance(p0, p1, [1.0, 1.0, 1.0])
    assert d.shape == (2,) and np.allclose(d, [1.0, 2.0])


@given(vec, vec, vec, vec)
@settings(max_examples=300, deadline=None)
def test_segment_segment_against_sampling(a0, a1, b0, b1):
    exact = float(segment_segment_distance(a0, a1, b0, b1))
    sampled = float(sampled_segment_segment(a0, a1, b0, b1))
    step = (np.linalg.norm(a1 - a0) + np.linalg.norm(b1 - b0)) / 400
    assert exact <= sampled + 1e-9
    assert sampled - exact <= step + 1e-9


def test_segment_segment_degenerate_cases():
    z = np.zeros(3)
    assert np.isclose(segment_segment_distance(z, z, [1.0, 0, 0], [1.0, 0, 0]), 1.0)
    assert np.isclose(segment_segment_distance([0, 0, 0], [1, 0, 0], [0.5, 1, 0], [0.5, 1, 0]), 1.0)
    assert np.isclose(segment_segment_distance([0.5, 1, 0], [0.5, 1, 0], [0, 0, 0], [1, 0, 0]), 1.0)
    # parallel overlapping
    assert np.isclose(segment_segment_distance([0, 0, 0], [1, 0, 0], [0.5, 0.2, 0], [1.5, 0.2, 0]), 0.2)
