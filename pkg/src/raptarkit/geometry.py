"""Closed-form distances between segments, points and oriented boxes.

All functions broadcast over leading dimensions so a whole batch of
capsules can be tested in one call.
"""

from __future__ import annotations

import numpy as np

_EPS = 1e-20  # squared length; shorter segments are treated as points


def point_box_distance(points, half_extents) -> np.ndarray:
    """Distance from points to an axis-aligned box centred at the origin."""
    p = np.asarray(points, dtype=float)
    excess = np.maximum(np.abs(p) - half_extents, 0.0)
    return np.sqrt(np.sum(excess * excess, axis=-1))


def segment_box_distance(p0, p1, half_extents) -> np.ndarray:
    """Exact distance from segments ``p0-p1`` to a box centred at the origin.

    Squared distance along the segment is convex and piecewise quadratic in
    the segment parameter, with breakpoints where a coordinate crosses a
    slab face. Minimising each piece in closed form and keeping the best
    piece gives the exact minimum.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    h = np.broadcast_to(np.asarray(half_extents, dtype=float), np.broadcast_shapes(p0.shape, p1.shape))
    d = p1 - p0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t_lo = np.where(np.abs(d) > _EPS, (-h - p0) / d, 0.0)
        t_hi = np.where(np.abs(d) > _EPS, (h - p0) / d, 0.0)
    lead = p0.shape[:-1] if p0.ndim >= p1.ndim else p1.shape[:-1]
    brk = np.concatenate(
        [np.zeros(lead + (1,)), np.ones(lead + (1,)), np.clip(t_lo, 0, 1), np.clip(t_hi, 0, 1)],
        axis=-1,
    )
    brk.sort(axis=-1)
    s0 = brk[..., :-1]
    s1 = brk[..., 1:]
    tm = 0.5 * (s0 + s1)
    # shapes: (..., k) for pieces, (..., k, 3) for coordinates
    x_mid = p0[..., None, :] + tm[..., None] * d[..., None, :]
    hb = h[..., None, :]
    below = x_mid < -hb
    above = x_mid > hb
    target = np.where(below, -hb, np.where(above, hb, 0.0))
    w = (below | above).astype(float)
    off = p0[..., None, :] - target
    dd = d[..., None, :]
    num = np.sum(w * off * dd, axis=-1)
    den = np.sum(w * dd * dd, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t_star = np.where(den > _EPS, -num / den, tm)
    t_star = np.clip(t_star, s0, s1)
    pts = p0[..., None, :] + t_star[..., None] * d[..., None, :]
    dist = point_box_distance(pts, hb)
    return dist.min(axis=-1)


def segment_segment_distance(a0, a1, b0, b1) -> np.ndarray:
    """Exact distance between segments ``a0-a1`` and ``b0-b1`` (broadcasting)."""
    a0 = np.asarray(a0, dtype=float)
    a1 = np.asarray(a1, dtype=float)
    b0 = np.asarray(b0, dtype=float)
    b1 = np.asarray(b1, dtype=float)
    d1 = a1 - a0
    d2 = b1 - b0
    r = a0 - b0
    a = np.sum(d1 * d1, axis=-1)
    e = np.sum(d2 * d2, axis=-1)
    f = np.sum(d2 * r, axis=-1)
    c = np.sum(d1 * r, axis=-1)
    b = np.sum(d1 * d2, axis=-1)
    denom = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        s = np.where(denom > _EPS, np.clip((b * f - c * e) / denom, 0.0, 1.0), 0.0)
        s = np.where(a <= _EPS, 0.0, s)
        t = np.where(e > _EPS, (b * s + f) / e, 0.0)
        # t outside [0, 1]: clamp and recompute s
        s_lo = np.where(a > _EPS, np.clip(-c / a, 0.0, 1.0), 0.0)
        s_hi = np.where(a > _EPS, np.clip((b - c) / a, 0.0, 1.0), 0.0)
    s = np.where(t < 0.0, s_lo, np.where(t > 1.0, s_hi, s))
    s = np.where((e <= _EPS) & (a > _EPS), s_lo, s)
    t = np.clip(t, 0.0, 1.0)
    c1 = a0 + s[..., None] * d1
    c2 = b0 + t[..., None] * d2
    return np.linalg.norm(c1 - c2, axis=-1)


def to_local(points, rotation, center) -> np.ndarray:
    """Express world points in a frame with the given rotation and origin."""
    return (np.asarray(points, dtype=float) - center) @ rotation
