"""Bracket-offset estimation from point pairs by closed-form rigid registration."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .se3 import BracketOffset, RigidTransform, offset_transform

ENVELOPE = (0.06, 0.04, 0.03)  # m, bracket probe-point box
_DEGENERATE_TOL = 1e-9


class DegenerateGeometry(ValueError):
    pass


@dataclass(frozen=True)
class PointPairSet:
    nominal: np.ndarray  # (n, 3), bracket frame
    measured: np.ndarray  # (n, 3), flange frame

    def __post_init__(self):
        if self.nominal.shape != self.measured.shape or self.nominal.ndim != 2 or self.nominal.shape[1] != 3:
            raise ValueError("point pairs must be two (n, 3) arrays of equal shape")

    def __len__(self) -> int:
        return len(self.nominal)


def fit_rigid(pairs: PointPairSet) -> tuple[RigidTransform, float]:
    """Least-squares rigid transform taking nominal points onto measured points.

    Returns the transform and the RMS residual in metres.
    """
    p = np.asarray(pairs.nominal, dtype=float)
    q = np.asarray(pairs.measured, dtype=float)
    if len(p) < 3:
        raise DegenerateGeometry("need at least three point pairs")
    pc, qc = p.mean(axis=0), q.mean(axis=0)
    P, Q = p - pc, q - qc
    scale = max(float(np.abs(P).max()), 1e-300)
    sv = np.linalg.svd(P / scale, compute_uv=False)
    if sv[1] < _DEGENERATE_TOL * max(sv[0], 1.0) or sv[0] < _DEGENERATE_TOL:
        raise DegenerateGeometry("nominal points are collinear or coincident")
    H = P.T @ Q
    U, _, Vt = np.linalg.svd(H)
    # reflection correction keeps det(R) = +1
    s = np.ones(3)
    s[2] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ np.diag(s) @ U.T
    t = qc - R @ pc
    resid = q - (p @ R.T + t)
    rms = math.sqrt(float(np.mean(np.sum(resid * resid, axis=1))))
    return RigidTransform(R, t), rms


def envelope_corners(dims=ENVELOPE) -> np.ndarray:
    hx, hy, hz = (d / 2 for d in dims)
    return np.array([[sx * hx, sy * hy, sz * hz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])


def envelope_points(n: int, rng: np.random.Generator, dims=ENVELOPE) -> np.ndarray:
    """Eight box corners first, then uniform samples on the box surface."""
    corners = envelope_corners(dims)
    if n <= 8:
        # any three box corners are non-collinear; order spreads the first few
        order = [0, 7, 3, 4, 1, 6, 2, 5]
        return corners[order[:n]]
    h = np.array(dims) / 2
    areas = np.array([dims[1] * dims[2], dims[0] * dims[2], dims[0] * dims[1]])
    extra = n - 8
    axis = rng.choice(3, size=extra, p=areas / areas.sum())
    pts = rng.uniform(-h, h, size=(extra, 3))
    side = rng.choice([-1.0, 1.0], size=extra)
    pts[np.arange(extra), axis] = side * h[axis]
    return np.vstack([corners, pts])


def simulate_dial_gauge(true_offset: BracketOffset, n: int, noise_sigma: float, seed=0) -> PointPairSet:
    """Probe points on the bracket envelope mapped through the true offset plus isotropic noise."""
    if n < 3:
        raise ValueError("need at least three probe points")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    nominal = envelope_points(n, rng)
    measured = offset_transform(true_offset).apply(nominal)
    if noise_sigma > 0:
        measured = measured + rng.normal(0.0, noise_sigma, measured.shape)
    return PointPairSet(nominal, measured)


def calibrate(true_offset: BracketOffset, n: int = 50, noise_sigma: float = 0.3e-3, seed=0):
    """Simulate a gauge session and fit; returns (estimated offset, rms residual m)."""
    t, rms = fit_rigid(simulate_dial_gauge(true_offset, n, noise_sigma, seed))
    return BracketOffset.from_transform(t), rms


def format_offset(b: BracketOffset, rms: float | None = None) -> str:
    """Offset in the ``[bracket_offset]`` section format read by the scan config."""
    lines = []
    if rms is not None:
        lines.append(f"# calibration rms residual: {rms * 1e3:.4f} mm")
    lines.append("[bracket_offset]")
    for k in ("yaw", "pitch", "roll", "x", "y", "z"):
        lines.append(f"{k} = {getattr(b, k)!r}")
    return "\n".join(lines) + "\n"


def write_offset(path: str | Path, b: BracketOffset, rms: float | None = None) -> None:
    Path(path).write_text(format_offset(b, rms))
