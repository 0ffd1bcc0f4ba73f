"""Rigid-body transforms, the scan transform chain and scan-grid generation.

Angles cross the public API in degrees and are converted to radians here.
Rotations compose as ``R_a @ R_b``; a transform maps points from its child
frame into its parent frame: ``p_parent = R @ p_child + t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

ORTHO_TOL = 1e-9
MAX_POLAR_DEG = 70.0


class EmptyGrid(ValueError):
    """A grid axis produced no values."""


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (polar decomposition)."""
    u, _, vt = np.linalg.svd(rotation)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


def _needs_cleanup(rotation: np.ndarray) -> bool:
    err = np.abs(rotation.T @ rotation - np.eye(3)).max()
    return err > ORTHO_TOL or abs(np.linalg.det(rotation) - 1.0) > ORTHO_TOL


@dataclass(frozen=True)
class RigidTransform:
    """Element of SE(3): rotation (3x3) plus translation (metres)."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("transform entries must be finite")
        if _needs_cleanup(r):
            if np.abs(r.T @ r - np.eye(3)).max() > 1e-6 or np.linalg.det(r) <= 0:
                raise ValueError("rotation is not a proper orthonormal matrix")
            r = orthonormalize(r)
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, matrix) -> "RigidTransform":
        m = np.asarray(matrix, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    __matmul__ = compose

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        """Map points (shape (3,) or (n, 3)) from the child into the parent frame."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0)
        )


def compose(*transforms: RigidTransform) -> RigidTransform:
    out = RigidTransform.identity()
    for t in transforms:
        out = out.compose(t)
    return out


def inverse(t: RigidTransform) -> RigidTransform:
    return t.inverse()


def rotation_angle(rotation: np.ndarray) -> float:
    """Geodesic angle (rad) of a rotation matrix."""
    c = (np.trace(rotation) - 1.0) / 2.0
    return float(math.acos(min(1.0, max(-1.0, c))))


def rotation_from_euler(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Intrinsic Z-Y-X rotation ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``; degrees in."""
    return (
        rot_z(math.radians(yaw)) @ rot_y(math.radians(pitch)) @ rot_x(math.radians(roll))
    )


def euler_from_rotation(rotation: np.ndarray) -> tuple[float, float, float]:
    """Inverse of :func:`rotation_from_euler`, returns (yaw, pitch, roll) in degrees."""
    r = np.asarray(rotation)
    pitch = math.asin(max(-1.0, min(1.0, -r[2, 0])))
    if abs(math.cos(pitch)) > 1e-9:
        yaw = math.atan2(r[1, 0], r[0, 0])
        roll = math.atan2(r[2, 1], r[2, 2])
    else:
        # gimbal lock: fold everything into yaw
        yaw = math.atan2(-r[0, 1], r[1, 1])
        roll = 0.0
    return math.degrees(yaw), math.degrees(pitch), math.degrees(roll)


@dataclass(frozen=True)
class BracketOffset:
    """Probe-bracket calibration offset: Z-Y-X Euler angles (deg) and translation (m)."""

    yaw: float = -100.0
    pitch: float = 0.0
    roll: float = 0.0
    x: float = 0.02
    y: float = 0.02
    z: float = 0.03

    def __post_init__(self):
        for name in ("yaw", "pitch", "roll"):
            v = getattr(self, name)
            if not math.isfinite(v) or not -180.0 <= v <= 180.0:
                raise ValueError(f"bracket {name} must lie in [-180, 180] deg, got {v}")
        for name in ("x", "y", "z"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"bracket offset {name} must be finite")

    @classmethod
    def zero(cls) -> "BracketOffset":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_transform(cls, t: RigidTransform) -> "BracketOffset":
        yaw, pitch, roll = euler_from_rotation(t.rotation)
        x, y, z = (float(v) for v in t.translation)
        return cls(yaw, pitch, roll, x, y, z)


@dataclass(frozen=True, order=True)
class SphericalCoord:
    """Probe direction about the DUT: azimuth ``phi`` and polar ``theta`` in degrees, radius in metres."""

    phi: float
    theta: float
    r: float

    def __post_init__(self):
        if not (math.isfinite(self.phi) and math.isfinite(self.theta) and math.isfinite(self.r)):
            raise ValueError("spherical coordinate must be finite")
        if not 0.0 <= self.phi < 360.0:
            raise ValueError(f"phi must lie in [0, 360) deg, got {self.phi}")
        if not 0.0 <= self.theta <= MAX_POLAR_DEG:
            raise ValueError(f"theta must lie in [0, {MAX_POLAR_DEG:g}] deg, got {self.theta}")
        if self.r <= 0.0:
            raise ValueError(f"radius must be positive, got {self.r}")

    @property
    def key(self) -> tuple[float, float, float]:
        return (round(self.phi, 9), round(self.theta, 9), round(self.r, 9))

    def cartesian(self) -> np.ndarray:
        ph, th = math.radians(self.phi), math.radians(self.theta)
        return self.r * np.array(
            [math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)]
        )


def sphere_transform(c: SphericalCoord) -> RigidTransform:
    """Probe frame on the scan sphere: rotation ``Rz(phi) Ry(-theta)``, position on radius ``r``."""
    ph, th = math.radians(c.phi), math.radians(c.theta)
    return RigidTransform(rot_z(ph) @ rot_y(-th), c.cartesian())


def offset_transform(b: BracketOffset) -> RigidTransform:
    return RigidTransform(rotation_from_euler(b.yaw, b.pitch, b.roll), [b.x, b.y, b.z])


def final_pose(base: RigidTransform, c: SphericalCoord, b: BracketOffset) -> RigidTransform:
    """Executable probe pose: ``base @ sphere(c) @ offset(b)``."""
    return base.compose(sphere_transform(c)).compose(offset_transform(b))


@dataclass(frozen=True)
class ScanGrid:
    """Radius-major, then azimuth, then polar ordered list of scan directions."""

    points: tuple[SphericalCoord, ...]
    phi_step: float
    theta_step: float
    radii: tuple[float, ...]
    theta_min: float = 0.0
    theta_max: float = 0.0

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self) -> Iterator[SphericalCoord]:
        return iter(self.points)

    def __getitem__(self, i):
        return self.points[i]

    def describe(self) -> str:
        radii = ";".join(f"{r:g}" for r in self.radii)
        return (
            f"phi_step={self.phi_step:g} theta={self.theta_min:g}..{self.theta_max:g}"
            f"/{self.theta_step:g} radii={radii} points={len(self)}"
        )


def _axis(start: float, stop: float, step: float, inclusive: bool) -> list[float]:
    # integer stepping avoids float accumulation drift
    n = math.floor((stop - start) / step + 1e-9)
    vals = [start + k * step for k in range(n + 1)] if n >= 0 else []
    if not inclusive:
        vals = [v for v in vals if v < stop - 1e-9]
    return [round(v, 9) for v in vals]


def generate_grid(
    phi_step: float,
    theta_min: float,
    theta_max: float,
    theta_step: float,
    radii: Sequence[float],
) -> ScanGrid:
    if phi_step <= 0 or theta_step <= 0:
        raise ValueError("angular steps must be positive")
    if theta_min < 0:
        raise ValueError("theta_min must be >= 0")
    if theta_max > MAX_POLAR_DEG:
        raise ValueError(f"theta_max {theta_max:g} deg exceeds the {MAX_POLAR_DEG:g} deg polar bound")
    phis = _axis(0.0, 360.0, phi_step, inclusive=False)
    thetas = _axis(theta_min, theta_max, theta_step, inclusive=True) if theta_max >= theta_min else []
    radii = tuple(float(r) for r in radii)
    if not phis or not thetas or not radii:
        raise EmptyGrid("grid axis yields no values")
    if len(set(radii)) != len(radii):
        raise ValueError("duplicate radii")
    points = tuple(
        SphericalCoord(ph, th, r) for r in radii for ph in phis for th in thetas
    )
    return ScanGrid(points, float(phi_step), float(theta_step), radii, float(theta_min), float(theta_max))


def grid_from_points(points: Sequence[SphericalCoord]) -> ScanGrid:
    """Wrap an explicit point list (used for single-pose and ad hoc scans)."""
    pts = tuple(points)
    radii = tuple(dict.fromkeys(p.r for p in pts))
    thetas = [p.theta for p in pts] or [0.0]
    return ScanGrid(pts, 0.0, 0.0, radii, min(thetas), max(thetas))
