"""Kinematic model of a 7-DoF serial arm.

Forward kinematics uses the modified (Craig) DH convention; inverse
kinematics is damped least squares with random in-limit restarts.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .se3 import RigidTransform

N_JOINTS = 7
LIMIT_TOL = 1e-9

IK_DAMPING = 0.05
IK_MAX_ITERS = 300
IK_MAX_RESTARTS = 50
IK_STAGNATION_STEP = 1e-12
IK_STAGNATION_COUNT = 10
IK_MAX_STEP = 0.5  # rad, per-iteration cap on |dq|


class JointLimitViolation(ValueError):
    pass


class Unreachable(RuntimeError):
    """IK exhausted every restart without meeting tolerance."""


@dataclass(frozen=True)
class JointSpec:
    a: float
    d: float
    alpha: float  # rad
    q_min: float  # rad
    q_max: float  # rad
    v_max: float  # rad/s


@dataclass(frozen=True)
class LinkCapsule:
    frame: int  # 0 = base, 1..7 joint frames, 8 = flange
    p0: tuple[float, float, float]
    p1: tuple[float, float, float]
    radius: float


@dataclass(frozen=True)
class JointConfig:
    """Seven joint angles in radians.

    Use :meth:`ArmDescription.config` for a limit-checked value; the plain
    constructor does not know the arm and therefore cannot check limits.
    """

    q: tuple[float, ...]

    def __post_init__(self):
        q = tuple(float(v) for v in self.q)
        if len(q) != N_JOINTS:
            raise ValueError(f"expected {N_JOINTS} joint angles, got {len(q)}")
        object.__setattr__(self, "q", q)

    @classmethod
    def unchecked(cls, q) -> "JointConfig":
        return cls(tuple(np.asarray(q, dtype=float).ravel()))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.q)


@dataclass(frozen=True)
class IkSolution:
    q: JointConfig
    position_error: float
    orientation_error: float
    iterations: int
    restarts: int = 0


def _as_q(q) -> np.ndarray:
    if isinstance(q, JointConfig):
        return np.array(q.q)
    return np.asarray(q, dtype=float)


@dataclass(frozen=True, eq=False)
class ArmDescription:
    name: str
    joints: tuple[JointSpec, ...]
    home: tuple[float, ...]
    flange: tuple[float, float, float] = (0.0, 0.0, 0.0)  # a, d, alpha of the fixed flange link
    links: tuple[LinkCapsule, ...] = field(default=())

    def __post_init__(self):
        if len(self.joints) != N_JOINTS:
            raise ValueError(f"arm must have exactly {N_JOINTS} joints, got {len(self.joints)}")
        for i, j in enumerate(self.joints, 1):
            if not j.q_min < j.q_max:
                raise ValueError(f"joint {i}: q_min must be < q_max")
            if j.v_max <= 0:
                raise ValueError(f"joint {i}: v_max must be positive")
        if len(self.home) != N_JOINTS:
            raise ValueError("home must list 7 angles")
        if not self.within_limits(self.home):
            raise ValueError("home configuration violates joint limits")

    @cached_property
    def q_min(self) -> np.ndarray:
        return np.array([j.q_min for j in self.joints])

    @cached_property
    def q_max(self) -> np.ndarray:
        return np.array([j.q_max for j in self.joints])

    @cached_property
    def v_max(self) -> np.ndarray:
        return np.array([j.v_max for j in self.joints])

    @cached_property
    def _fixed(self) -> np.ndarray:
        # RotX(alpha) @ TransX(a) per joint, plus the flange link, shape (8, 4, 4)
        out = np.zeros((N_JOINTS + 1, 4, 4))
        params = [(j.a, j.alpha) for j in self.joints] + [(self.flange[0], self.flange[2])]
        for k, (a, alpha) in enumerate(params):
            c, s = math.cos(alpha), math.sin(alpha)
            out[k] = [[1, 0, 0, a], [0, c, -s, 0], [0, s, c, 0], [0, 0, 0, 1]]
        return out

    @cached_property
    def _d(self) -> np.ndarray:
        return np.array([j.d for j in self.joints] + [self.flange[1]])

    @property
    def home_config(self) -> JointConfig:
        return JointConfig(self.home)

    def within_limits(self, q, tol: float = LIMIT_TOL) -> bool:
        q = _as_q(q)
        return bool(np.all(q >= self.q_min - tol) and np.all(q <= self.q_max + tol))

    def check(self, q) -> np.ndarray:
        q = _as_q(q)
        if q.shape != (N_JOINTS,):
            raise ValueError(f"expected {N_JOINTS} joint angles")
        if not self.within_limits(q):
            bad = [i + 1 for i in range(N_JOINTS) if not self.q_min[i] - LIMIT_TOL <= q[i] <= self.q_max[i] + LIMIT_TOL]
            raise JointLimitViolation(f"joints {bad} outside limits")
        return q

    def config(self, q) -> JointConfig:
        return JointConfig(tuple(self.check(q)))

    def clip(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.q_min, self.q_max)

    def random_config(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.q_min, self.q_max)


def _rotz_transz(q: np.ndarray, d: np.ndarray) -> np.ndarray:
    """RotZ(q) @ TransZ(d) for arrays of matching shape, returns (..., 4, 4)."""
    c, s = np.cos(q), np.sin(q)
    m = np.zeros(q.shape + (4, 4))
    m[..., 0, 0] = c
    m[..., 0, 1] = -s
    m[..., 1, 0] = s
    m[..., 1, 1] = c
    m[..., 2, 2] = 1.0
    m[..., 2, 3] = d
    m[..., 3, 3] = 1.0
    return m


def link_frames(arm: ArmDescription, q) -> np.ndarray:
    """All frames for a batch of configurations.

    ``q`` has shape (7,) or (n, 7). Returns (..., 9, 4, 4): the base frame,
    the seven joint frames, then the flange.
    """
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    qb = q[None, :] if single else q
    n = qb.shape[0]
    angles = np.concatenate([qb, np.zeros((n, 1))], axis=1)
    local = arm._fixed[None] @ _rotz_transz(angles, np.broadcast_to(arm._d, angles.shape))
    frames = np.empty((n, N_JOINTS + 2, 4, 4))
    frames[:, 0] = np.eye(4)
    for k in range(N_JOINTS + 1):
        frames[:, k + 1] = frames[:, k] @ local[:, k]
    return frames[0] if single else frames


def flange_matrix(arm: ArmDescription, q) -> np.ndarray:
    return link_frames(arm, q)[..., -1, :, :]


def forward_kinematics(arm: ArmDescription, q) -> RigidTransform:
    """Flange pose in the arm base frame."""
    q = arm.check(q)
    return RigidTransform.from_matrix(flange_matrix(arm, q))


_BASE_CACHE: dict[int, tuple[ArmDescription, RigidTransform]] = {}


def base_transform(arm: ArmDescription) -> RigidTransform:
    """FK at the home configuration, cached per arm object for the session."""
    hit = _BASE_CACHE.get(id(arm))
    if hit is None or hit[0] is not arm:
        hit = (arm, forward_kinematics(arm, arm.home))
        _BASE_CACHE[id(arm)] = hit
    return hit[1]


def jacobian(arm: ArmDescription, q) -> np.ndarray:
    """Geometric 6x7 flange Jacobian in the base frame, rows [linear; angular]."""
    frames = link_frames(arm, np.asarray(q, dtype=float))
    p_e = frames[-1, :3, 3]
    z = frames[1:N_JOINTS + 1, :3, 2]
    p = frames[1:N_JOINTS + 1, :3, 3]
    jac = np.empty((6, N_JOINTS))
    jac[:3] = np.cross(z, p_e - p).T
    jac[3:] = z.T
    return jac


def rotation_error_vector(r_target: np.ndarray, r_current: np.ndarray) -> np.ndarray:
    """Axis-angle vector of ``r_target @ r_current.T`` (base frame)."""
    r = r_target @ r_current.T
    cos_a = max(-1.0, min(1.0, (np.trace(r) - 1.0) / 2.0))
    angle = math.acos(cos_a)
    v = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if angle < 1e-7:
        return 0.5 * v
    if math.pi - angle < 1e-4:
        # near pi: recover the axis from the symmetric part
        b = (r + np.eye(3)) / 2.0
        axis = b[np.argmax(np.diag(b))]
        axis = axis / np.linalg.norm(axis)
        if axis @ v < 0:
            axis = -axis
        return angle * axis
    return angle / (2.0 * math.sin(angle)) * v


def pose_errors(arm: ArmDescription, q, target: RigidTransform) -> tuple[float, float]:
    m = flange_matrix(arm, np.asarray(q, dtype=float))
    pos = float(np.linalg.norm(target.translation - m[:3, 3]))
    rot = float(np.linalg.norm(rotation_error_vector(target.rotation, m[:3, :3])))
    return pos, rot


def _dls_attempt(arm, target, q0, tol_pos, tol_rot):
    q = q0.copy()
    still = 0
    for it in range(IK_MAX_ITERS + 1):
        frames = link_frames(arm, q)
        m = frames[-1]
        e_pos = target.translation - m[:3, 3]
        e_rot = rotation_error_vector(target.rotation, m[:3, :3])
        pe, re = float(np.linalg.norm(e_pos)), float(np.linalg.norm(e_rot))
        if pe <= tol_pos and re <= tol_rot:
            return q, pe, re, it, True
        if it == IK_MAX_ITERS:
            break
        z = frames[1:N_JOINTS + 1, :3, 2]
        p = frames[1:N_JOINTS + 1, :3, 3]
        jac = np.vstack([np.cross(z, m[:3, 3] - p).T, z.T])
        err = np.concatenate([e_pos, e_rot])
        jjt = jac @ jac.T + (IK_DAMPING ** 2) * np.eye(6)
        dq = jac.T @ np.linalg.solve(jjt, err)
        nrm = float(np.abs(dq).max())
        if nrm > IK_MAX_STEP:
            dq *= IK_MAX_STEP / nrm
        q_new = arm.clip(q + dq)
        step = float(np.linalg.norm(q_new - q))
        still = still + 1 if step < IK_STAGNATION_STEP else 0
        q = q_new
        if still >= IK_STAGNATION_COUNT:
            break
        # stuck against limits or in a local minimum with tiny progress
        if it >= 60 and it % 30 == 0 and pe > 50 * tol_pos and step < 1e-6:
            break
    return q, pe, re, it, False


def inverse_kinematics(
    arm: ArmDescription,
    target: RigidTransform,
    seed,
    tol_pos: float = 1e-4,
    tol_rot: float = 1e-3,
    max_restarts: int = IK_MAX_RESTARTS,
    rng: np.random.Generator | int | None = 0,
) -> IkSolution:
    """Damped-least-squares IK for the flange pose ``target``.

    Starts from ``seed``; on stagnation restarts from uniformly random
    in-limit configurations drawn from ``rng``. Raises :class:`Unreachable`
    once ``max_restarts`` restarts have failed.
    """
    if tol_pos <= 0 or tol_rot <= 0:
        raise ValueError("tolerances must be positive")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    q0 = arm.clip(_as_q(seed).astype(float))
    total = 0
    best = None
    for attempt in range(max_restarts + 1):
        q, pe, re, its, ok = _dls_attempt(arm, target, q0, tol_pos, tol_rot)
        total += its
        if ok:
            return IkSolution(JointConfig(tuple(q)), pe, re, total, attempt)
        if best is None or pe < best[1]:
            best = (q, pe, re)
        q0 = arm.random_config(rng)
    raise Unreachable(
        f"no IK solution within tolerance after {max_restarts} restarts "
        f"(best residual {best[1] * 1e3:.2f} mm, {math.degrees(best[2]):.2f} deg)"
    )


# -- description files --------------------------------------------------------

def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace("[", " ").replace("]", " ").replace(",", " ").split()]


def parse_arm(text: str, source: str = "<string>") -> ArmDescription:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(text, source=source)
    if not cp.has_section("arm"):
        raise ValueError(f"{source}: missing [arm] section")
    joints = []
    for i in range(1, N_JOINTS + 1):
        sec = f"joint{i}"
        if not cp.has_section(sec):
            raise ValueError(f"{source}: missing [{sec}] section")
        s = cp[sec]
        joints.append(
            JointSpec(
                a=s.getfloat("a"),
                d=s.getfloat("d"),
                alpha=math.radians(s.getfloat("alpha")),
                q_min=math.radians(s.getfloat("q_min")),
                q_max=math.radians(s.getfloat("q_max")),
                v_max=s.getfloat("v_max"),
            )
        )
    extra = [s for s in cp.sections() if s.startswith("joint") and s not in {f"joint{i}" for i in range(1, 8)}]
    if extra:
        raise ValueError(f"{source}: arm must have exactly 7 joints, found extra {extra}")
    flange = (0.0, 0.0, 0.0)
    if cp.has_section("flange"):
        f = cp["flange"]
        flange = (f.getfloat("a", 0.0), f.getfloat("d", 0.0), math.radians(f.getfloat("alpha", 0.0)))
    links = []
    for sec in sorted(s for s in cp.sections() if s.startswith("link")):
        s = cp[sec]
        links.append(
            LinkCapsule(
                frame=s.getint("frame"),
                p0=tuple(_floats(s["p0"])),
                p1=tuple(_floats(s["p1"])),
                radius=s.getfloat("radius"),
            )
        )
    home = tuple(math.radians(v) for v in _floats(cp["arm"]["home"]))
    return ArmDescription(
        name=cp["arm"].get("name", "arm"),
        joints=tuple(joints),
        home=home,
        flange=flange,
        links=tuple(links),
    )


def load_arm(path: str | Path | None = None) -> ArmDescription:
    """Load an arm description file; ``None`` gives the shipped Panda."""
    if path is None:
        text = resources.files("raptarkit.data").joinpath("panda.ini").read_text()
        return parse_arm(text, "panda.ini")
    path = Path(path)
    return parse_arm(path.read_text(), str(path))


def default_arm() -> ArmDescription:
    global _DEFAULT_ARM
    if _DEFAULT_ARM is None:
        _DEFAULT_ARM = load_arm()
    return _DEFAULT_ARM


_DEFAULT_ARM: ArmDescription | None = None


def degenerate_arm(home: Sequence[float] | None = None) -> ArmDescription:
    """All a = d = alpha = 0 chain with wide limits; handy for tests."""
    joints = tuple(JointSpec(0.0, 0.0, 0.0, -math.pi, math.pi, 1.0) for _ in range(N_JOINTS))
    return ArmDescription("degenerate", joints, tuple(home or (0.0,) * N_JOINTS))
