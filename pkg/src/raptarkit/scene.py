"""Environment model and configuration-level collision queries.

Obstacles are oriented boxes or capsules. The arm is approximated by one
capsule per link attached to its FK frame, plus bracket capsules attached
to the flange. Queries are batched over configurations.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .arm import ArmDescription, LinkCapsule, link_frames
from .geometry import segment_box_distance, segment_segment_distance
from .se3 import RigidTransform, rotation_from_euler

FLANGE_FRAME = 8
BRACKET_LINK = 8
DEFAULT_RESOLUTION = 0.01  # rad
_CHUNK = 128


class DuplicateName(ValueError):
    pass


@dataclass(frozen=True)
class SceneObject:
    """Static obstacle. Boxes use ``dims`` (L, W, H); capsules use ``p0``/``p1``/``radius``.

    Geometry is expressed in the object's ``pose`` frame; a box is centred
    on its pose origin.
    """

    name: str
    shape: str
    pose: RigidTransform = field(default_factory=RigidTransform.identity)
    dims: tuple[float, float, float] = (0.0, 0.0, 0.0)
    p0: tuple[float, float, float] = (0.0, 0.0, 0.0)
    p1: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 0.0

    def __post_init__(self):
        if self.shape == "box":
            if len(self.dims) != 3 or min(self.dims) <= 0:
                raise ValueError(f"box {self.name!r}: dims must be three positive lengths")
        elif self.shape == "capsule":
            if self.radius <= 0:
                raise ValueError(f"capsule {self.name!r}: radius must be positive")
        else:
            raise ValueError(f"unknown shape {self.shape!r}")

    def contains(self, point, margin: float = 0.0) -> bool:
        """Point-in-shape test (used by tests and placement sanity checks)."""
        local = self.pose.inverse().apply(point)
        if self.shape == "box":
            return bool(np.all(np.abs(local) <= np.asarray(self.dims) / 2 + margin))
        d = segment_segment_distance(self.p0, self.p1, local, local)
        return bool(d <= self.radius + margin)


@dataclass(frozen=True)
class Bracket:
    """Probe bracket: flange-to-probe mount transform and its collision capsules (flange frame)."""

    mount: RigidTransform = field(default_factory=RigidTransform.identity)
    capsules: tuple[LinkCapsule, ...] = ()


@dataclass(frozen=True)
class CollisionReport:
    colliding: bool
    pair: tuple[str, str] | None = None
    distance: float | None = None

    def __bool__(self) -> bool:
        return self.colliding


@dataclass(frozen=True, eq=False)
class Scene:
    objects: tuple[SceneObject, ...] = ()
    bracket: Bracket = field(default_factory=Bracket)
    dut_riser_height: float = 0.0
    dut_name: str | None = None
    link_padding: float = 0.1  # fractional radius inflation of arm capsules
    adjacent_span: int = 2  # link pairs closer than this in the chain skip self checks
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        names = [o.name for o in self.objects]
        if len(set(names)) != len(names):
            raise DuplicateName("scene object names must be unique")
        if self.dut_riser_height < 0:
            raise ValueError("riser height must be >= 0")

    def __len__(self) -> int:
        return len(self.objects)

    def get(self, name: str) -> SceneObject:
        for o in self.objects:
            if o.name == name:
                return o
        raise KeyError(name)

    def names(self) -> list[str]:
        return [o.name for o in self.objects]

    def without(self, name: str) -> "Scene":
        self.get(name)
        return replace(self, objects=tuple(o for o in self.objects if o.name != name), _cache={})

    def with_objects(self, objects: Sequence[SceneObject]) -> "Scene":
        return replace(self, objects=tuple(objects), _cache={})

    def scan_anchor(self) -> RigidTransform:
        """Top-centre frame of the DUT box; the scan sphere is centred here."""
        if self.dut_name is None:
            raise ValueError("scene has no DUT object")
        dut = self.get(self.dut_name)
        top = (0.0, 0.0, dut.dims[2] / 2.0) if dut.shape == "box" else (0.0, 0.0, 0.0)
        return dut.pose.compose(RigidTransform(np.eye(3), top))

    def checker(self, arm: ArmDescription) -> "CollisionChecker":
        key = id(arm)
        hit = self._cache.get(key)
        if hit is None or hit.arm is not arm:
            hit = CollisionChecker(self, arm)
            self._cache[key] = hit
        return hit


def add_box(scene: Scene, name: str, pose: RigidTransform, dims) -> Scene:
    if name in scene.names():
        raise DuplicateName(f"object {name!r} already in scene")
    obj = SceneObject(name, "box", pose, tuple(float(v) for v in dims))
    return replace(scene, objects=scene.objects + (obj,), _cache={})


def add_capsule(scene: Scene, name: str, pose: RigidTransform, p0, p1, radius: float) -> Scene:
    if name in scene.names():
        raise DuplicateName(f"object {name!r} already in scene")
    obj = SceneObject(name, "capsule", pose, p0=tuple(p0), p1=tuple(p1), radius=float(radius))
    return replace(scene, objects=scene.objects + (obj,), _cache={})


class CollisionChecker:
    """Precompiled arrays for batched collision queries of one (scene, arm) pair."""

    def __init__(self, scene: Scene, arm: ArmDescription):
        self.scene = scene
        self.arm = arm
        caps = [(i, c) for i, c in enumerate(arm.links)]
        caps += [(BRACKET_LINK, c) for c in scene.bracket.capsules]
        self.cap_link = np.array([i for i, _ in caps], dtype=int)
        self.cap_names = [f"link{i}" for i in range(len(arm.links))]
        self.cap_names += [f"bracket{k}" for k in range(len(scene.bracket.capsules))]
        self.cap_frame = np.array([c.frame for _, c in caps], dtype=int)
        self.cap_p0 = np.array([c.p0 for _, c in caps], dtype=float).reshape(-1, 3)
        self.cap_p1 = np.array([c.p1 for _, c in caps], dtype=float).reshape(-1, 3)
        pad = 1.0 + scene.link_padding
        radii = [c.radius * (pad if i < BRACKET_LINK else 1.0) for i, c in caps]
        self.cap_r = np.array(radii, dtype=float)

        boxes = [o for o in scene.objects if o.shape == "box"]
        self.box_names = [o.name for o in boxes]
        self.box_rot = np.array([o.pose.rotation for o in boxes]).reshape(-1, 3, 3)
        self.box_ctr = np.array([o.pose.translation for o in boxes]).reshape(-1, 3)
        self.box_half = np.array([np.asarray(o.dims) / 2.0 for o in boxes]).reshape(-1, 3)

        obs = [o for o in scene.objects if o.shape == "capsule"]
        self.obs_names = [o.name for o in obs]
        self.obs_p0 = np.array([o.pose.apply(o.p0) for o in obs]).reshape(-1, 3)
        self.obs_p1 = np.array([o.pose.apply(o.p1) for o in obs]).reshape(-1, 3)
        self.obs_r = np.array([o.radius for o in obs], dtype=float)

        pairs = [
            (a, b)
            for a in range(len(caps))
            for b in range(a + 1, len(caps))
            if abs(self.cap_link[a] - self.cap_link[b]) > scene.adjacent_span
        ]
        self.pairs = np.array(pairs, dtype=int).reshape(-1, 2)

    def capsules_world(self, qs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        frames = link_frames(self.arm, qs)  # (n, 9, 4, 4)
        f = frames[:, self.cap_frame]  # (n, c, 4, 4)
        rot = f[..., :3, :3]
        trans = f[..., :3, 3]
        w0 = np.einsum("ncij,cj->nci", rot, self.cap_p0) + trans
        w1 = np.einsum("ncij,cj->nci", rot, self.cap_p1) + trans
        return w0, w1

    def clearances(self, qs: np.ndarray):
        """Signed clearances (distance minus radii) for every tested pair.

        Returns three arrays with a leading batch axis: capsule-box
        (n, c, b), capsule-obstacle (n, c, o) and self pairs (n, p).
        """
        qs = np.atleast_2d(np.asarray(qs, dtype=float))
        w0, w1 = self.capsules_world(qs)
        n, c = w0.shape[:2]
        if len(self.box_names):
            rel0 = w0[:, :, None, :] - self.box_ctr[None, None]
            rel1 = w1[:, :, None, :] - self.box_ctr[None, None]
            l0 = np.einsum("ncbj,bji->ncbi", rel0, self.box_rot)
            l1 = np.einsum("ncbj,bji->ncbi", rel1, self.box_rot)
            d_box = segment_box_distance(l0, l1, self.box_half[None, None]) - self.cap_r[None, :, None]
        else:
            d_box = np.full((n, c, 0), np.inf)
        if len(self.obs_names):
            d_obs = segment_segment_distance(
                w0[:, :, None], w1[:, :, None], self.obs_p0[None, None], self.obs_p1[None, None]
            ) - (self.cap_r[None, :, None] + self.obs_r[None, None])
        else:
            d_obs = np.full((n, c, 0), np.inf)
        if len(self.pairs):
            a, b = self.pairs[:, 0], self.pairs[:, 1]
            d_self = segment_segment_distance(w0[:, a], w1[:, a], w0[:, b], w1[:, b]) - (
                self.cap_r[a] + self.cap_r[b]
            )
        else:
            d_self = np.full((n, 0), np.inf)
        return d_box, d_obs, d_self

    def collides(self, qs) -> np.ndarray:
        """Boolean collision flag per configuration, shape (n,)."""
        qs = np.atleast_2d(np.asarray(qs, dtype=float))
        out = np.zeros(len(qs), dtype=bool)
        for s in range(0, len(qs), _CHUNK):
            d_box, d_obs, d_self = self.clearances(qs[s:s + _CHUNK])
            hit = (d_box < 0).any(axis=(1, 2)) | (d_obs < 0).any(axis=(1, 2)) | (d_self < 0).any(axis=1)
            out[s:s + _CHUNK] = hit
        return out

    def report(self, q) -> CollisionReport:
        d_box, d_obs, d_self = (x[0] for x in self.clearances(np.asarray(q, dtype=float)[None]))
        for ci in range(len(self.cap_r)):
            for bi in range(d_box.shape[1]):
                if d_box[ci, bi] < 0:
                    return CollisionReport(True, (self.cap_names[ci], self.box_names[bi]), float(d_box[ci, bi]))
            for oi in range(d_obs.shape[1]):
                if d_obs[ci, oi] < 0:
                    return CollisionReport(True, (self.cap_names[ci], self.obs_names[oi]), float(d_obs[ci, oi]))
        for k, (a, b) in enumerate(self.pairs):
            if d_self[k] < 0:
                return CollisionReport(True, (self.cap_names[a], self.cap_names[b]), float(d_self[k]))
        return CollisionReport(False)

    def segment_collides(self, q_a, q_b, resolution: float = DEFAULT_RESOLUTION) -> bool:
        return bool(self.first_collision_on_segment(q_a, q_b, resolution) is not None)

    def first_collision_on_segment(self, q_a, q_b, resolution: float = DEFAULT_RESOLUTION):
        """Index fraction of the first colliding sample on the straight joint-space edge, or None."""
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        q_a = np.asarray(q_a, dtype=float)
        q_b = np.asarray(q_b, dtype=float)
        n = int(math.ceil(float(np.abs(q_b - q_a).max()) / resolution)) + 1
        ts = np.linspace(0.0, 1.0, max(n, 2))
        qs = q_a[None] + ts[:, None] * (q_b - q_a)[None]
        for s in range(0, len(qs), _CHUNK):
            hit = self.collides(qs[s:s + _CHUNK])
            if hit.any():
                return float(ts[s + int(np.argmax(hit))])
        return None


def in_collision(scene: Scene, arm: ArmDescription, q) -> CollisionReport:
    q = arm.check(q)
    return scene.checker(arm).report(q)


def segment_in_collision(scene: Scene, arm: ArmDescription, q_a, q_b, resolution: float = DEFAULT_RESOLUTION) -> bool:
    return scene.checker(arm).segment_collides(np.asarray(arm.check(q_a)), np.asarray(arm.check(q_b)), resolution)


# -- scene files ----------------------------------------------------------------

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _pose(xyz, ypr) -> RigidTransform:
    return RigidTransform(rotation_from_euler(*ypr), xyz)


def parse_scene(text: str, source: str = "<string>", riser_height: float | None = None) -> Scene:
    """Parse a scene file. ``riser_height`` overrides the file's ``dut_riser_height``."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(text, source=source)
    head = cp["scene"] if cp.has_section("scene") else {}
    riser = float(head.get("dut_riser_height", 0.0)) if riser_height is None else float(riser_height)
    footprint = _floats(head.get("riser_footprint", "0.06, 0.06"))
    dut_name = head.get("dut") or None

    objects = []
    lifted_bottom = None
    for sec in cp.sections():
        if not sec.startswith("object "):
            continue
        s = cp[sec]
        name = sec.split(" ", 1)[1].strip()
        xyz = list(_floats(s.get("xyz", "0, 0, 0")))
        ypr = _floats(s.get("ypr", "0, 0, 0"))
        on_riser = s.getboolean("on_riser", False)
        shape = s.get("shape", "box")
        if shape == "box":
            dims = _floats(s["dims"])
            if on_riser:
                lifted_bottom = (xyz[0], xyz[1], xyz[2] - dims[2] / 2.0)
                xyz[2] += riser
            objects.append(SceneObject(name, "box", _pose(xyz, ypr), dims))
        elif shape == "capsule":
            if on_riser:
                xyz[2] += riser
            objects.append(
                SceneObject(
                    name, "capsule", _pose(xyz, ypr),
                    p0=_floats(s["p0"]), p1=_floats(s["p1"]), radius=s.getfloat("radius"),
                )
            )
        else:
            raise ValueError(f"{source}: [{sec}] unknown shape {shape!r}")
    if riser > 0 and lifted_bottom is not None:
        x, y, z0 = lifted_bottom
        objects.append(SceneObject("riser", "box", _pose((x, y, z0 + riser / 2.0), (0, 0, 0)), (footprint[0], footprint[1], riser)))

    bracket = Bracket()
    if cp.has_section("bracket"):
        b = cp["bracket"]
        mount = _pose(_floats(b.get("mount_xyz", "0, 0, 0")), _floats(b.get("mount_ypr", "0, 0, 0")))
        caps = []
        for sec in cp.sections():
            if sec.startswith("bracket."):
                s = cp[sec]
                caps.append(LinkCapsule(FLANGE_FRAME, _floats(s["p0"]), _floats(s["p1"]), s.getfloat("radius")))
        bracket = Bracket(mount, tuple(caps))

    return Scene(
        objects=tuple(objects),
        bracket=bracket,
        dut_riser_height=riser,
        dut_name=dut_name,
        link_padding=float(head.get("link_padding", 0.1)),
        adjacent_span=int(head.get("adjacent_span", 2)),
    )


def load_scene(path: str | Path | None = None, riser_height: float | None = None) -> Scene:
    if path is None:
        text = resources.files("raptarkit.data").joinpath("default_scene.ini").read_text()
        return parse_scene(text, "default_scene.ini", riser_height)
    path = Path(path)
    return parse_scene(path.read_text(), str(path), riser_height)


def default_scene(riser_height: float | None = None) -> Scene:
    return load_scene(None, riser_height)


def empty_scene(bracket: Bracket | None = None) -> Scene:
    return Scene(bracket=bracket or Bracket())
