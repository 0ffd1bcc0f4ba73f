"""Joint-space motion planning: RRT-Connect, recovery-to-home, timing, benchmarking."""

from __future__ import annotations

import enum
import math
import statistics
import time
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .arm import ArmDescription, JointConfig, Unreachable, flange_matrix, inverse_kinematics, link_frames
from .scene import DEFAULT_RESOLUTION, Scene
from .se3 import BracketOffset, EmptyGrid, RigidTransform, ScanGrid, final_pose

RRT_STEP = 0.2
RRT_MAX_ITERS = 20_000
SHORTCUT_ATTEMPTS = 100
MAX_RECOVERIES = 2
NU_MAX = 0.05
IK_CANDIDATES = 4  # IK solutions tried per recovery attempt
IK_TOL_POS = 1e-4
IK_TOL_ROT = 1e-3


class PlanningError(RuntimeError):
    pass


class StartInCollision(PlanningError):
    pass


class GoalInCollision(PlanningError):
    pass


class IterationBudgetExhausted(PlanningError):
    pass


class EmptyPath(ValueError):
    pass


class Status(str, enum.Enum):
    SUCCESS = "Success"
    RECOVERED = "RecoveredSuccess"
    FAILURE = "Failure"


@dataclass(frozen=True)
class Trajectory:
    waypoints: tuple[JointConfig, ...]
    timestamps: tuple[float, ...]
    cartesian_length: float
    planning_time: float = 0.0

    @property
    def duration(self) -> float:
        return self.timestamps[-1] if self.timestamps else 0.0

    def as_array(self) -> np.ndarray:
        return np.array([w.q for w in self.waypoints])


@dataclass(frozen=True)
class PlanOutcome:
    status: Status
    trajectory: Trajectory | None = None
    recovery_count: int = 0
    goal: JointConfig | None = None
    reason: str = ""
    planning_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status is not Status.FAILURE


class Planner(Protocol):
    """Anything that connects two joint configurations with a collision-free polyline."""

    name: str

    def plan(self, scene: Scene, arm: ArmDescription, q_start, q_goal, seed) -> list[np.ndarray]:
        ...


class _Tree:
    def __init__(self, root: np.ndarray, capacity: int = 1024):
        self.nodes = np.empty((capacity, root.size))
        self.parent = np.empty(capacity, dtype=int)
        self.nodes[0] = root
        self.parent[0] = -1
        self.n = 1

    def add(self, q: np.ndarray, parent: int) -> int:
        if self.n == len(self.nodes):
            self.nodes = np.concatenate([self.nodes, np.empty_like(self.nodes)])
            self.parent = np.concatenate([self.parent, np.empty_like(self.parent)])
        self.nodes[self.n] = q
        self.parent[self.n] = parent
        self.n += 1
        return self.n - 1

    def nearest(self, q: np.ndarray) -> int:
        d = self.nodes[: self.n] - q
        return int(np.argmin(np.einsum("ij,ij->i", d, d)))

    def branch(self, i: int) -> list[np.ndarray]:
        out = []
        while i >= 0:
            out.append(self.nodes[i].copy())
            i = int(self.parent[i])
        return out


def _steer(q_from: np.ndarray, q_to: np.ndarray, step: float) -> np.ndarray:
    d = q_to - q_from
    n = float(np.linalg.norm(d))
    if n <= step:
        return q_to.copy()
    return q_from + d * (step / n)


def shortcut(checker, path: list[np.ndarray], rng: np.random.Generator, attempts: int, resolution: float) -> list[np.ndarray]:
    path = list(path)
    for _ in range(attempts):
        if len(path) < 3:
            break
        i, j = sorted(rng.choice(len(path), size=2, replace=False))
        if j - i < 2:
            continue
        if not checker.segment_collides(path[i], path[j], resolution):
            path = path[: i + 1] + path[j:]
    return path


@dataclass
class RRTConnect:
    step: float = RRT_STEP
    max_iters: int = RRT_MAX_ITERS
    shortcut_attempts: int = SHORTCUT_ATTEMPTS
    resolution: float = DEFAULT_RESOLUTION
    name: str = "RRT-Connect"

    def plan(self, scene: Scene, arm: ArmDescription, q_start, q_goal, seed=0) -> list[np.ndarray]:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        checker = scene.checker(arm)
        qs = np.asarray(arm.check(q_start), dtype=float)
        qg = np.asarray(arm.check(q_goal), dtype=float)
        if checker.collides(qs)[0]:
            raise StartInCollision(str(checker.report(qs).pair))
        if checker.collides(qg)[0]:
            raise GoalInCollision(str(checker.report(qg).pair))
        if np.array_equal(qs, qg):
            return [qs]
        if not checker.segment_collides(qs, qg, self.resolution):
            return [qs, qg]

        ta, tb = _Tree(qs), _Tree(qg)
        a_is_start = True
        path = None
        for _ in range(self.max_iters):
            q_rand = arm.random_config(rng)
            i_near = ta.nearest(q_rand)
            q_new = _steer(ta.nodes[i_near], q_rand, self.step)
            if checker.segment_collides(ta.nodes[i_near], q_new, self.resolution):
                ta, tb, a_is_start = tb, ta, not a_is_start
                continue
            i_new = ta.add(q_new, i_near)
            # greedy connect of the other tree towards q_new
            j = tb.nearest(q_new)
            while True:
                q_next = _steer(tb.nodes[j], q_new, self.step)
                if checker.segment_collides(tb.nodes[j], q_next, self.resolution):
                    break
                j = tb.add(q_next, j)
                if np.array_equal(q_next, q_new):
                    half_a = ta.branch(i_new)[::-1]
                    half_b = tb.branch(j)[1:]
                    path = half_a + half_b if a_is_start else (half_a + half_b)[::-1]
                    break
            if path is not None:
                break
            ta, tb, a_is_start = tb, ta, not a_is_start
        if path is None:
            raise IterationBudgetExhausted(f"no connection after {self.max_iters} iterations")
        path = shortcut(checker, path, rng, self.shortcut_attempts, self.resolution)
        for a, b in zip(path, path[1:]):
            if checker.segment_collides(a, b, self.resolution):  # pragma: no cover - guarded above
                raise PlanningError("smoothed path failed edge validation")
        return path


def rrt_connect(
    scene: Scene,
    arm: ArmDescription,
    q_start,
    q_goal,
    seed=0,
    step: float = RRT_STEP,
    max_iters: int = RRT_MAX_ITERS,
) -> list[np.ndarray]:
    return RRTConnect(step=step, max_iters=max_iters).plan(scene, arm, q_start, q_goal, seed)


def path_length(path: Sequence) -> float:
    """Joint-space polyline length (Euclidean, rad)."""
    p = np.array([np.asarray(getattr(w, "q", w), dtype=float) for w in path])
    return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum()) if len(p) > 1 else 0.0


def time_parameterize(path: Sequence, arm: ArmDescription, nu_max: float = NU_MAX, planning_time: float = 0.0) -> Trajectory:
    """Per-segment duration = max_i |dq_i| / (nu_max * v_max_i), timestamps cumulative."""
    if not 0.0 < nu_max <= 1.0:
        raise ValueError("nu_max must lie in (0, 1]")
    if len(path) == 0:
        raise EmptyPath("cannot time-parameterize an empty path")
    pts = [np.asarray(getattr(w, "q", w), dtype=float) for w in path]
    kept = [pts[0]]
    for p in pts[1:]:
        if not np.array_equal(p, kept[-1]):
            kept.append(p)
    q = np.array(kept)
    dq = np.abs(np.diff(q, axis=0))
    seg = (dq / (nu_max * arm.v_max)).max(axis=1) if len(q) > 1 else np.zeros(0)
    stamps = np.concatenate([[0.0], np.cumsum(seg)])
    flange = flange_matrix(arm, q)[:, :3, 3]
    length = float(np.linalg.norm(np.diff(flange, axis=0), axis=1).sum())
    return Trajectory(
        tuple(JointConfig(tuple(w)) for w in q),
        tuple(float(t) for t in stamps),
        length,
        planning_time,
    )


def concat_paths(*paths: Sequence[np.ndarray]) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    for p in paths:
        for w in p:
            if not out or not np.array_equal(out[-1], w):
                out.append(np.asarray(w, dtype=float))
    return out


def _flange_target(scene: Scene, probe_pose: RigidTransform) -> RigidTransform:
    return probe_pose.compose(scene.bracket.mount.inverse())


def _attempt(scene, arm, planner, q_from, flange_target, seeds, rng):
    checker = scene.checker(arm)
    last = "no IK candidate"
    for seed_q in seeds:
        try:
            sol = inverse_kinematics(arm, flange_target, seed_q, IK_TOL_POS, IK_TOL_ROT, rng=rng)
        except Unreachable as exc:
            last = f"Unreachable: {exc}"
            continue
        q_goal = np.array(sol.q.q)
        if checker.collides(q_goal)[0]:
            last = f"GoalInCollision: {checker.report(q_goal).pair}"
            continue
        try:
            return planner.plan(scene, arm, q_from, q_goal, rng), q_goal, ""
        except PlanningError as exc:
            last = f"{type(exc).__name__}: {exc}"
    return None, None, last


def plan_pose(
    scene: Scene,
    arm: ArmDescription,
    current_q,
    target: RigidTransform,
    max_recoveries: int = MAX_RECOVERIES,
    seed=0,
    planner: Planner | None = None,
    nu_max: float = NU_MAX,
    ik_candidates: int = IK_CANDIDATES,
) -> PlanOutcome:
    """Plan from ``current_q`` to the probe pose ``target`` with bounded recovery.

    The first attempt seeds IK from ``current_q``. On failure the arm is
    planned back to home and the pose is retried with IK seeded from home
    (then random seeds), at most ``max_recoveries`` times. The returned
    trajectory covers everything executed, including retreats to home.
    Failures are reported through ``status``; nothing is raised.
    """
    t0 = time.perf_counter()
    planner = planner or RRTConnect()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    q_cur = np.asarray(arm.check(current_q), dtype=float)
    flange_target = _flange_target(scene, target)
    home = np.array(arm.home)
    executed: list[np.ndarray] = [q_cur]

    path, q_goal, reason = _attempt(scene, arm, planner, q_cur, flange_target, [q_cur], rng)
    recoveries = 0
    while path is None and recoveries < max_recoveries:
        recoveries += 1
        if not np.array_equal(q_cur, home):
            try:
                back = planner.plan(scene, arm, q_cur, home, rng)
            except PlanningError as exc:
                reason = f"{reason}; home retreat failed: {exc}"
                break
            executed = concat_paths(executed, back)
            q_cur = home
        seeds = [home] + [arm.random_config(rng) for _ in range(ik_candidates - 1)]
        path, q_goal, reason = _attempt(scene, arm, planner, q_cur, flange_target, seeds, rng)

    elapsed = time.perf_counter() - t0
    if path is None:
        traj = time_parameterize(executed, arm, nu_max, elapsed) if len(executed) > 1 else None
        return PlanOutcome(Status.FAILURE, traj, recoveries, None, reason, elapsed)
    full = concat_paths(executed, path)
    traj = time_parameterize(full, arm, nu_max, elapsed)
    status = Status.SUCCESS if recoveries == 0 else Status.RECOVERED
    return PlanOutcome(status, traj, recoveries, JointConfig(tuple(q_goal)), "", elapsed)


def probe_pose(arm: ArmDescription, scene: Scene, q) -> RigidTransform:
    """Probe pose reached at configuration ``q`` (flange composed with the bracket mount)."""
    m = link_frames(arm, np.asarray(q, dtype=float))[-1]
    return RigidTransform.from_matrix(m).compose(scene.bracket.mount)


# -- benchmark --------------------------------------------------------------------

@dataclass(frozen=True)
class PoseRecord:
    index: int
    phi: float
    theta: float
    r: float
    status: str
    recovery_count: int
    planning_time: float
    cartesian_length: float
    goal: tuple[float, ...] | None


@dataclass(frozen=True)
class BenchmarkReport:
    planner: str
    n_poses: int
    seeds: tuple[int, ...]
    successes: int
    recovered: int
    failures: int
    success_rate: float
    mean_planning_time: float
    median_planning_time: float
    total_cartesian_length: float  # mean over seeds, metres
    cartesian_repeatability_mm: float
    joint_spread_rad: float
    outcomes: tuple[tuple[PoseRecord, ...], ...] = field(default=())
    note: str = ""

    def deterministic_view(self) -> dict:
        """Everything except wall-clock timings, for reproducibility checks."""
        strip = lambda rec: tuple(v for k, v in rec.__dict__.items() if k != "planning_time")
        d = {k: v for k, v in self.__dict__.items() if k not in ("mean_planning_time", "median_planning_time", "outcomes")}
        d["outcomes"] = tuple(tuple(strip(r) for r in run) for run in self.outcomes)
        return d

    def to_text(self, timing: bool = True) -> str:
        head = ["Algorithm", "Category", "Planning Time (s)", "Success Rate (%)", "Traj. Length (m)",
                "Repeatability (mm)", "Joint Spread (rad)", "Poses", "Recovered", "Failures"]
        row = [
            self.planner,
            "Sampling-based",
            f"{self.mean_planning_time:.3f}" if timing else "-",
            f"{self.success_rate:.1f}",
            f"{self.total_cartesian_length:.3f}",
            f"{self.cartesian_repeatability_mm:.4f}",
            f"{self.joint_spread_rad:.4f}",
            str(self.n_poses),
            str(self.recovered),
            str(self.failures),
        ]
        lines = ["\t".join(head), "\t".join(row)]
        if timing:
            lines.append(f"# median planning time (s): {self.median_planning_time:.4f}")
        lines.append(f"# seeds: {','.join(str(s) for s in self.seeds)}")
        if self.note:
            lines.append(f"# note: {self.note}")
        return "\n".join(lines) + "\n"


def scan_targets(grid: ScanGrid, base: RigidTransform, offset: BracketOffset) -> list[RigidTransform]:
    return [final_pose(base, c, offset) for c in grid]


def pose_seed(seed: int, index: int, attempt: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index), int(attempt)])


def benchmark_scan(
    scene: Scene,
    arm: ArmDescription,
    grid: ScanGrid | None,
    seeds: Sequence[int] = (0,),
    base: RigidTransform | None = None,
    offset: BracketOffset | None = None,
    planner: Planner | None = None,
    max_recoveries: int = MAX_RECOVERIES,
    nu_max: float = NU_MAX,
) -> BenchmarkReport:
    """Plan every grid pose in scan order, once per seed, and aggregate."""
    planner = planner or RRTConnect()
    seeds = tuple(int(s) for s in seeds)
    if grid is None or len(grid) == 0:
        return BenchmarkReport(planner.name, 0, seeds, 0, 0, 0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, (), "EmptyGrid: zero poses")
    base = base if base is not None else scene.scan_anchor()
    offset = offset if offset is not None else BracketOffset()
    targets = scan_targets(grid, base, offset)
    runs = []
    times = []
    lengths = []
    for s in seeds:
        q = np.array(arm.home)
        recs = []
        total_len = 0.0
        for i, (c, target) in enumerate(zip(grid, targets)):
            out = plan_pose(scene, arm, q, target, max_recoveries, pose_seed(s, i), planner, nu_max)
            length = out.trajectory.cartesian_length if out.trajectory else 0.0
            total_len += length
            times.append(out.planning_time)
            if out.trajectory is not None:
                q = np.array(out.trajectory.waypoints[-1].q)
            recs.append(PoseRecord(i, c.phi, c.theta, c.r, out.status.value, out.recovery_count,
                                   out.planning_time, length, out.goal.q if out.goal else None))
        runs.append(tuple(recs))
        lengths.append(total_len)

    n_total = len(grid) * len(seeds)
    flat = [r for run in runs for r in run]
    ok = sum(r.status != Status.FAILURE.value for r in flat)
    rec = sum(r.status == Status.RECOVERED.value for r in flat)
    rep_mm, spread = _repeatability(scene, arm, runs)
    return BenchmarkReport(
        planner=planner.name,
        n_poses=len(grid),
        seeds=seeds,
        successes=ok,
        recovered=rec,
        failures=n_total - ok,
        success_rate=100.0 * ok / n_total,
        mean_planning_time=float(np.mean(times)),
        median_planning_time=float(statistics.median(times)),
        total_cartesian_length=float(np.mean(lengths)),
        cartesian_repeatability_mm=rep_mm,
        joint_spread_rad=spread,
        outcomes=tuple(runs),
    )


def _repeatability(scene, arm, runs) -> tuple[float, float]:
    """Mean RMS probe-position scatter (mm) and mean max joint spread across seeds, per pose."""
    if len(runs) < 2:
        return 0.0, 0.0
    devs, spreads = [], []
    for recs in zip(*runs):
        goals = [r.goal for r in recs if r.goal is not None]
        if len(goals) < 2:
            continue
        g = np.array(goals)
        pos = np.array([probe_pose(arm, scene, q).translation for q in g])
        devs.append(float(np.sqrt(((pos - pos.mean(axis=0)) ** 2).sum(axis=1).mean())) * 1e3)
        spreads.append(float((g.max(axis=0) - g.min(axis=0)).max()))
    if not devs:
        return 0.0, 0.0
    return float(np.mean(devs)), float(np.mean(spreads))
