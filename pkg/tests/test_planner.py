import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raptarkit.arm import inverse_kinematics, link_frames
from raptarkit.planner import (
    EmptyPath, GoalInCollision, IterationBudgetExhausted, StartInCollision, Status, benchmark_scan,
    path_length, plan_pose, rrt_connect, time_parameterize,
)
from raptarkit.scene import add_box, empty_scene
from raptarkit.se3 import BracketOffset, RigidTransform, SphericalCoord, final_pose, generate_grid
from raptarkit.arm import forward_kinematics


def at(x, y, z):
    return RigidTransform(np.eye(3), [x, y, z])


def edges_free(scene, arm, path, resolution=0.005):
    # independent pass at half the planner's edge resolution
    checker = scene.checker(arm)
    for a, b in zip(path, path[1:]):
        a, b = np.asarray(a), np.asarray(b)
        n = int(math.ceil(np.abs(b - a).max() / resolution)) + 1
        qs = a + np.linspace(0, 1, max(n, 2))[:, None] * (b - a)
        if checker.collides(qs).any():
            return False
    return True


def test_trivial_path(arm, scene):
    path = rrt_connect(scene, arm, arm.home, arm.home)
    assert len(path) == 1 and np.array_equal(path[0], arm.home)


def test_empty_scene_random_endpoints(arm, rng):
    s = empty_scene()
    checker = s.checker(arm)
    for k in range(5):
        while True:
            a, b = arm.random_config(rng), arm.random_config(rng)
            if not checker.collides(np.array([a, b])).any():
                break
        path = rrt_connect(s, arm, a, b, seed=k)
        assert np.array_equal(path[0], a) and np.array_equal(path[-1], b)
        assert path_length(path) >= np.linalg.norm(b - a) - 1e-12
        assert edges_free(s, arm, path)


def test_goal_and_start_in_collision(arm):
    flange = forward_kinematics(arm, arm.home).translation
    s = add_box(empty_scene(), "block", at(*flange), (0.1, 0.1, 0.1))
    free = np.array(arm.home)
    free[0] = 1.5
    with pytest.raises(GoalInCollision):
        rrt_connect(s, arm, free, arm.home)
    with pytest.raises(StartInCollision):
        rrt_connect(s, arm, arm.home, free)


def wall_case(arm):
    q_a = np.array(arm.home)
    q_b = q_a.copy()
    q_a[0], q_b[0] = -0.5, 0.5
    flange = forward_kinematics(arm, arm.home).translation
    return add_box(empty_scene(), "wall", at(*flange), (0.2, 0.005, 0.1)), q_a, q_b


def test_budget_exhausted(arm):
    s, q_a, q_b = wall_case(arm)
    with pytest.raises(IterationBudgetExhausted):
        rrt_connect(s, arm, q_a, q_b, seed=0, max_iters=0)


def test_detour_around_wall_deterministic(arm):
    s, q_a, q_b = wall_case(arm)
    p1 = rrt_connect(s, arm, q_a, q_b, seed=3)
    p2 = rrt_connect(s, arm, q_a, q_b, seed=3)
    assert len(p1) > 2
    assert all(np.array_equal(x, y) for x, y in zip(p1, p2)) and len(p1) == len(p2)
    assert edges_free(s, arm, p1)


def test_time_parameterize_hand_example(arm):
    a = np.array(arm.home)
    b = a.copy()
    b[0] += 0.1
    traj = time_parameterize([a, b], arm, 0.05)
    assert traj.duration == pytest.approx(0.1 / (0.05 * 2.175), rel=1e-12)
    assert traj.duration == pytest.approx(0.9195, abs=1e-4)


def test_time_parameterize_single_and_empty(arm):
    assert time_parameterize([arm.home], arm).duration == 0.0
    with pytest.raises(EmptyPath):
        time_parameterize([], arm)
    with pytest.raises(ValueError):
        time_parameterize([arm.home], arm, 0.0)


@given(st.integers(0, 10_000), st.floats(0.01, 1.0))
@settings(max_examples=50, deadline=None)
def test_velocity_contract(arm, seed, nu):
    rng = np.random.default_rng(seed)
    path = [arm.random_config(rng) for _ in range(5)]
    traj = time_parameterize(path, arm, nu)
    q = traj.as_array()
    t = np.array(traj.timestamps)
    assert np.all(np.diff(t) > 0)
    speed = np.abs(np.diff(q, axis=0)) / np.diff(t)[:, None]
    assert np.all(speed <= nu * arm.v_max + 1e-9)
    half = time_parameterize(path, arm, nu / 2)
    assert half.duration == pytest.approx(2 * traj.duration, rel=1e-12)


def test_cartesian_length_is_flange_polyline(arm):
    a = np.array(arm.home)
    b = a.copy()
    b[0] += 0.3
    traj = time_parameterize([a, b], arm)
    pa = forward_kinematics(arm, a).translation
    pb = forward_kinematics(arm, b).translation
    assert traj.cartesian_length == pytest.approx(np.linalg.norm(pb - pa))


def test_plan_pose_boresight_success(arm, scene):
    target = final_pose(scene.scan_anchor(), SphericalCoord(0, 0, 0.15), BracketOffset())
    out = plan_pose(scene, arm, arm.home, target)
    assert out.status is Status.SUCCESS and out.recovery_count == 0
    assert out.trajectory is not None and edges_free(scene, arm, out.trajectory.as_array())


def test_plan_pose_inside_dut_fails(arm, scene):
    dut = scene.get("dut")
    target = RigidTransform(scene.scan_anchor().rotation, dut.pose.translation)
    out = plan_pose(scene, arm, arm.home, target, max_recoveries=2, seed=1)
    assert out.status is Status.FAILURE
    assert out.recovery_count <= 2
    assert out.reason


@pytest.mark.parametrize("max_rec", [0, 1, 2])
def test_recovery_bound(arm, scene, max_rec):
    dut = scene.get("dut")
    target = RigidTransform(scene.scan_anchor().rotation, dut.pose.translation)
    out = plan_pose(scene, arm, arm.home, target, max_recoveries=max_rec, seed=0)
    assert out.status is Status.FAILURE and out.recovery_count == max_rec


def recovered_case(arm, scene):
    """Block the elbow of the branch IK finds from an unusual start; the home branch stays free."""
    target = final_pose(scene.scan_anchor(), SphericalCoord(90, 70, 0.15), BracketOffset())
    current = arm.random_config(np.random.default_rng(100))
    flange_target = target.compose(scene.bracket.mount.inverse())
    first = inverse_kinematics(arm, flange_target, current, rng=np.random.default_rng(7))
    elbow = link_frames(arm, np.array(first.q.q))[4, :3, 3]
    blocked = add_box(scene, "blocker", at(*elbow), (0.06, 0.06, 0.06))
    return blocked, current, target


def test_plan_pose_recovered_success(arm, scene):
    blocked, current, target = recovered_case(arm, scene)
    checker = blocked.checker(arm)
    assert not checker.collides(current)[0] and not checker.collides(np.array(arm.home))[0]
    out = plan_pose(blocked, arm, current, target, max_recoveries=2, seed=7)
    assert out.status is Status.RECOVERED and out.recovery_count == 1
    q = out.trajectory.as_array()
    # the executed path passes through home
    assert any(np.allclose(w, arm.home) for w in q)
    assert edges_free(blocked, arm, q)


def test_plan_pose_no_recovery_allowed(arm, scene):
    blocked, current, target = recovered_case(arm, scene)
    out = plan_pose(blocked, arm, current, target, max_recoveries=0, seed=7)
    assert out.status is Status.FAILURE and out.recovery_count == 0


def test_plan_pose_deterministic(arm, scene):
    target = final_pose(scene.scan_anchor(), SphericalCoord(140, 50, 0.05), BracketOffset())
    a = plan_pose(scene, arm, arm.home, target, seed=11)
    b = plan_pose(scene, arm, arm.home, target, seed=11)
    assert a.status == b.status
    assert np.array_equal(a.trajectory.as_array(), b.trajectory.as_array())


def test_benchmark_empty_grid(arm, scene):
    rep = benchmark_scan(scene, arm, None, seeds=(0,))
    assert rep.n_poses == 0 and "EmptyGrid" in rep.note


def test_benchmark_small_grid_repeatable(arm, scene):
    grid = generate_grid(90, 0, 40, 20, [0.08])
    a = benchmark_scan(scene, arm, grid, seeds=(0, 1))
    b = benchmark_scan(scene, arm, grid, seeds=(0, 1))
    assert a.success_rate == 100.0
    assert a.deterministic_view() == b.deterministic_view()
    assert a.to_text(timing=False) == b.to_text(timing=False)
    text = a.to_text()
    assert text.splitlines()[0].startswith("Algorithm\tCategory\tPlanning Time (s)\tSuccess Rate (%)\tTraj. Length (m)")
