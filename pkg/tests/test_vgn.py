import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse import lil_matrix
from scipy.sparse.csgraph import dijkstra

from dctnav.dualdist import ExactDualSolver
from dctnav.errors import UnreachableError
from dctnav.geometry import Pose2, rect_polytope
from dctnav.vgn import (
    CorrectionConfig,
    Navigator,
    PlannerParams,
    ReferencePath,
    StateHistory,
    apply_correction,
    astar_reference,
    build_grid,
    detect_stuck,
    exact_clearance,
    grid_astar,
    kinematics_step,
    reverse_control,
    rollout,
    solve_horizon,
    tracking_cost,
)
from dctnav.vgn.astar import FixedPointMemory
from dctnav.vgn.mpc import _Penalty, _query_duals, rollout_backward
from dctnav.vpp.partition import PartitionedScan

POLY = rect_polytope(0.322, 0.220)
ENGINE = ExactDualSolver().fit()


def wall_points(x, y0, y1, n=60):
    return np.c_[np.full(n, x), np.linspace(y0, y1, n)]


# -- grid search --------------------------------------------------------------
def dijkstra_cost(free, res, s, g):
    nx, ny = free.shape
    A = lil_matrix((nx * ny, nx * ny))
    for i in range(nx):
        for j in range(ny):
            if not free[i, j]:
                continue
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    a, b = i + di, j + dj
                    if (di or dj) and 0 <= a < nx and 0 <= b < ny and free[a, b]:
                        A[i * ny + j, a * ny + b] = res * math.hypot(di, dj)
    d = dijkstra(A.tocsr(), indices=s[0] * ny + s[1])
    return d[g[0] * ny + g[1]]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.4))
def test_astar_cost_matches_dijkstra(seed, density):
    rng = np.random.default_rng(seed)
    blocked = rng.random((12, 9)) < density
    blocked[0, 0] = blocked[11, 8] = False
    from dctnav.vgn.astar import OccupancyGrid
    grid = OccupancyGrid((0, 0, 1.2, 0.9), 0.1, blocked, np.zeros_like(blocked, dtype=float))
    want = dijkstra_cost(~blocked, 0.1, (0, 0), (11, 8))
    got = grid_astar(grid, (0, 0), (11, 8))
    if math.isinf(want):
        assert got is None
    else:
        cells, cost = got
        assert cost == pytest.approx(want, abs=1e-9)
        steps = np.diff(np.array(cells), axis=0)
        assert np.all(np.abs(steps).max(axis=1) == 1)
        assert not any(blocked[c] for c in cells)


def test_reference_path_avoids_inflated_wall_and_detects_closure():
    bounds = (0, 0, 4, 3)
    gap_wall = np.vstack([wall_points(2.0, 0.0, 1.8), wall_points(2.0, 2.6, 3.0, 10)])
    ref = astar_reference(gap_wall, bounds, 0.05, Pose2(0.5, 1.5, 0), Pose2(3.5, 1.5, 0), 0.16)
    assert np.allclose(ref.xy[0], [0.5, 1.5]) and np.allclose(ref.xy[-1], [3.5, 1.5])
    grid = build_grid(gap_wall, bounds, 0.05, 0.16)
    for p in ref.xy[1:-1]:
        assert not grid.blocked[grid.cell_of(p)]
    closed = wall_points(2.0, 0.0, 3.0, 120)
    with pytest.raises(UnreachableError):
        astar_reference(closed, bounds, 0.05, Pose2(0.5, 1.5, 0), Pose2(3.5, 1.5, 0), 0.16)


def test_reference_path_projection():
    ref = ReferencePath.from_points([[0, 0], [1, 0], [1, 1]])
    assert ref.length == 2.0
    assert ref.project([0.5, 0.3]) == pytest.approx(0.5)
    assert np.allclose(ref.point_at(1.5), [1.0, 0.5])


def test_fixed_point_memory_marks_and_clears():
    mem = FixedPointMemory((0, 0, 4, 4), 0.05)
    mem.update([0.5, 2.0], [[3.0, 2.0]])
    assert len(mem.points()) == 1
    # a later beam to a farther return passes through the cell: it is freed
    mem.update([0.5, 2.0], [[3.81, 2.0]])
    assert np.allclose(mem.points(), [[3.825, 2.025]])
    mem.update([0.5, 2.0], [], [[3.81, 2.0]])
    assert len(mem.points()) == 0


# -- dynamics -------------------------------------------------------------------
@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-0.3, 1.0), st.floats(-1.5, 1.5)), min_size=1, max_size=20),
       st.floats(-3, 3))
def test_rollout_matches_stepwise_euler(U, th0):
    s = Pose2(0.3, -0.2, th0)
    S = rollout(s, np.array(U), 0.1)
    for k, u in enumerate(U):
        s = kinematics_step(s, u, 0.1)
        assert np.allclose(S[k + 1], s.as_array(), atol=1e-12)


def test_rollout_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    U = rng.uniform([-0.3, -1.5], [1.0, 1.5], (8, 2))
    W = rng.normal(size=(8, 3))
    s0 = np.array([0.1, 0.2, 0.3])

    def f(U):
        return float(np.sum(rollout(s0, U, 0.1)[1:] * W))
    g = rollout_backward(rollout(s0, U, 0.1), U, 0.1, W)
    fd = np.zeros_like(U)
    for idx in np.ndindex(U.shape):
        e = np.zeros_like(U)
        e[idx] = 1e-6
        fd[idx] = (f(U + e) - f(U - e)) / 2e-6
    assert np.allclose(g, fd, atol=1e-8)


def test_penalty_gradient_matches_finite_differences():
    params = PlannerParams(horizon=6)
    pts = np.vstack([wall_points(0.5, -1, 1, 40), wall_points(-0.4, -1, 1, 40)])
    from scipy.spatial import cKDTree
    U = np.tile([0.5, 0.4], (6, 1))
    S = rollout(np.zeros(3), U, 0.1)
    pen = _Penalty(POLY.G, POLY.g, *_query_duals(S, cKDTree(pts), pts, ENGINE, params), 0.3)
    _, grad = pen(S, 10.0)
    assert np.abs(grad).max() > 0
    for idx in np.ndindex(S.shape):
        if idx[0] == 0:
            continue
        e = np.zeros_like(S)
        e[idx] = 1e-7
        fd = (pen(S + e, 10.0)[0] - pen(S - e, 10.0)[0]) / 2e-7
        assert grad[idx] == pytest.approx(fd, rel=1e-5, abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-3, 3), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5),
       st.floats(-0.6, 0.6))
def test_fixed_duals_lower_bound_distance_at_moved_pose(px, py, th, dx, dy, dth):
    """Duals frozen at one pose never overstate the distance at another."""
    pt = np.array([[px, py]])
    if exact_clearance(POLY, Pose2(0, 0, 0), pt) < 1e-3:
        return
    S0 = np.zeros((2, 3))
    S0[1] = [0, 0, th]
    from scipy.spatial import cKDTree
    params = PlannerParams(horizon=1, active_radius=10.0)
    pen = _Penalty(POLY.G, POLY.g, *_query_duals(S0, cKDTree(pt), pt, ENGINE, params), 0.0)
    S1 = S0.copy()
    S1[1] = [dx, dy, th + dth]
    bound = float(pen.values(S1)[0])
    assert bound <= exact_clearance(POLY, Pose2(dx, dy, th + dth), pt) + 1e-9


def test_tracking_cost_example():
    states = [Pose2(0, 0, 0), Pose2(1, 0, 0), Pose2(2, 1, 0)]
    assert tracking_cost(states, [[1, 1], [2, 3]]) == pytest.approx(1 + 4)


# -- horizon solve --------------------------------------------------------------
def test_free_space_drives_at_full_speed():
    ref = ReferencePath.from_points([[0, 0], [5, 0]])
    plan = solve_horizon(Pose2(0, 0, 0), np.zeros((0, 2)), ref, PlannerParams(), ENGINE)
    assert plan.converged
    assert np.allclose(plan.controls[:, 0], 1.0, atol=0.05)
    assert np.abs(plan.states[:, 1]).max() < 1e-3
    assert np.all(np.isinf(plan.predicted_min_distances))


def test_plan_keeps_clearance_to_wall_across_the_reference():
    params = PlannerParams()
    wall = wall_points(1.0, -1.0, 1.0, 80)
    ref = ReferencePath.from_points([[0, 0], [3, 0]])
    plan = solve_horizon(Pose2(0, 0, 0), wall, ref, params, ENGINE)
    clear = [exact_clearance(POLY, p, wall) for p in plan.poses()[1:]]
    assert min(clear) >= params.d_min - 5e-3
    assert np.all(plan.predicted_min_distances <= np.array(clear) + 1e-9)
    assert plan.iterations >= 1 and len(plan.cost_history) == plan.iterations


def test_retreat_when_already_too_close():
    wall = wall_points(0.19, -1.0, 1.0, 80)
    ref = ReferencePath.from_points([[0, 0], [3, 0]])
    plan = solve_horizon(Pose2(0, 0, 0), wall, ref, PlannerParams(), ENGINE)
    assert plan.retreat and np.all(plan.controls[:, 0] < 0)


# -- stuck detection and recovery -----------------------------------------------
def history_of(moves, v=0.5, dt=0.1):
    h = StateHistory(64)
    x = 0.0
    h.push(0.0, Pose2(x, 0, 0), v)
    for k, dx in enumerate(moves, start=1):
        x += dx
        h.push(k * dt, Pose2(x, 0, 0), v)
    return h


def test_stuck_boundary():
    cfg = CorrectionConfig()
    tau = cfg.tau_stuck
    assert detect_stuck(history_of([0.0] * tau), 0.5, cfg)
    assert not detect_stuck(history_of([0.0] * (tau - 1)), 0.5, cfg)
    assert detect_stuck(history_of([cfg.d_stuck * 0.999] * tau), 0.5, cfg)
    assert not detect_stuck(history_of([cfg.d_stuck * 1.01] + [0.0] * (tau - 1)), 0.5, cfg)
    assert not detect_stuck(history_of([0.0] * tau), cfg.v_min_stuck * 0.99, cfg)
    with pytest.raises(ValueError):
        history_of([0.0]).push(0.0, Pose2(0, 0, 0), 0.5)


def test_correction_relabels_the_touching_cluster():
    near = np.c_[np.full(10, 0.17), np.linspace(-0.1, 0.1, 10), np.full(10, 0.2)]
    far = np.c_[np.full(10, 2.0), np.linspace(-0.1, 0.1, 10), np.full(10, 0.2)]
    wall = np.c_[np.full(5, -1.0), np.linspace(-0.1, 0.1, 5), np.full(5, 0.2)]
    pts = np.vstack([near, far, wall])
    labels = np.r_[np.ones(20, bool), np.zeros(5, bool)]
    ids = np.r_[np.full(10, 7), np.full(10, 8), np.full(5, -1)]
    ps = PartitionedScan(pts, labels, 0.0, ids)
    h = history_of([0.05] * 25)
    deny = set()
    pose = Pose2(0.0, 0.0, 0.0)
    res = apply_correction(ps, h, pose, POLY, CorrectionConfig(), deny=deny)
    assert res.failed_index.tolist() == list(range(10))
    assert res.labels.tolist() == [False] * 10 + [True] * 10 + [False] * 5
    assert res.deny_id == 7 and deny == {7}
    assert len(res.reverse_path) == 21 and np.allclose(res.reverse_path[0], h.last(1)[0].pose.position)
    far_pose = Pose2(-0.5, 0, 0)
    assert len(apply_correction(ps, h, far_pose, POLY, CorrectionConfig()).failed_index) == 0


@settings(max_examples=50, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-3, 3))
def test_reverse_control_stays_in_range(tx, ty, th):
    cfg = CorrectionConfig()
    v, psi = reverse_control(Pose2(0, 0, th), [tx, ty], cfg, 0.1, 1.5)
    assert -cfg.v_rev <= v <= 0.0 and abs(psi) <= 1.5


def test_reverse_straight_back():
    v, psi = reverse_control(Pose2(1, 0, 0), [0, 0], CorrectionConfig(), 0.1, 1.5)
    assert v == -0.3 and psi == 0.0


# -- navigator ----------------------------------------------------------------------
def empty_partition(pts=None):
    pts = np.zeros((0, 3)) if pts is None else pts
    return PartitionedScan(pts, np.zeros(len(pts), bool), 0.0, np.full(len(pts), -1))


def test_navigator_reaches_goal_in_free_space():
    nav = Navigator(Pose2(2.0, 0.5, 0), (-1, -1, 3, 2), ENGINE)
    pose = Pose2(0, 0, 0)
    for k in range(100):
        dec = nav.act(0.1 * k, pose, empty_partition())
        if dec.terminal:
            break
        pose = kinematics_step(pose, dec.control, 0.1)
    assert dec.terminal == "success" and k < 40


def test_navigator_declares_unreachable_after_grace():
    wall = np.c_[np.full(200, 1.0), np.linspace(-1, 2, 200), np.full(200, 0.2)]
    nav = Navigator(Pose2(2.0, 0.5, 0), (-1, -1, 3, 2), ENGINE)
    pose = Pose2(0, 0.5, 0)
    for k in range(60):
        dec = nav.act(0.1 * k, pose, empty_partition(wall))
        if dec.terminal:
            break
    assert dec.terminal == "unreachable" and k == 30


def test_safety_filter_never_steps_into_the_margin():
    wall = wall_points(0.27, -1, 1, 80)
    nav = Navigator(Pose2(2.0, 0, 0), (-1, -1, 3, 2), ENGINE)
    pose = Pose2(0, 0, 0)
    u = nav._safe(pose, (1.0, 0.0), wall)
    nxt = kinematics_step(pose, u, 0.1)
    before = exact_clearance(POLY, pose, wall)
    after = exact_clearance(POLY, nxt, wall)
    assert after >= min(before, nav.params.d_min) - 1e-12
    assert u[0] < 1.0


# -- further examples ------------------------------------------------------------
def rk4_unicycle(s, u, T, n):
    """Fine-step classical Runge-Kutta on the continuous unicycle."""
    def f(x):
        return np.array([u[0] * math.cos(x[2]), u[0] * math.sin(x[2]), u[1]])
    x, h = np.array(s, dtype=float), T / n
    for _ in range(n):
        k1 = f(x)
        k2 = f(x + h / 2 * k1)
        k3 = f(x + h / 2 * k2)
        k4 = f(x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def test_kinematics_examples_and_integration_oracle():
    s = Pose2(0.3, 0.2, 0.1)
    assert kinematics_step(s, (0, 0), 0.1) == s
    assert kinematics_step(Pose2(0, 0, 0), (1, 0), 0.5) == Pose2(0.5, 0, 0)
    pose = Pose2(0, 0, 0)
    for _ in range(10):
        pose = kinematics_step(pose, (1, 1), 0.1)
    ref = rk4_unicycle([0, 0, 0], (1, 1), 1.0, 1000)
    assert np.linalg.norm(pose.position - ref[:2]) <= 0.02


def test_tracking_cost_against_matched_waypoints():
    from dctnav.vgn.mpc import reference_targets
    params = PlannerParams(horizon=5)
    ref = ReferencePath.from_points([[0, 0], [4, 0]])
    targets = reference_targets(ref, Pose2(0, 0, 0), params)
    assert np.allclose(targets, np.c_[0.1 * np.arange(1, 6), np.zeros(5)])
    on = [Pose2(0, 0, 0)] + [Pose2(x, y, 0) for x, y in targets]
    assert tracking_cost(on, targets) == 0.0
    off = list(on)
    off[3] = Pose2(targets[2][0], 0.1, 0)
    assert tracking_cost(off, targets) == pytest.approx(0.01)
    rng = np.random.default_rng(1)
    S = rng.normal(size=(6, 3))
    assert tracking_cost(S, targets) == pytest.approx(sum(
        (S[h + 1, 0] - targets[h][0]) ** 2 + (S[h + 1, 1] - targets[h][1]) ** 2 for h in range(5)))


def test_point_on_the_reference_is_avoided():
    from dctnav.dualdist import closed_form_rect_distance
    params = PlannerParams()
    pt = np.array([[1.0, 0.0]])
    ref = ReferencePath.from_points([[0, 0], [3, 0]])
    pose = Pose2(0, 0, 0)
    plan = solve_horizon(pose, pt, ref, params, ENGINE)
    for s in plan.poses():
        assert closed_form_rect_distance(POLY, s, pt[0])[0] >= params.d_min - 1e-3


def test_plan_invariants_and_warm_start_agreement():
    params = PlannerParams()
    wall = np.vstack([wall_points(1.2, 0.25, 1.5, 40), wall_points(1.2, -1.5, -0.35, 40)])
    ref = ReferencePath.from_points([[0, 0], [1.2, -0.05], [3, 0]])
    pose = Pose2(0.0, 0.0, 0.05)
    cold = solve_horizon(pose, wall, ref, params, ENGINE)
    assert np.allclose(cold.states[0], pose.as_array())
    lo, hi = np.array(params.u_min), np.array(params.u_max)
    assert np.all(cold.controls >= lo) and np.all(cold.controls <= hi)
    assert np.abs(rollout(pose, cold.controls, params.dt) - cold.states).max() <= 1e-9
    warm = solve_horizon(pose, wall, ref, params, ENGINE, warm_start=cold.controls)
    assert np.abs(warm.states[:, :2] - cold.states[:, :2]).max() <= params.convergence_tol


def test_inner_solve_never_increases_the_penalised_objective():
    from scipy.spatial import cKDTree
    from dctnav.vgn.mpc import _objective, _pgd, pursuit_guess, reference_targets
    params = PlannerParams()
    wall = wall_points(0.9, -0.4, 0.4, 40)
    ref = ReferencePath.from_points([[0, 0], [3, 0]])
    s0 = np.zeros(3)
    targets = reference_targets(ref, Pose2(0, 0, 0), params)
    U = pursuit_guess(Pose2(0, 0, 0), targets, params)
    S = rollout(s0, U, params.dt)
    pen = _Penalty(POLY.G, POLY.g, *_query_duals(S, cKDTree(wall), wall, ENGINE, params), 0.05)
    lo, hi = np.array(params.u_min), np.array(params.u_max)
    for w in params.penalty_weights:
        before = _objective(U, s0, targets, pen, w, params)[0]
        U, after = _pgd(U, s0, targets, pen, w, params, lo, hi)
        assert after <= before + 1e-12


def test_moving_robot_is_not_stuck():
    cfg = CorrectionConfig()
    assert not detect_stuck(history_of([0.05] * 15), 0.5, cfg)


def test_empty_failed_set_leaves_labels_unchanged():
    pts = np.c_[np.full(10, 2.0), np.linspace(-0.1, 0.1, 10), np.full(10, 0.2)]
    ps = PartitionedScan(pts, np.ones(10, bool), 0.0, np.full(10, 4))
    h = history_of([0.0] * 25)
    res = apply_correction(ps, h, Pose2(0, 0, 0), POLY, CorrectionConfig())
    assert np.array_equal(res.labels, ps.labels) and res.deny_id is None and len(res.reverse_path) == 21


def test_relabelled_box_reroutes_the_reference():
    bounds = (0, 0, 8, 4)
    walls = np.vstack([np.c_[np.linspace(0, 8, 160), np.zeros(160)], np.c_[np.linspace(0, 8, 160), np.full(160, 4.0)]])
    box_pts = np.c_[np.full(12, 3.8), np.linspace(1.7, 2.3, 12)]
    start, goal = Pose2(3.0, 2.0, 0), Pose2(7.0, 2.0, 0)
    before = astar_reference(walls, bounds, 0.05, start, goal, 0.16)
    assert np.min(np.linalg.norm(before.xy[:, None] - box_pts[None], axis=-1)) < 0.05
    after = astar_reference(np.vstack([walls, box_pts]), bounds, 0.05, start, goal, 0.16)
    grid = build_grid(np.vstack([walls, box_pts]), bounds, 0.05, 0.16)
    assert all(not grid.blocked[c] for c in after.cells[1:])
    assert np.min(np.linalg.norm(after.xy[:, None] - box_pts[None], axis=-1)) > 0.16


def test_forward_integration_error_shrinks_linearly_with_step():
    ref = rk4_unicycle([0, 0, 0], (1, 1), 1.0, 1000)
    errs = []
    for n in (10, 100):
        pose = Pose2(0, 0, 0)
        for _ in range(n):
            pose = kinematics_step(pose, (1, 1), 1.0 / n)
        errs.append(np.linalg.norm(pose.position - ref[:2]))
    assert errs[1] <= 0.02 and 8.0 <= errs[0] / errs[1] <= 12.0
