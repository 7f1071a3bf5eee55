import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dctnav.errors import ValidationError
from dctnav.geometry import Pose2, rect_polytope
from dctnav.sim import (
    EpisodeConfig,
    EpisodeTrace,
    LidarModel,
    WorldScenario,
    box,
    by_name,
    compute_metrics,
    fxmy,
    load_scenario,
    make_camera,
    raycast_scan,
    run_episode,
    save_scenario,
    scenario_from_dict,
    step_world,
    synth_detections,
)
from dctnav.sim.episode import Metrics
from dctnav.sim.sensors import beam_angles
from dctnav.vgn import CorrectionConfig, StateHistory, detect_stuck

ROBOT = rect_polytope(0.322, 0.220)
NOISELESS = LidarModel(beam_count=360, range_noise_sigma=0.0)


def world_of(obstacles, start=Pose2(0, 0, 0), goal=Pose2(1, 0, 0), bounds=(-10, -10, 10, 10), lidar=NOISELESS):
    return WorldScenario(bounds, list(obstacles), start, goal, lidar=lidar)


# -- lidar -------------------------------------------------------------------
def brute_ray(o, d, polygons, max_range):
    """Nearest intersection by looping over every edge (independent of the vectorised caster)."""
    best = math.inf
    for poly in polygons:
        for i in range(len(poly)):
            a, b = poly[i], poly[(i + 1) % len(poly)]
            e = b - a
            M = np.array([[d[0], -e[0]], [d[1], -e[1]]])
            if abs(np.linalg.det(M)) < 1e-15:
                continue
            t, s = np.linalg.solve(M, a - o)
            if t > 0 and 0 <= s <= 1 and t <= max_range:
                best = min(best, t)
    return best


def test_empty_world_gives_empty_scan():
    scan = raycast_scan(world_of([]), Pose2(0, 0, 0), NOISELESS)
    assert len(scan) == 0


def test_wall_two_metres_ahead():
    w = world_of([box(1, 2.5, 0.0, 1.0, 4.0, False, cls="wall")])
    scan = raycast_scan(w, Pose2(0, 0, 0), LidarModel(beam_count=360))
    k = int(np.argmin(np.abs(scan.angles)))
    assert scan.angles[k] == 0.0
    assert scan.ranges[k] == 2.0
    assert scan.points[k].tolist() == [2.0, 0.0, 0.2]


def test_square_room_against_segment_oracle():
    walls = [box(1, 0, 3.05, 6.2, 0.1, False, cls="wall"), box(2, 0, -3.05, 6.2, 0.1, False, cls="wall"),
             box(3, 3.05, 0, 0.1, 6.0, False, cls="wall"), box(4, -3.05, 0, 0.1, 6.0, False, cls="wall")]
    w = world_of(walls)
    pose = Pose2(0.7, -1.1, 0.3)
    scan = raycast_scan(w, pose, NOISELESS)
    assert len(scan) == 360
    for ang, r in zip(scan.angles, scan.ranges):
        d = np.array([math.cos(ang), math.sin(ang)])
        assert abs(r - brute_ray(pose.position, d, [o.polygon for o in walls], 8.0)) <= 1e-9


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(-4, 4), st.floats(-4, 4), st.floats(0.1, 1.5), st.floats(0.1, 1.5),
                          st.floats(-3, 3)), min_size=1, max_size=5),
       st.floats(-math.pi, math.pi))
def test_raycast_soundness(boxes, heading):
    obs = [box(i, x, y, a, b, False, yaw=yaw) for i, (x, y, a, b, yaw) in enumerate(boxes)]
    obs = [o for o in obs if np.min(np.linalg.norm(o.polygon, axis=1)) > 1.2]
    if not obs:
        return
    w = world_of(obs, lidar=LidarModel(beam_count=90))
    pose = Pose2(0.0, 0.0, heading)
    scan = raycast_scan(w, pose, w.lidar)
    polys = [o.polygon for o in obs]
    for p, ang, r, oid in zip(scan.points, scan.angles, scan.ranges, scan.obstacle_ids):
        d = np.array([math.cos(ang), math.sin(ang)])
        assert abs(r - brute_ray(pose.position, d, polys, 8.0)) <= 1e-9
        poly = w.obstacle(int(oid)).polygon
        # the return lies on the boundary of the obstacle it reports
        e0, e1 = poly, np.roll(poly, -1, axis=0)
        ev = e1 - e0
        t = np.clip(np.einsum("ij,ij->i", p[:2] - e0, ev) / np.einsum("ij,ij->i", ev, ev), 0, 1)
        assert np.min(np.linalg.norm(e0 + t[:, None] * ev - p[:2], axis=1)) <= 1e-9


def test_scan_labels_follow_truth_and_noise_is_seeded():
    w = by_name("case1", 0)
    scan = raycast_scan(w, w.start, w.lidar, np.random.default_rng(5))
    assert np.array_equal(scan.movable_truth, scan.obstacle_ids == 1)
    again = raycast_scan(w, w.start, w.lidar, np.random.default_rng(5))
    assert np.array_equal(scan.points, again.points)
    assert len(beam_angles(w.lidar)) == 720


# -- camera detections ---------------------------------------------------------
def prism_silhouette(camera, pose, ob):
    """Pixels whose centre ray enters the extruded prism, tested per pixel against its faces."""
    T = camera.camera_from_world(pose)
    Rwc = T[:3, :3].T
    C = -Rwc @ T[:3, 3]
    H, W = camera.image_height, camera.image_width
    vv, uu = np.mgrid[0:H, 0:W]
    pix = np.stack([uu + 0.5, vv + 0.5, np.ones((H, W))], axis=-1).reshape(-1, 3)
    d = (pix @ np.linalg.inv(camera.K).T) @ Rwc.T
    lo, hi = np.zeros(len(d)), np.full(len(d), np.inf)
    poly = ob.polygon
    planes = []
    for i in range(len(poly)):
        e = poly[(i + 1) % len(poly)] - poly[i]
        n = np.array([e[1], -e[0], 0.0])
        planes.append((n, n[:2] @ poly[i]))
    planes += [(np.array([0, 0, 1.0]), ob.height), (np.array([0, 0, -1.0]), 0.0)]
    for n, b in planes:
        den = d @ n
        num = b - n @ C
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / den
        lo = np.where(den < 0, np.maximum(lo, t), lo)
        hi = np.where(den > 0, np.minimum(hi, t), hi)
        lo = np.where((den == 0) & (num < 0), np.inf, lo)
    return (lo <= hi).reshape(H, W)


def test_box_behind_robot_is_absent():
    w = world_of([box(1, -2.0, 0.0, 0.4, 0.4, True, 0.5)])
    assert len(synth_detections(w, Pose2(0, 0, 0), make_camera(w))) == 0


def test_centred_box_matches_silhouette_oracle():
    ob = box(1, 2.0, 0.0, 0.4, 0.4, True, 0.5)
    w = world_of([ob])
    cam = make_camera(w)
    (m,) = synth_detections(w, Pose2(0, 0, 0), cam)
    x, y, bw, bh = m.bbox
    assert abs((x + bw / 2) - cam.image_width / 2) <= 1.0
    assert m.caption == "box" and m.obj_id == 1
    want = prism_silhouette(cam, Pose2(0, 0, 0), ob)
    assert np.array_equal(m.bitmap, want)


def test_two_boxes_give_disjoint_masks_and_occlusion_hides():
    a, b = box(1, 2.0, 0.6, 0.3, 0.3, True, 0.5), box(2, 2.5, -0.6, 0.3, 0.3, False, cls="shelf")
    w = world_of([a, b])
    masks = list(synth_detections(w, Pose2(0, 0, 0), make_camera(w)))
    assert sorted(m.obj_id for m in masks) == [1, 2]
    assert not (masks[0].bitmap & masks[1].bitmap).any()
    hidden = world_of([box(1, 3.0, 0.0, 0.2, 0.2, True, 0.5), box(2, 1.5, 0.0, 0.1, 3.0, False, cls="wall")])
    assert [m.obj_id for m in synth_detections(hidden, Pose2(0, 0, 0), make_camera(hidden))] == [2]


# -- contact -------------------------------------------------------------------
def oracle_mtv(a, b, n=7200):
    """Smallest overlap over a dense set of directions, refined locally (no SAT edge logic)."""
    def overlap(th):
        u = np.array([math.cos(th), math.sin(th)])
        pa, pb = a @ u, b @ u
        return min(pa.max(), pb.max()) - max(pa.min(), pb.min())
    ths = np.linspace(0, math.pi, n, endpoint=False)
    vals = np.array([overlap(t) for t in ths])
    k = int(np.argmin(vals))
    lo, hi = ths[k] - math.pi / n, ths[k] + math.pi / n
    for _ in range(60):
        m1, m2 = lo + (hi - lo) / 3, hi - (hi - lo) / 3
        if overlap(m1) < overlap(m2):
            hi = m2
        else:
            lo = m1
    th = 0.5 * (lo + hi)
    u = np.array([math.cos(th), math.sin(th)])
    if (b.mean(0) - a.mean(0)) @ u < 0:
        u = -u
    return u * overlap(th)


def test_free_motion():
    w = world_of([box(1, 3.0, 0.0, 0.4, 0.4, True, 0.5)])
    res = step_world(w, ROBOT, Pose2(0, 0, 0), Pose2(0.1, 0, 0))
    assert res.pose == Pose2(0.1, 0, 0) and res.contacts == [] and res.displacements == {}


@pytest.mark.parametrize("dy,yaw", [(0.0, 0.0), (0.05, 0.0), (-0.08, 0.1), (0.02, -0.2)])
def test_light_box_displaced_by_minimum_translation(dy, yaw):
    ob = box(1, 0.45, dy, 0.3, 0.3, True, 0.5, yaw=yaw)
    w = world_of([ob])
    before = ob.polygon.copy()
    nxt = Pose2(0.2, 0.0, 0.0)
    res = step_world(w, ROBOT, Pose2(0.1, 0.0, 0.0), nxt)
    assert res.pose == nxt
    assert res.contacts == [{"id": 1, "yielded": True}]
    want = oracle_mtv(ROBOT.world_vertices(nxt), before)
    assert np.allclose(w.obstacle(1).polygon - before, want, atol=1e-6)


def test_shelf_blocks_and_stuck_triggers():
    w = world_of([box(1, 0.6, 0.0, 0.3, 1.0, False, cls="shelf")])
    cfg = CorrectionConfig()
    hist = StateHistory(40)
    pose, first_blocked = Pose2(0.0, 0.0, 0.0), None
    for k in range(30):
        hist.push(0.1 * k, pose, 1.0)
        if detect_stuck(hist, 1.0, cfg):
            break
        res = step_world(w, ROBOT, pose, Pose2(pose.x + 0.1, 0, 0))
        if res.blocked and first_blocked is None:
            first_blocked = k + 1  # index of the first pose held in contact
        assert res.pose.x - pose.x < 0.1 + 1e-12
        pose = res.pose
    assert first_blocked is not None
    assert k - first_blocked <= cfg.tau_stuck
    assert np.allclose(w.obstacle(1).polygon[0], [0.45, -0.5], atol=1e-12)
    gap = 0.45 - (pose.x + 0.161)
    assert 1e-4 <= gap < 1e-3


def test_curtain_is_passable():
    w = world_of([box(1, 0.4, 0.0, 0.05, 1.0, False, cls="curtain")])
    res = step_world(w, ROBOT, Pose2(0.1, 0, 0), Pose2(0.2, 0, 0))
    assert res.pose == Pose2(0.2, 0, 0) and not res.blocked
    assert res.displacements == {}


def test_chain_into_wall_blocks_robot():
    w = world_of([box(1, 0.4, 0.0, 0.3, 0.3, True, 0.5), box(2, 0.65, 0.0, 0.2, 1.0, False, cls="wall")])
    res = step_world(w, ROBOT, Pose2(0.08, 0, 0), Pose2(0.2, 0, 0))
    assert res.blocked and res.pose.x < 0.2
    assert {c["id"] for c in res.contacts if not c["yielded"]} == {1}
    assert np.allclose(w.obstacle(2).polygon[0], [0.55, -0.5], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.15, 0.15), st.floats(-0.5, 0.5), st.floats(0.01, 0.1), st.floats(-0.3, 0.3))
def test_push_never_outruns_the_robot(dy, yaw, step, heading):
    ob = box(1, 0.36, dy, 0.3, 0.3, True, 0.5, yaw=yaw)
    w = world_of([ob])
    p0 = Pose2(0.0, 0.0, heading)
    if step_world(world_of([box(1, 0.36, dy, 0.3, 0.3, True, 0.5, yaw=yaw)]), ROBOT, p0, p0).contacts:
        return  # start already overlapping
    p1 = Pose2(step * math.cos(heading), step * math.sin(heading), heading)
    res = step_world(w, ROBOT, p0, p1)
    robot_step = np.linalg.norm(ROBOT.world_vertices(res.pose) - ROBOT.world_vertices(p0), axis=1).max()
    for d in res.displacements.values():
        assert np.linalg.norm(d) <= robot_step + 1e-9


# -- scenarios -------------------------------------------------------------------
def test_scenario_round_trip(tmp_path):
    w = by_name("case2", 4)
    save_scenario(w, tmp_path / "s.json")
    back = load_scenario(tmp_path / "s.json")
    assert back.to_dict() == w.to_dict()


def test_scenario_rejects_unknown_fields_and_bad_geometry():
    d = by_name("case1", 0).to_dict()
    d["extra"] = 1
    with pytest.raises(ValidationError, match="extra"):
        scenario_from_dict(d)
    d = by_name("case1", 0).to_dict()
    d["obstacles"][0]["colour"] = "red"
    with pytest.raises(ValidationError):
        scenario_from_dict(d)
    d = by_name("case1", 0).to_dict()
    d["obstacles"][-1]["vertices"] = [[0, 0], [1, 0], [0.5, 0.1], [1, 1], [0, 1]]
    with pytest.raises(ValidationError):
        scenario_from_dict(d)
    with pytest.raises(ValidationError):
        fxmy(2, 1)
    with pytest.raises(ValidationError):
        by_name("nowhere")


@pytest.mark.parametrize("seed", range(5))
def test_fxmy_movable_sets_are_nested(seed):
    sets = [{o.id for o in fxmy(4 - m, m, seed).obstacles if o.movable} for m in range(5)]
    assert [len(s) for s in sets] == [0, 1, 2, 3, 4]
    assert all(a <= b for a, b in zip(sets, sets[1:]))


@pytest.mark.parametrize("name", ["case1", "case2", "case3", "heavy", "F4M0", "F1M3"])
def test_library_keeps_fixed_and_movable_apart(name):
    from dctnav.sim.physics import polygon_distance
    w = by_name(name, 0)
    for a in w.obstacles:
        for b in w.obstacles:
            if a.movable and not b.movable:
                assert polygon_distance(a.polygon, b.polygon) > 0.1


# -- episodes --------------------------------------------------------------------
def test_start_overlapping_obstacle_is_rejected():
    w = by_name("case1", 0)
    w.start = Pose2(4.0, 2.0, 0.0)
    with pytest.raises(ValidationError, match="overlaps"):
        run_episode(w)


def test_goal_equal_to_start_succeeds_immediately():
    w = by_name("case1", 0)
    w.goal = w.start
    tr = run_episode(w)
    m = compute_metrics(tr)
    assert tr.status == "success" and len(tr) == 1
    assert m.success and m.nav_distance == 0.0


def test_lockstep_traces_are_byte_identical(tmp_path):
    a = run_episode(by_name("case1", 3), seed=3)
    b = run_episode(by_name("case1", 3), seed=3)
    assert a.to_jsonl() == b.to_jsonl()
    a.write(tmp_path / "a.jsonl")
    back = EpisodeTrace.read(tmp_path / "a.jsonl")
    assert back.to_jsonl() == a.to_jsonl() and back.status == "success"


def test_trace_structure_and_fixed_obstacles_stay_put():
    tr = run_episode(by_name("case1", 1), seed=1)
    t = np.array([r["t"] for r in tr.records])
    assert np.allclose(np.diff(t), 0.1, atol=1e-9) and np.all(np.diff(t) > 0)
    assert sum("terminal" in r for r in tr.records) == 1 and "terminal" in tr.records[-1]
    fixed = {str(o.id) for o in by_name("case1", 1).obstacles if not o.movable}
    assert not any(fixed & set(r.get("pushed", {})) for r in tr.records)
    assert any("1" in r.get("pushed", {}) for r in tr.records)
    for r in tr.records:
        assert -0.3 <= r["control"][0] <= 1.0 and -1.5 <= r["control"][1] <= 1.5


def test_short_timeout():
    tr = run_episode(by_name("case1", 0), cfg=EpisodeConfig(timeout=1.0))
    assert tr.status == "timeout" and len(tr) == 11
    assert not compute_metrics(tr).success


def test_decoupled_mode_reaches_goal():
    tr = run_episode(by_name("case1", 0), cfg=EpisodeConfig(mode="decoupled"))
    assert tr.status == "success"


def test_episode_config_validation():
    with pytest.raises(ValidationError):
        EpisodeConfig(mode="async")
    with pytest.raises(ValidationError):
        EpisodeConfig(timeout=0)


# -- metrics -------------------------------------------------------------------
def synthetic_trace(poses, status="success", dt=0.1):
    recs = [{"t": k * dt, "pose": list(p), "control": [0.0, 0.0]} for k, p in enumerate(poses)]
    recs[-1]["terminal"] = status
    return EpisodeTrace(recs, status)


def test_uniform_drive_metrics():
    poses = [(0.1 * k, 0.0, 0.0) for k in range(51)]
    m = compute_metrics(synthetic_trace(poses))
    assert m.nav_time == pytest.approx(5.0) and m.nav_distance == pytest.approx(5.0)
    assert m.avg_speed == pytest.approx(1.0)
    f = compute_metrics(synthetic_trace(poses[:20], "timeout"))
    assert not f.success and f.nav_distance == pytest.approx(1.9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-3, 3)), min_size=1, max_size=40))
def test_speed_times_time_is_distance(poses):
    m = compute_metrics(synthetic_trace(poses))
    assert abs(m.avg_speed * m.nav_time - m.nav_distance) <= 1e-9
    assert isinstance(m, Metrics) and json.dumps(m.to_dict())
