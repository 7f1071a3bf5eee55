"""Raycast lidar and geometric instance rendering for the grounding detector."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import DEPTH_EPS, CameraModel, Pose2
from ..vpp.masks import Mask
from ..vpp.memory import CandidateSet
from .world import LidarModel, WorldScenario


@dataclass(frozen=True, eq=False)
class LidarScan:
    """World-frame returns (n, 3) with hidden per-point truth."""

    points: np.ndarray
    ranges: np.ndarray
    angles: np.ndarray
    obstacle_ids: np.ndarray
    movable_truth: np.ndarray

    def __len__(self):
        return len(self.points)


def _edges(world: WorldScenario):
    starts, ends, owner = [], [], []
    for o in world.obstacles:
        starts.append(o.polygon)
        ends.append(np.roll(o.polygon, -1, axis=0))
        owner.append(np.full(len(o.polygon), o.id))
    if not starts:
        return np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0, dtype=int)
    return np.vstack(starts), np.vstack(ends), np.concatenate(owner)


def beam_angles(lidar: LidarModel) -> np.ndarray:
    full = abs(lidar.fov - 2 * np.pi) < 1e-12
    return np.linspace(-lidar.fov / 2, lidar.fov / 2, lidar.beam_count, endpoint=not full)


def raycast_scan(world: WorldScenario, pose: Pose2, lidar: LidarModel, rng=None) -> LidarScan:
    """Nearest edge hit per beam within ``max_range``; misses produce no point."""
    angles = pose.theta + beam_angles(lidar)
    d = np.c_[np.cos(angles), np.sin(angles)]
    a, b, owner = _edges(world)
    o = pose.position
    if len(a) == 0:
        empty = np.zeros(0)
        return LidarScan(np.zeros((0, 3)), empty, empty, np.zeros(0, dtype=int), np.zeros(0, dtype=bool))
    e = b - a
    # solve o + t d = a + s e for every (beam, edge)
    denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]
    w = a - o
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (w[None, :, 0] * e[None, :, 1] - w[None, :, 1] * e[None, :, 0]) / denom
        s = (w[None, :, 0] * d[:, None, 1] - w[None, :, 1] * d[:, None, 0]) / denom
    ok = (np.abs(denom) > 1e-15) & (t > 0) & (s >= 0) & (s <= 1) & (t <= lidar.max_range)
    t = np.where(ok, t, np.inf)
    best = np.argmin(t, axis=1)
    r = t[np.arange(len(d)), best]
    hit = np.isfinite(r)
    r, best, ang, dirs = r[hit], best[hit], angles[hit], d[hit]
    if lidar.range_noise_sigma > 0:
        rng = np.random.default_rng() if rng is None else rng
        r = r + rng.normal(0.0, lidar.range_noise_sigma, len(r))
    pts = np.c_[o + dirs * r[:, None], np.full(len(r), lidar.height)]
    ids = owner[best]
    truth = world.movability_labels()
    movable = np.array([truth[i] for i in ids], dtype=bool)
    return LidarScan(pts, r, ang, ids, movable)


def make_camera(world: WorldScenario) -> CameraModel:
    c = world.camera
    return CameraModel.forward_facing(c.width, c.height, c.focal, c.mount_height)


def _pixel_rays(camera: CameraModel, pose: Pose2):
    T = camera.camera_from_world(pose)
    Rwc = T[:3, :3].T
    centre = -Rwc @ T[:3, 3]
    Kinv = np.linalg.inv(camera.K)
    return centre, Rwc, Kinv


def render_instances(world: WorldScenario, pose: Pose2, camera: CameraModel) -> np.ndarray:
    """Obstacle id seen through each pixel centre (-1 for none).

    Obstacles are extruded prisms; each pixel ray is clipped against the
    prism's half-spaces and the nearest entry wins.
    """
    H, W = camera.image_height, camera.image_width
    ids = np.full((H, W), -1, dtype=int)
    depth = np.full((H, W), np.inf)
    C, Rwc, Kinv = _pixel_rays(camera, pose)
    T = camera.camera_from_world(pose)
    for ob in world.obstacles:
        h = ob.height
        verts = np.vstack([np.c_[ob.polygon, np.zeros(len(ob.polygon))], np.c_[ob.polygon, np.full(len(ob.polygon), h)]])
        vc = verts @ T[:3, :3].T + T[:3, 3]
        if np.all(vc[:, 2] <= DEPTH_EPS):
            continue
        if np.all(vc[:, 2] > DEPTH_EPS):
            uv = (vc @ camera.K.T)[:, :2] / vc[:, 2:3]
            u0 = max(int(np.floor(uv[:, 0].min())) - 1, 0)
            v0 = max(int(np.floor(uv[:, 1].min())) - 1, 0)
            u1 = min(int(np.ceil(uv[:, 0].max())) + 1, W)
            v1 = min(int(np.ceil(uv[:, 1].max())) + 1, H)
        else:
            u0, v0, u1, v1 = 0, 0, W, H
        if u0 >= u1 or v0 >= v1:
            continue
        vv, uu = np.mgrid[v0:v1, u0:u1]
        pix = np.c_[uu.ravel() + 0.5, vv.ravel() + 0.5, np.ones(uu.size)]
        # camera depth equals the ray parameter since the camera-frame direction has unit z
        dirs = (pix @ Kinv.T) @ Rwc.T
        A, b = ob.halfplanes()
        A3 = np.vstack([np.c_[A, np.zeros(len(A))], [0, 0, 1], [0, 0, -1]])
        b3 = np.r_[b, h, 0.0]
        num = b3 - A3 @ C
        den = dirs @ A3.T
        with np.errstate(divide="ignore", invalid="ignore"):
            tt = num[None, :] / den
        enter = np.where(den < 0, tt, -np.inf).max(axis=1)
        leave = np.where(den > 0, tt, np.inf).min(axis=1)
        parallel_out = ((den == 0) & (num[None, :] < 0)).any(axis=1)
        enter = np.maximum(enter, DEPTH_EPS)
        hit = (enter <= leave) & ~parallel_out
        hit = hit.reshape(vv.shape)
        enter = enter.reshape(vv.shape)
        sub_d = depth[v0:v1, u0:u1]
        closer = hit & (enter < sub_d)
        sub_d[closer] = enter[closer]
        ids[v0:v1, u0:u1][closer] = ob.id
    return ids


def synth_detections(world: WorldScenario, pose: Pose2, camera: CameraModel, now=0.0) -> CandidateSet:
    """One mask per obstacle with at least one visible pixel, captioned by class."""
    ids = render_instances(world, pose, camera)
    present = np.unique(ids[ids >= 0])
    cls = {o.id: o.cls for o in world.obstacles}
    return CandidateSet(Mask.from_bitmap(ids == i, cls[int(i)], now, int(i)) for i in present)
