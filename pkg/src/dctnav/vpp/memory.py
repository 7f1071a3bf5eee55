"""Mask memory: refresh policy, homography propagation and IoU reconciliation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import SingularHomographyError, ValidationError
from ..geometry import CameraModel, Pose2, apply_homography, plane_homography
from .masks import Mask, iou


@dataclass(frozen=True)
class PartitionConfig:
    d_thres: float = 1.0
    t_thres: float = 5.0
    sigma_iou: float = 0.9
    eps_cluster: float = 0.1
    n_min: int = 3

    def __post_init__(self):
        for name in ("d_thres", "t_thres", "sigma_iou", "eps_cluster", "n_min"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.sigma_iou > 1:
            raise ValidationError("sigma_iou must be at most 1")


@dataclass(frozen=True)
class CandidateSet:
    masks: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "masks", tuple(self.masks))

    def __len__(self):
        return len(self.masks)

    def __iter__(self):
        return iter(self.masks)


@dataclass(frozen=True)
class MaskMemory:
    """Trusted masks plus the time and pose of the last filter refresh.

    ``rejected`` holds candidates the filter turned down at that refresh, so
    later detections of the same objects can be recognised as already vetted.
    ``frame_pose`` is the pose whose image the stored geometry belongs to;
    it equals ``refresh_pose`` right after a refresh and follows the robot as
    masks are re-anchored on fresh detections.
    """

    masks: tuple = ()
    refresh_time: float = -np.inf
    refresh_pose: Pose2 = Pose2(0.0, 0.0, 0.0)
    rejected: tuple = ()
    frame_pose: Pose2 | None = None

    def __post_init__(self):
        object.__setattr__(self, "masks", tuple(self.masks))
        object.__setattr__(self, "rejected", tuple(self.rejected))
        if self.frame_pose is None:
            object.__setattr__(self, "frame_pose", self.refresh_pose)


def should_refresh(now: float, pose: Pose2, memory: MaskMemory, cfg: PartitionConfig) -> bool:
    if not memory.masks:
        return True
    moved = float(np.linalg.norm(pose.position - memory.refresh_pose.position))
    return moved > cfg.d_thres or (now - memory.refresh_time) > cfg.t_thres


def refresh_memory(now: float, pose: Pose2, candidates: CandidateSet, movability_filter,
                   prompt: str = "movable obstacles", deny=frozenset()) -> MaskMemory:
    """New memory from the filter's verdict on ``candidates``.

    Raises whatever the filter raises (``FilterUnavailableError``); the
    caller's existing memory is immutable and so stays as it was. Candidates
    whose ``obj_id`` is in ``deny`` are never kept.
    """
    kept = movability_filter(prompt, candidates)
    kept_ids = {id(m) for m in kept}
    trusted = tuple(m for m in candidates if id(m) in kept_ids and m.obj_id not in deny)
    trusted_ids = {id(m) for m in trusted}
    rejected = tuple(m for m in candidates if id(m) not in trusted_ids)
    return MaskMemory(trusted, float(now), pose, rejected)


def warp_mask(mask: Mask, H: np.ndarray, Hinv: np.ndarray) -> Mask | None:
    """Inverse-map every destination pixel centre through ``Hinv``; None if nothing survives."""
    rows, cols = mask.shape
    x, y, w, h = mask.bbox
    corners = np.array([[x, y], [x + w, y], [x, y + h], [x + w, y + h]], dtype=float)
    fwd, ok = apply_homography(H, corners)
    if ok.all():
        u0 = max(int(np.floor(fwd[:, 0].min())) - 1, 0)
        v0 = max(int(np.floor(fwd[:, 1].min())) - 1, 0)
        u1 = min(int(np.ceil(fwd[:, 0].max())) + 1, cols)
        v1 = min(int(np.ceil(fwd[:, 1].max())) + 1, rows)
    else:
        u0, v0, u1, v1 = 0, 0, cols, rows
    if u0 >= u1 or v0 >= v1:
        return None
    vv, uu = np.mgrid[v0:v1, u0:u1]
    centres = np.c_[uu.ravel() + 0.5, vv.ravel() + 0.5]
    src, valid = apply_homography(Hinv, centres)
    su = np.floor(np.where(valid, src[:, 0], -1.0)).astype(np.int64)
    sv = np.floor(np.where(valid, src[:, 1], -1.0)).astype(np.int64)
    inside = valid & (su >= x) & (su < x + w) & (sv >= y) & (sv < y + h)
    hit = np.zeros(len(centres), dtype=bool)
    hit[inside] = mask.bitmap[sv[inside], su[inside]]
    if not hit.any():
        return None
    out = np.zeros(mask.shape, dtype=bool)
    out[v0:v1, u0:u1] = hit.reshape(v1 - v0, u1 - u0)
    return Mask.from_bitmap(out, mask.caption, mask.source_time, mask.obj_id)


def warp_mask_list(masks, pose_from: Pose2, pose_to: Pose2, camera: CameraModel) -> list:
    if not masks:
        return []
    try:
        H = plane_homography(camera, pose_from, pose_to)
    except SingularHomographyError:
        return []
    Hinv = np.linalg.inv(H)
    warped = (warp_mask(m, H, Hinv) for m in masks)
    return [m for m in warped if m is not None]


def warp_masks(memory: MaskMemory, current_pose: Pose2, camera: CameraModel) -> list:
    """Trusted masks carried from the memory's image into the current one."""
    return warp_mask_list(memory.masks, memory.frame_pose, current_pose, camera)


def greedy_matches(a, b, threshold: float):
    """One-to-one ``(i, j, iou)`` pairs with ``iou >= threshold``, best pairs first."""
    pairs = []
    for i, ma in enumerate(a):
        for j, mb in enumerate(b):
            v = iou(ma, mb)
            if v >= threshold:
                pairs.append((v, i, j))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_a, used_b, out = set(), set(), []
    for v, i, j in pairs:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        out.append((i, j, v))
    return out


def reconcile(propagated, fresh, sigma_iou: float) -> list:
    """Matched propagated masks take the fresh geometry; unmatched ones are dropped.

    Fresh detections left unclaimed are appended as new trusted masks.
    """
    fresh = list(fresh)
    matches = greedy_matches(propagated, fresh, sigma_iou)
    by_prop = {i: j for i, j, _ in matches}
    out = [propagated[i].with_geometry(fresh[by_prop[i]]) for i in range(len(propagated)) if i in by_prop]
    claimed = set(by_prop.values())
    out.extend(m for j, m in enumerate(fresh) if j not in claimed)
    return out
