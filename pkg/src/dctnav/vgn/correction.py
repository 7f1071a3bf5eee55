"""Stuck detection and the relabel / reverse / replan recovery."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ..dualdist.exact import rect_duals_body
from ..geometry import Pose2, RobotPolytope, to_body
from ..vpp.partition import PartitionedScan


@dataclass(frozen=True)
class CorrectionConfig:
    v_min_stuck: float = 0.05
    d_stuck: float = 0.005
    tau_stuck: int = 10
    traceback: int = 20
    v_rev: float = 0.3
    contact_radius: float = 0.15

    def __post_init__(self):
        for name in ("v_min_stuck", "d_stuck", "tau_stuck", "traceback", "v_rev", "contact_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class HistoryEntry:
    t: float
    pose: Pose2
    v_cmd: float  # linear command that led to this pose


class StateHistory:
    """Most recent poses with the commands that produced them."""

    def __init__(self, capacity: int = 64):
        self.entries: deque = deque(maxlen=capacity)

    def push(self, t, pose: Pose2, v_cmd: float):
        if self.entries and t <= self.entries[-1].t:
            raise ValueError("history timestamps must increase")
        self.entries.append(HistoryEntry(float(t), pose, float(v_cmd)))

    def clear(self):
        self.entries.clear()

    def __len__(self):
        return len(self.entries)

    def last(self, n):
        return list(self.entries)[-n:]


def detect_stuck(history: StateHistory, commanded_v: float, cfg: CorrectionConfig) -> bool:
    """True when the last ``tau_stuck`` steps all had ``v >= v_min`` yet moved ``<= d_stuck``.

    ``commanded_v`` is the command behind the newest pose.
    """
    tau = cfg.tau_stuck
    if len(history) < tau + 1:
        return False
    recent = history.last(tau + 1)
    for k in range(1, tau + 1):
        v = commanded_v if k == tau else recent[k].v_cmd
        if v < cfg.v_min_stuck:
            return False
        if recent[k].pose.distance_to(recent[k - 1].pose) > cfg.d_stuck:
            return False
    return True


@dataclass(frozen=True, eq=False)
class CorrectionResult:
    labels: np.ndarray
    failed_index: np.ndarray
    deny_id: int | None
    reverse_path: np.ndarray  # (n, 2) positions to visit, newest first


def failed_push_points(partition: PartitionedScan, pose: Pose2, polytope: RobotPolytope,
                       eps_cluster: float, contact_radius: float) -> np.ndarray:
    """Indices of the movable cluster nearest the robot boundary, if within ``contact_radius``."""
    mov = partition.movable_index
    if len(mov) == 0:
        return np.zeros(0, dtype=int)
    xy = partition.points[mov, :2]
    _, _, d = rect_duals_body(polytope, to_body(pose, xy)) if polytope.is_rectangle else (None, None, None)
    if d is None:
        from ..dualdist.exact import solve_dual_exact
        d = np.array([solve_dual_exact(polytope.G, polytope.g, pose, p)[1] for p in xy])
    k = int(np.argmin(d))
    if d[k] > contact_radius:
        return np.zeros(0, dtype=int)
    # flood the eps-graph of movable points from the nearest one
    tree = cKDTree(xy)
    seen = {k}
    frontier = [k]
    while frontier:
        nbrs = tree.query_ball_point(xy[frontier], eps_cluster)
        frontier = [j for group in nbrs for j in group if j not in seen]
        seen.update(frontier)
        frontier = list(set(frontier))
    return np.sort(mov[list(seen)])


def apply_correction(partition: PartitionedScan, history: StateHistory, pose: Pose2,
                     polytope: RobotPolytope, cfg: CorrectionConfig, eps_cluster: float = 0.1,
                     deny: set | None = None) -> CorrectionResult:
    """Relabel the non-yielding cluster as fixed and plan the way back.

    The obstacle id most common among the relabelled points' masks is added
    to ``deny`` (when given) so later filter results cannot revive it.
    """
    failed = failed_push_points(partition, pose, polytope, eps_cluster, cfg.contact_radius)
    labels = partition.labels.copy()
    labels[failed] = False
    deny_id = None
    if len(failed) and partition.mask_ids is not None:
        ids = partition.mask_ids[failed]
        ids = ids[ids >= 0]
        if len(ids):
            vals, counts = np.unique(ids, return_counts=True)
            deny_id = int(vals[np.argmax(counts)])
            if deny is not None:
                deny.add(deny_id)
    entries = history.last(cfg.traceback + 1)
    back = np.array([e.pose.position for e in reversed(entries)]) if entries else np.zeros((0, 2))
    return CorrectionResult(labels, failed, deny_id, back)


def reverse_control(pose: Pose2, target, cfg: CorrectionConfig, dt: float, psi_limit: float):
    """Backward pure pursuit towards ``target``; ``v`` stays in ``[-v_rev, 0]``."""
    q = to_body(pose, np.asarray(target, dtype=float)[None, :2])[0]
    dist = math.hypot(q[0], q[1])
    if dist < 1e-9:
        return 0.0, 0.0
    v = -min(cfg.v_rev, dist / dt)
    curvature = 2.0 * q[1] / (dist * dist)
    psi = float(np.clip(v * curvature, -psi_limit, psi_limit))
    return v, psi
