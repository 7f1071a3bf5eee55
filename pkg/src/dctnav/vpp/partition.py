"""Scan partitioning by mask lookup, cluster-based corrections, and scoring."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from ..errors import ValidationError
from ..geometry import CameraModel, Pose2, project_points


@dataclass(frozen=True, eq=False)
class PartitionedScan:
    """Scan points (n, 3) with a per-point movable flag."""

    points: np.ndarray
    labels: np.ndarray
    stamp: float = 0.0
    # id of the mask each point projected into (-1 for none)
    mask_ids: np.ndarray | None = None

    @property
    def movable(self) -> np.ndarray:
        return self.points[self.labels]

    @property
    def fixed(self) -> np.ndarray:
        return self.points[~self.labels]

    @property
    def movable_index(self) -> np.ndarray:
        return np.flatnonzero(self.labels)

    @property
    def fixed_index(self) -> np.ndarray:
        return np.flatnonzero(~self.labels)


def partition_scan(scan, masks, robot_pose: Pose2, camera: CameraModel, stamp=0.0) -> PartitionedScan:
    pts = np.asarray(getattr(scan, "points", scan), dtype=float).reshape(-1, 3)
    labels = np.zeros(len(pts), dtype=bool)
    mask_ids = np.full(len(pts), -1, dtype=int)
    if len(pts) and masks:
        uv, valid = project_points(camera, robot_pose, pts)
        u = np.floor(np.where(valid, uv[:, 0], -1.0))
        v = np.floor(np.where(valid, uv[:, 1], -1.0))
        inside = np.flatnonzero(valid & (u >= 0) & (u < camera.image_width)
                                & (v >= 0) & (v < camera.image_height))
        ui, vi = u[inside].astype(int), v[inside].astype(int)
        for m in masks:
            hit = m.bitmap[vi, ui]
            mask_ids[inside[hit & (mask_ids[inside] < 0)]] = m.obj_id
            labels[inside[hit]] = True
    return PartitionedScan(pts, labels, float(stamp), mask_ids)


def _components(xy, eps):
    n = len(xy)
    pairs = cKDTree(xy).query_pairs(eps, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    return connected_components(graph, directed=False)


def refine_partition(part: PartitionedScan, eps_cluster: float, n_min: int) -> PartitionedScan:
    """Drop small movable clusters, then grow the survivors over nearby fixed points.

    Clustering links movable points closer than ``eps_cluster`` in the ground
    plane. Growth is repeated until no fixed point lies within
    ``eps_cluster`` of a movable one, so refining twice changes nothing.
    """
    labels = part.labels.copy()
    xy = part.points[:, :2]
    mov = np.flatnonzero(labels)
    if len(mov):
        _, comp = _components(xy[mov], eps_cluster)
        sizes = np.bincount(comp)
        labels[mov[sizes[comp] < n_min]] = False
    frontier = np.flatnonzero(labels)
    fixed = np.flatnonzero(~labels)
    if len(frontier) and len(fixed):
        tree = cKDTree(xy[fixed])
        taken = np.zeros(len(fixed), dtype=bool)
        while len(frontier):
            hits = tree.query_ball_point(xy[frontier], eps_cluster)
            new = np.unique(np.concatenate([np.asarray(h, dtype=int) for h in hits]))
            new = new[~taken[new]]
            taken[new] = True
            frontier = fixed[new]
        labels[fixed[taken]] = True
    return PartitionedScan(part.points, labels, part.stamp, part.mask_ids)


def partition_metrics(predicted, ground_truth) -> dict:
    """Confusion-matrix scores with movable as the positive class.

    Precision (recall) is 0 with ``precision_degenerate`` (``recall_degenerate``)
    set when nothing was predicted (present) as movable.
    """
    pred = np.asarray(predicted.labels if isinstance(predicted, PartitionedScan) else predicted, dtype=bool)
    truth = np.asarray(ground_truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ValidationError(f"label count mismatch: {pred.shape} vs {truth.shape}")
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    tn = int(np.sum(~pred & ~truth))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    total = tp + fp + fn + tn
    return {
        "precision": precision, "recall": recall, "f1": f1,
        "accuracy": (tp + tn) / total if total else 1.0,
        "precision_degenerate": tp + fp == 0, "recall_degenerate": tp + fn == 0,
        "tp": tp, "fp": fp, "fn": fn, "tn": tn,
    }
