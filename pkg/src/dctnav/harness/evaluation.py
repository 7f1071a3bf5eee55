"""Batch evaluations behind the sweep and report commands."""
from __future__ import annotations

import csv
import logging
import math
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from ..geometry import Pose2
from ..sim.episode import EpisodeTrace, compute_metrics, run_episode
from ..sim.scenarios import by_name
from ..sim.sensors import make_camera, raycast_scan, synth_detections
from ..vpp.filters import CorruptedFilter
from ..vpp.partition import partition_metrics
from ..vpp.pipeline import Partitioner, PerceptionConfig

log = logging.getLogger(__name__)

FXMY_LEVELS = ("F4M0", "F3M1", "F2M2", "F1M3")
NOISE_LEVELS = (0.0, 0.1, 0.2, 0.3)


def summarize(level, metrics) -> dict:
    """SR plus means and population stds over the successful runs."""
    ok = [m for m in metrics if m.success]
    row = {"level": level, "runs": len(metrics), "SR": len(ok) / len(metrics) if metrics else 0.0}
    for key, attr in (("navTime", "nav_time"), ("avgSpeed", "avg_speed"), ("navDistance", "nav_distance")):
        vals = np.array([getattr(m, attr) for m in ok])
        row[f"mean_{key}"] = float(vals.mean()) if len(vals) else math.nan
        row[f"std_{key}"] = float(vals.std()) if len(vals) else math.nan
    return row


def fxmy_sweep(levels=FXMY_LEVELS, repetitions=10, base_seed=0, **run_kw) -> list:
    """One row per level; repetition ``i`` uses seed ``base_seed + i`` at every level."""
    if repetitions < 1:
        raise ValidationError("repetitions must be >= 1")
    rows = []
    for level in levels:
        metrics, failures = [], 0
        for i in range(repetitions):
            try:
                trace = run_episode(by_name(level, base_seed + i), seed=base_seed + i, **run_kw)
                metrics.append(compute_metrics(trace))
            except Exception as exc:  # recorded per row; the sweep goes on
                log.warning("%s seed %d failed: %s", level, base_seed + i, exc)
                failures += 1
        row = summarize(level, metrics)
        row["errors"] = failures
        rows.append(row)
    return rows


def survey_poses(scenario, count=8, spacing=0.25):
    """Poses stepping from the start towards the goal."""
    s, g = scenario.start, scenario.goal
    d = g.position - s.position
    heading = math.atan2(d[1], d[0])
    unit = d / max(np.linalg.norm(d), 1e-12)
    return [Pose2(*(s.position + k * spacing * unit), heading) for k in range(count)]


def perception_f1(scenario, movability_filter, poses=None, perception: PerceptionConfig | None = None,
                  seed=0) -> dict:
    """Partition scores pooled over every lidar return along ``poses``.

    The filter answers instantly here so each pose is judged by the
    verdict it triggered, which isolates filter quality from latency.
    """
    poses = poses if poses is not None else survey_poses(scenario)
    cfg = perception or PerceptionConfig()
    cfg = PerceptionConfig(cfg.partition, cfg.prompt, 0, cfg.association_iou, cfg.refine)
    world = scenario.copy()
    camera = make_camera(world)
    rng = np.random.default_rng(seed)
    part = Partitioner(camera, movability_filter, cfg)
    pred, truth = [], []
    for k, pose in enumerate(poses):
        scan = raycast_scan(world, pose, world.lidar, rng)
        ps = part.step(k, k * 0.1, pose, scan, synth_detections(world, pose, camera, k * 0.1))
        pred.append(ps.labels)
        truth.append(scan.movable_truth)
    return partition_metrics(np.concatenate(pred), np.concatenate(truth))


def noise_dial(levels=NOISE_LEVELS, repetitions=50, base_seed=0, scenario="F1M3", p_false_pos=0.0) -> list:
    """Mean partition scores under a corrupted oracle for each false-negative rate."""
    if repetitions < 1:
        raise ValidationError("repetitions must be >= 1")
    rows = []
    for level in levels:
        scores = []
        for i in range(repetitions):
            world = by_name(scenario, base_seed + i)
            filt = CorruptedFilter(world.movability_labels(), level, p_false_pos, seed=base_seed + i)
            scores.append(perception_f1(world, filt, seed=base_seed + i))
        row = {"level": level, "runs": repetitions}
        for key in ("precision", "recall", "f1", "accuracy"):
            vals = np.array([s[key] for s in scores])
            row[f"mean_{key}"] = float(vals.mean())
            row[f"std_{key}"] = float(vals.std())
        rows.append(row)
    return rows


def write_csv(rows, path):
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)


def trace_series(trace: EpisodeTrace) -> list:
    return [{"t": r["t"], "x": r["pose"][0], "y": r["pose"][1], "theta": r["pose"][2],
             "v": r["control"][0], "psi": r["control"][1], "minDist": r.get("min_dist", math.inf)}
            for r in trace.records]


def report_traces(trace_dir, out_dir=None) -> tuple:
    """Write one CSV per ``*.jsonl`` trace; returns (written paths, skipped paths)."""
    trace_dir = Path(trace_dir)
    out_dir = Path(out_dir) if out_dir is not None else trace_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    written, skipped = [], []
    for path in sorted(trace_dir.glob("*.jsonl")):
        try:
            trace = EpisodeTrace.read(path)
        except (ValueError, KeyError, TypeError) as exc:
            log.warning("skipping %s: %s", path, exc)
            skipped.append(path)
            continue
        target = out_dir / (path.stem + ".csv")
        write_csv(trace_series(trace), target)
        written.append(target)
    if skipped:
        log.warning("skipped corrupt traces: %s", ", ".join(str(p) for p in skipped))
    return written, skipped
