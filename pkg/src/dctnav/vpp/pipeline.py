"""Per-scan perception loop: sparse filter refreshes, dense mask tracking."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from ..errors import FilterUnavailableError
from ..geometry import CameraModel, Pose2
from .memory import (
    CandidateSet,
    MaskMemory,
    PartitionConfig,
    greedy_matches,
    reconcile,
    refresh_memory,
    should_refresh,
    warp_mask_list,
)
from .partition import PartitionedScan, partition_scan, refine_partition

log = logging.getLogger(__name__)


@dataclass
class PerceptionConfig:
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    prompt: str = "movable obstacles such as light boxes or curtains"
    latency_steps: int = 5
    # loose overlap that ties a fresh detection to a mask vetted earlier
    association_iou: float = 0.3
    refine: bool = True


def _matched(a, b, threshold) -> set:
    return {j for _, j, _ in greedy_matches(a, b, threshold)}


class Partitioner:
    """Keeps the mask memory and splits each scan into movable and fixed points.

    Every step the trusted and rejected masks are warped into the current
    image and tied to fresh detections. Detections tied to a trusted mask go
    through reconciliation; detections tied to a rejected mask or a
    deny-listed object stay fixed. A detection tied to nothing has never been
    judged by the filter, so it stays fixed and triggers a refresh.

    In ``lockstep`` mode the filter runs when a refresh is triggered and its
    result is applied ``latency_steps`` steps later. In ``decoupled`` mode it
    runs on a worker thread and the result is applied on the first step after
    it finishes.
    """

    def __init__(self, camera: CameraModel, movability_filter, cfg: PerceptionConfig | None = None,
                 mode: str = "lockstep"):
        self.camera = camera
        self.filter = movability_filter
        self.cfg = cfg or PerceptionConfig()
        self.mode = mode
        self.memory = MaskMemory()
        self.deny: set = set()
        self.events: list = []
        self._pending = None
        self._executor = ThreadPoolExecutor(max_workers=1) if mode == "decoupled" else None

    def close(self):
        if self._executor is not None:
            self._executor.shutdown(wait=True)

    # -- refresh handling ---------------------------------------------------
    def _run_filter(self, now, pose, candidates, deny):
        return refresh_memory(now, pose, candidates, self.filter, self.cfg.prompt, frozenset(deny))

    def _start_refresh(self, step, now, pose, candidates):
        if self.mode == "decoupled":
            job = self._executor.submit(self._run_filter, now, pose, candidates, set(self.deny))
        else:
            try:
                job = self._run_filter(now, pose, candidates, self.deny)
            except FilterUnavailableError as exc:
                job = exc
        self._pending = (step + self.cfg.latency_steps, job)
        self.events.append({"event": "refresh_requested", "step": step})

    def _collect_refresh(self, step):
        if self._pending is None:
            return
        ready, job = self._pending
        if self.mode == "decoupled":
            if not job.done():
                return
            try:
                result = job.result()
            except FilterUnavailableError as exc:
                result = exc
        else:
            if step < ready:
                return
            result = job
        self._pending = None
        if isinstance(result, FilterUnavailableError):
            log.warning("keeping stale mask memory: %s", result)
            self.events.append({"event": "filter_unavailable", "step": step})
            return
        self.memory = result
        self.events.append({"event": "memory_refreshed", "step": step, "kept": len(result.masks)})

    def deny_object(self, obj_id):
        """Never treat ``obj_id`` as movable again in this episode."""
        self.deny.add(obj_id)
        m = self.memory
        keep = tuple(x for x in m.masks if x.obj_id != obj_id)
        moved = tuple(x for x in m.masks if x.obj_id == obj_id)
        self.memory = MaskMemory(keep, m.refresh_time, m.refresh_pose, m.rejected + moved, m.frame_pose)

    # -- per-step -----------------------------------------------------------
    def track(self, step, now, pose: Pose2, candidates: CandidateSet):
        """Advance the memory to ``pose``; returns the trusted masks for this image."""
        self._collect_refresh(step)
        mem = self.memory
        trusted = warp_mask_list(mem.masks, mem.frame_pose, pose, self.camera)
        rejected = warp_mask_list(mem.rejected, mem.frame_pose, pose, self.camera)
        fresh = list(candidates)
        loose = self.cfg.association_iou

        denied = [f for f in fresh if f.obj_id in self.deny]
        fresh = [f for f in fresh if f.obj_id not in self.deny]
        # a pushed object moves off the ground plane model, so its unwarped
        # mask from the previous image is also a valid match
        rej_taken = _matched(rejected, fresh, loose) | _matched(list(mem.rejected), fresh, loose)
        rejected_now = [fresh[j] for j in sorted(rej_taken)] + denied
        fresh = [f for j, f in enumerate(fresh) if j not in rej_taken]
        vetted_idx = _matched(trusted, fresh, loose) | _matched(list(mem.masks), fresh, loose)
        vetted = [f for j, f in enumerate(fresh) if j in vetted_idx]
        unvetted = len(fresh) - len(vetted)

        masks = reconcile(trusted, vetted, self.cfg.partition.sigma_iou)
        self.memory = MaskMemory(masks, mem.refresh_time, mem.refresh_pose, rejected_now, pose)
        if self._pending is None and (unvetted or should_refresh(now, pose, self.memory, self.cfg.partition)):
            self._start_refresh(step, now, pose, CandidateSet(candidates))
        return masks

    def step(self, step, now, pose: Pose2, scan, candidates: CandidateSet) -> PartitionedScan:
        masks = self.track(step, now, pose, candidates)
        part = partition_scan(scan, masks, pose, self.camera, stamp=now)
        if self.cfg.refine:
            part = refine_partition(part, self.cfg.partition.eps_cluster, self.cfg.partition.n_min)
        return part
