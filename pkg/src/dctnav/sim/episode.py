"""Closed-loop episode: sense, partition, plan, step the world, record."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from ..geometry import Pose2
from ..vgn.correction import CorrectionConfig
from ..vgn.mpc import PlannerParams, exact_clearance, kinematics_step
from ..vgn.navigator import Navigator, NavigatorConfig
from ..vpp.filters import GroundTruthFilter
from ..vpp.pipeline import Partitioner, PerceptionConfig
from .physics import sat_mtv, step_world
from .sensors import make_camera, raycast_scan, synth_detections
from .world import WorldScenario

STATUSES = ("success", "stuck-fail", "timeout", "unreachable")


@dataclass(frozen=True)
class EpisodeConfig:
    timeout: float = 60.0
    mode: str = "lockstep"
    # hold still until the first filter verdict arrives, at most this long
    max_initial_wait: float = 3.0

    def __post_init__(self):
        if self.mode not in ("lockstep", "decoupled"):
            raise ValidationError(f"mode must be lockstep or decoupled, got {self.mode!r}")
        if not self.timeout > 0:
            raise ValidationError("timeout must be positive")


@dataclass
class EpisodeTrace:
    records: list = field(default_factory=list)
    status: str | None = None
    scenario: str = "custom"
    seed: int = 0

    def __len__(self):
        return len(self.records)

    def poses(self) -> np.ndarray:
        return np.array([r["pose"] for r in self.records]).reshape(-1, 3)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def write(self, path):
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def read(cls, path) -> "EpisodeTrace":
        records = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        if not records:
            raise ValidationError(f"{path}: empty trace")
        for key in ("t", "pose", "control"):
            if any(key not in r for r in records):
                raise ValidationError(f"{path}: record without {key!r}")
        status = records[-1].get("terminal")
        if status not in STATUSES:
            raise ValidationError(f"{path}: missing terminal status")
        return cls(records, status, records[-1].get("scenario", "custom"), records[-1].get("seed", 0))


@dataclass(frozen=True)
class Metrics:
    success: bool
    nav_time: float
    avg_speed: float
    nav_distance: float

    def to_dict(self) -> dict:
        return {"success": self.success, "navTime": self.nav_time, "avgSpeed": self.avg_speed,
                "navDistance": self.nav_distance}


def compute_metrics(trace: EpisodeTrace) -> Metrics:
    """Path length and time up to the first success, or over the attempted portion."""
    P = trace.poses()
    if len(P) == 0:
        return Metrics(False, 0.0, 0.0, 0.0)
    dist = float(np.linalg.norm(np.diff(P[:, :2], axis=0), axis=1).sum()) if len(P) > 1 else 0.0
    time = float(trace.records[-1]["t"])
    speed = dist / time if time > 0 else 0.0
    return Metrics(trace.status == "success", time, speed, dist)


def default_engine(exact: bool = False):
    from ..dualdist import ExactDualSolver, load_default_model
    return ExactDualSolver().fit() if exact else load_default_model()


def check_start(world: WorldScenario):
    robot = world.robot.polytope().world_vertices(world.start)
    for o in world.obstacles:
        if sat_mtv(robot, o.polygon) is not None:
            raise ValidationError(f"start pose overlaps obstacle {o.id}")


def _round(x):
    return [float(v) for v in x]


def run_episode(scenario: WorldScenario, planner: PlannerParams | None = None,
                perception: PerceptionConfig | None = None, cfg: EpisodeConfig | None = None,
                seed: int | None = None, engine=None, movability_filter=None,
                navigator: NavigatorConfig | None = None,
                correction: CorrectionConfig | None = None) -> EpisodeTrace:
    """Run one episode on a private copy of ``scenario``.

    ``movability_filter`` defaults to the ground-truth oracle; pass
    ``RejectAllFilter()`` for the all-fixed ablation. Ground-truth clearance
    to fixed obstacles is recorded as ``min_dist`` for evaluation only.
    """
    cfg = cfg or EpisodeConfig()
    planner = planner or PlannerParams()
    world = scenario.copy()
    check_start(world)
    pp = planner.polytope
    if pp.is_rectangle and (abs(2 * pp.half_length - world.robot.length) > 1e-9
                            or abs(2 * pp.half_width - world.robot.width) > 1e-9):
        raise ValidationError("planner polytope does not match the scenario robot")
    seed = world.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    engine = engine if engine is not None else default_engine()
    filt = movability_filter if movability_filter is not None else GroundTruthFilter(world.movability_labels())
    camera = make_camera(world)
    part = Partitioner(camera, filt, perception, cfg.mode)
    nav = Navigator(world.goal, world.bounds, engine, planner, correction, navigator)
    robot = world.robot.polytope()
    fixed_ids = [o.id for o in world.obstacles if not o.movable]
    dt = planner.dt
    n_steps = int(round(cfg.timeout / dt))
    trace = EpisodeTrace(scenario=world.name, seed=seed)
    pose = world.start
    waited = True
    try:
        for k in range(n_steps + 1):
            t = k * dt
            scan = raycast_scan(world, pose, world.lidar, rng)
            cands = synth_detections(world, pose, camera, t)
            ps = part.step(k, t, pose, scan, cands)
            gt_fixed = scan.points[~scan.movable_truth]
            rec = {"t": t, "pose": _round(pose.as_array()), "n_movable": int(ps.labels.sum()),
                   "n_fixed": int((~ps.labels).sum()),
                   "min_dist": min(exact_clearance(robot, pose, gt_fixed), 1e3)}
            events = [e for e in part.events]
            part.events.clear()
            fresh = not math.isinf(part.memory.refresh_time)
            if waited and not fresh and t < cfg.max_initial_wait and not nav.at_goal(pose):
                dec_u, mode, terminal = (0.0, 0.0), "wait", None
            else:
                waited = False
                dec = nav.act(t, pose, ps)
                for e in dec.events:
                    if isinstance(e, dict) and e.get("deny") is not None:
                        part.deny_object(e["deny"])
                events += dec.events
                dec_u, mode, terminal = dec.control, dec.mode, dec.terminal
            if terminal is None and k == n_steps:
                terminal = "timeout"
            if terminal is not None:
                dec_u = (0.0, 0.0)
            u = (float(np.clip(dec_u[0], planner.u_min[0], planner.u_max[0])),
                 float(np.clip(dec_u[1], planner.u_min[1], planner.u_max[1])))
            rec.update(control=list(u), mode=mode, events=events)
            if terminal is not None:
                rec.update(terminal=terminal, scenario=world.name, seed=seed)
                trace.records.append(rec)
                trace.status = terminal
                break
            res = step_world(world, robot, pose, kinematics_step(pose, u, dt))
            rec["contacts"] = res.contacts
            moved = {str(i): _round(d) for i, d in res.displacements.items() if np.any(d != 0)}
            if moved:
                rec["pushed"] = moved
            for i in fixed_ids:
                if str(i) in moved:
                    raise AssertionError(f"fixed obstacle {i} moved")
            pose = res.pose
            trace.records.append(rec)
    finally:
        part.close()
    return trace
