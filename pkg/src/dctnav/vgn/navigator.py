"""Closed-loop planner: reference path, horizon solve, safety check, recovery."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import UnreachableError
from ..geometry import Pose2
from .astar import FixedPointMemory, ReferencePath, astar_reference
from .correction import (
    CorrectionConfig,
    StateHistory,
    apply_correction,
    detect_stuck,
    reverse_control,
)
from .mpc import PlannerParams, exact_clearance, kinematics_step, solve_horizon

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NavigatorConfig:
    grid_resolution: float = 0.05
    inflation: float = 0.16
    replan_every: int = 10
    goal_tolerance: float = 0.15
    unreachable_grace: float = 3.0
    max_corrections: int = 4
    reverse_tolerance: float = 0.03
    eps_cluster: float = 0.1


@dataclass
class Decision:
    control: tuple
    mode: str
    events: list = field(default_factory=list)
    terminal: str | None = None
    plan_converged: bool | None = None


class Navigator:
    def __init__(self, goal: Pose2, bounds, engine, params: PlannerParams | None = None,
                 correction: CorrectionConfig | None = None, cfg: NavigatorConfig | None = None):
        self.goal = goal
        self.bounds = tuple(bounds)
        self.engine = engine
        self.params = params or PlannerParams()
        self.correction = correction or CorrectionConfig()
        self.cfg = cfg or NavigatorConfig()
        self.history = StateHistory(capacity=max(self.correction.traceback, self.correction.tau_stuck) + 8)
        self.reference: ReferencePath | None = None
        self.warm = None
        self.mode = "track"
        self.reverse_path = None
        self.reverse_index = 0
        self.reverse_steps = 0
        self.corrections = 0
        self.since_replan = 0
        self.unreachable_since = None
        self.last_v = 0.0
        self.extra_fixed = np.zeros((0, 2))
        self.reverse_log: list = []
        self.seen = FixedPointMemory(self.bounds, self.cfg.grid_resolution)

    @property
    def margin(self) -> float:
        return float(getattr(self.engine, "margin_", 0.0))

    def at_goal(self, pose: Pose2) -> bool:
        return pose.distance_to(self.goal) <= self.cfg.goal_tolerance

    def _replan(self, pose, fixed):
        pts = np.vstack([fixed[:, :2], self.seen.points(), self.extra_fixed])
        self.reference = astar_reference(pts, self.bounds, self.cfg.grid_resolution, pose, self.goal,
                                         self.cfg.inflation)
        self.since_replan = 0
        self.warm = None

    def _safe(self, pose, u, fixed):
        """Execute ``u`` only if it keeps the exact clearance or does not reduce it."""
        if len(fixed) == 0:
            return u
        d_bar = self.params.d_min + self.margin
        now = exact_clearance(self.params.polytope, pose, fixed)
        for scale in (1.0, 0.5, 0.25, 0.0):
            cand = (u[0] * scale, u[1])
            nxt = kinematics_step(pose, cand, self.params.dt)
            d = exact_clearance(self.params.polytope, nxt, fixed)
            if d >= d_bar or d >= now:
                return cand
        return (0.0, 0.0)

    def act(self, t: float, pose: Pose2, partition) -> Decision:
        """Control for this step; a ``stuck`` event names the obstacle id to deny-list."""
        self.history.push(t, pose, self.last_v)
        events = []
        if self.at_goal(pose):
            self.last_v = 0.0
            return Decision((0.0, 0.0), self.mode, ["goal_reached"], terminal="success")
        fixed = partition.fixed
        fixed = fixed[:, :2] if len(fixed) else np.zeros((0, 2))
        self.seen.update(pose.position, fixed, partition.movable[:, :2])

        if self.mode == "track" and detect_stuck(self.history, self.last_v, self.correction):
            self.corrections += 1
            if self.corrections > self.cfg.max_corrections:
                self.last_v = 0.0
                return Decision((0.0, 0.0), "track", ["stuck"], terminal="stuck-fail")
            res = apply_correction(partition, self.history, pose, self.params.polytope, self.correction,
                                   self.cfg.eps_cluster)
            failed_xy = partition.points[res.failed_index, :2]
            self.extra_fixed = np.vstack([self.extra_fixed, failed_xy]) if len(failed_xy) else self.extra_fixed
            self.mode = "reverse"
            self.reverse_path = res.reverse_path
            self.reverse_index = 1
            self.reverse_steps = 0
            events.append({"event": "stuck", "relabelled": int(len(res.failed_index)), "deny": res.deny_id})
            fixed = partition.points[~res.labels, :2]

        if self.mode == "reverse":
            u, done = self._reverse_step(pose)
            if not done:
                self.last_v = u[0]
                self.reverse_log.append(pose.position.copy())
                return Decision(u, "reverse", events + ["reversing"])
            self.mode = "track"
            self.history.clear()
            self.history.push(t, pose, 0.0)
            self.reference = None
            events.append("reverse_done")

        if self.reference is None or self.since_replan >= self.cfg.replan_every or self.unreachable_since is not None:
            try:
                self._replan(pose, fixed)
                self.unreachable_since = None
                events.append("replanned")
            except UnreachableError:
                if self.unreachable_since is None:
                    self.unreachable_since = t
                events.append("unreachable")
                if t - self.unreachable_since >= self.cfg.unreachable_grace - 1e-9:
                    self.last_v = 0.0
                    return Decision((0.0, 0.0), "track", events, terminal="unreachable")
                if self.reference is None:
                    self.last_v = 0.0
                    return Decision((0.0, 0.0), "track", events)
        self.since_replan += 1
        plan = solve_horizon(pose, fixed, self.reference, self.params, self.engine, warm_start=self.warm)
        self.warm = np.vstack([plan.controls[1:], plan.controls[-1:]])
        u = self._safe(pose, tuple(float(x) for x in plan.controls[0]), fixed)
        if u[0] != plan.controls[0][0]:
            events.append("safety_slowdown")
        self.last_v = u[0]
        return Decision(u, "track", events, plan_converged=plan.converged)

    def _reverse_step(self, pose):
        path = self.reverse_path
        self.reverse_steps += 1
        budget = 10 * (self.correction.traceback + 1)
        while self.reverse_index < len(path) and np.linalg.norm(path[self.reverse_index] - pose.position) < self.cfg.reverse_tolerance:
            self.reverse_index += 1
        if self.reverse_index >= len(path) or self.reverse_steps > budget:
            return (0.0, 0.0), True
        target = path[self.reverse_index]
        q_behind = (target - pose.position) @ np.array([math.cos(pose.theta), math.sin(pose.theta)])
        if q_behind > 0 and self.reverse_index < len(path) - 1:
            # waypoint already passed in front of the robot; move on
            self.reverse_index += 1
            target = path[self.reverse_index]
        v, psi = reverse_control(pose, target, self.correction, self.params.dt, self.params.u_max[1])
        v = max(v, self.params.u_min[0])
        return (v, psi), False
