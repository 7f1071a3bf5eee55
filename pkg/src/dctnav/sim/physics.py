"""Quasi-static contact resolution between the robot and obstacles."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import SimulationFault
from ..geometry import Pose2, RobotPolytope, wrap_angle
from .world import WorldScenario

SEPARATION = 1e-4
MAX_PASSES = 10


def _axes(poly):
    e = np.roll(poly, -1, axis=0) - poly
    n = np.c_[e[:, 1], -e[:, 0]]
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def sat_mtv(a, b):
    """Minimum translation moving convex polygon ``b`` out of ``a``; None if disjoint."""
    best, best_axis = np.inf, None
    for axis in np.vstack([_axes(a), _axes(b)]):
        pa, pb = a @ axis, b @ axis
        overlap = min(pa.max(), pb.max()) - max(pa.min(), pb.min())
        if overlap <= 0:
            return None
        if overlap < best:
            best, best_axis = overlap, axis
    if (b.mean(axis=0) - a.mean(axis=0)) @ best_axis < 0:
        best_axis = -best_axis
    return best_axis * best


def polygon_distance(a, b) -> float:
    """Euclidean distance between convex polygons (0 when they overlap)."""
    if sat_mtv(a, b) is not None:
        return 0.0
    best = np.inf
    for P, Q in ((a, b), (b, a)):
        q0, q1 = Q, np.roll(Q, -1, axis=0)
        e = q1 - q0
        for p in P:
            t = np.clip(np.einsum("ij,ij->i", p - q0, e) / np.einsum("ij,ij->i", e, e), 0.0, 1.0)
            best = min(best, float(np.linalg.norm(p - (q0 + t[:, None] * e), axis=1).min()))
    return best


def _bbox_overlap(a, b, pad=0.0):
    return not (a[:, 0].max() + pad < b[:, 0].min() or b[:, 0].max() + pad < a[:, 0].min()
                or a[:, 1].max() + pad < b[:, 1].min() or b[:, 1].max() + pad < a[:, 1].min())


@dataclass
class StepResult:
    pose: Pose2
    displacements: dict = field(default_factory=dict)
    contacts: list = field(default_factory=list)

    @property
    def blocked(self) -> bool:
        return any(not c["yielded"] for c in self.contacts)


def _interp(p0: Pose2, p1: Pose2, s: float) -> Pose2:
    dth = wrap_angle(p1.theta - p0.theta)
    return Pose2(p0.x + s * (p1.x - p0.x), p0.y + s * (p1.y - p0.y), p0.theta + s * dth)


def _try_pushes(world, robot_poly, robot_step, capability, blockers):
    """Trial positions for pushed obstacles; returns (moves, contacts, new_blockers)."""
    obs = {o.id: o for o in world.obstacles}
    pos = {}
    contacts, new_blockers = [], set()
    queue = []
    root = {}
    for o in world.obstacles:
        if o.id in blockers or not _bbox_overlap(robot_poly, o.polygon):
            continue
        mtv = sat_mtv(robot_poly, o.polygon)
        if mtv is None:
            continue
        if o.cls == "curtain":
            contacts.append({"id": o.id, "yielded": True})
            continue
        if not o.movable or o.resistance > capability or np.linalg.norm(mtv) > robot_step + 1e-9:
            new_blockers.add(o.id)
            contacts.append({"id": o.id, "yielded": False})
            continue
        pos[o.id] = o.polygon + mtv
        contacts.append({"id": o.id, "yielded": True})
        queue.append(o.id)
        root[o.id] = o.id
    # chained pushes between obstacles
    for _ in range(MAX_PASSES):
        if not queue:
            break
        nxt = []
        for mid in queue:
            mp = pos[mid]
            for k in world.obstacles:
                if k.id == mid or k.cls == "curtain" or obs[mid].cls == "curtain":
                    continue
                kp = pos.get(k.id, k.polygon)
                if not _bbox_overlap(mp, kp):
                    continue
                mtv = sat_mtv(mp, kp)
                if mtv is None:
                    continue
                moved_by = np.linalg.norm(mp[0] - obs[mid].polygon[0])
                if (not k.movable or k.resistance > capability or k.id in blockers
                        or np.linalg.norm(mtv) > moved_by + 1e-9):
                    # the chain cannot move; the obstacle the robot touches blocks it
                    new_blockers.add(root[mid])
                    continue
                pos[k.id] = kp + mtv
                root[k.id] = root[mid]
                nxt.append(k.id)
        queue = nxt
    else:
        if queue:
            raise SimulationFault("chained pushes did not settle within the pass cap")
    return pos, contacts, new_blockers


def _truncate(world, robot: RobotPolytope, p0: Pose2, p1: Pose2, blocker_ids) -> Pose2:
    polys = [world.obstacle(i).polygon for i in blocker_ids]

    def clear(s):
        rp = robot.world_vertices(_interp(p0, p1, s))
        return all(polygon_distance(rp, q) >= SEPARATION for q in polys)

    if not clear(0.0):
        return p0
    lo, hi = 0.0, 1.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if clear(mid):
            lo = mid
        else:
            hi = mid
    return _interp(p0, p1, lo)


def step_world(world: WorldScenario, robot: RobotPolytope, pose: Pose2, next_pose: Pose2,
               capability: float | None = None) -> StepResult:
    """Move the robot towards ``next_pose``, pushing what yields and stopping at what does not.

    Mutates the obstacle polygons of ``world`` in place.
    """
    capability = world.robot.push_capability if capability is None else capability
    blockers: set = set()
    target = next_pose
    all_contacts = {}
    for _ in range(MAX_PASSES):
        rv0 = robot.world_vertices(pose)
        rv1 = robot.world_vertices(target)
        robot_step = float(np.linalg.norm(rv1 - rv0, axis=1).max())
        pos, contacts, new_blockers = _try_pushes(world, rv1, robot_step, capability, blockers)
        for c in contacts:
            all_contacts[c["id"]] = all_contacts.get(c["id"], True) and c["yielded"]
        if new_blockers - blockers:
            blockers |= new_blockers
            for b in blockers:
                all_contacts[b] = False
            target = _truncate(world, robot, pose, next_pose, blockers)
            continue
        disp = {}
        for oid, poly in pos.items():
            ob = world.obstacle(oid)
            disp[oid] = poly[0] - ob.polygon[0]
            ob.polygon = poly
        contacts = [{"id": k, "yielded": v} for k, v in sorted(all_contacts.items())]
        return StepResult(target, disp, contacts)
    raise SimulationFault("contact resolution did not converge")
