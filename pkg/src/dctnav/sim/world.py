"""World description: obstacles, sensors, robot, and the JSON scenario format."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from ..geometry import Pose2, RobotPolytope, rect_polytope

CLASSES = ("box", "curtain", "shelf", "wall")
# extrusion height per class, metres
CLASS_HEIGHT = {"box": 0.4, "curtain": 0.8, "shelf": 0.6, "wall": 0.5}


def polygon_area2(v):
    x, y = v[:, 0], v[:, 1]
    return float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def is_convex_ccw(v) -> bool:
    e = np.roll(v, -1, axis=0) - v
    f = np.roll(e, -1, axis=0)
    cross = e[:, 0] * f[:, 1] - e[:, 1] * f[:, 0]
    return bool(np.all(cross > 1e-12))


@dataclass(eq=False)
class ObstacleBody:
    id: int
    polygon: np.ndarray
    movable: bool
    resistance: float = 0.0
    cls: str = "box"

    def __post_init__(self):
        self.polygon = np.asarray(self.polygon, dtype=float).reshape(-1, 2)
        if len(self.polygon) < 3:
            raise ValidationError(f"obstacle {self.id}: need at least 3 vertices")
        if polygon_area2(self.polygon) < 0:
            self.polygon = self.polygon[::-1].copy()
        if not is_convex_ccw(self.polygon):
            raise ValidationError(f"obstacle {self.id}: polygon must be strictly convex")
        if self.resistance < 0:
            raise ValidationError(f"obstacle {self.id}: resistance must be non-negative")
        if self.cls not in CLASSES:
            raise ValidationError(f"obstacle {self.id}: unknown class {self.cls!r}")

    @property
    def height(self) -> float:
        return CLASS_HEIGHT[self.cls]

    def halfplanes(self):
        """Outward unit normals ``A`` and offsets ``b`` with ``A x <= b`` inside."""
        e = np.roll(self.polygon, -1, axis=0) - self.polygon
        A = np.c_[e[:, 1], -e[:, 0]]
        A /= np.linalg.norm(A, axis=1, keepdims=True)
        return A, np.einsum("ij,ij->i", A, self.polygon)

    def to_dict(self):
        return {"id": self.id, "vertices": self.polygon.tolist(), "movable": self.movable,
                "resistance": self.resistance, "class": self.cls}


def box(obj_id, cx, cy, length, width, movable, resistance=0.0, cls="box", yaw=0.0):
    c, s = np.cos(yaw), np.sin(yaw)
    local = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]]) * [length / 2, width / 2]
    return ObstacleBody(obj_id, local @ np.array([[c, s], [-s, c]]) + [cx, cy], movable, resistance, cls)


@dataclass(frozen=True)
class LidarModel:
    beam_count: int = 720
    fov: float = 2 * np.pi
    max_range: float = 8.0
    range_noise_sigma: float = 0.0
    rate: float = 10.0
    height: float = 0.2

    def __post_init__(self):
        if self.beam_count < 1 or not self.max_range > 0 or self.range_noise_sigma < 0:
            raise ValidationError("invalid lidar parameters")


@dataclass(frozen=True)
class CameraSpec:
    width: int = 320
    height: int = 240
    focal: float = 200.0
    mount_height: float = 0.25


@dataclass(frozen=True)
class RobotSpec:
    length: float = 0.322
    width: float = 0.220
    push_capability: float = 1.0

    def polytope(self) -> RobotPolytope:
        return rect_polytope(self.length, self.width)


@dataclass(eq=False)
class WorldScenario:
    bounds: tuple
    obstacles: list
    start: Pose2
    goal: Pose2
    seed: int = 0
    robot: RobotSpec = field(default_factory=RobotSpec)
    lidar: LidarModel = field(default_factory=LidarModel)
    camera: CameraSpec = field(default_factory=CameraSpec)
    name: str = "custom"

    def __post_init__(self):
        x0, y0, x1, y1 = self.bounds
        if not (x1 > x0 and y1 > y0):
            raise ValidationError("bounds must be (xmin, ymin, xmax, ymax) with positive extent")
        ids = [o.id for o in self.obstacles]
        if len(set(ids)) != len(ids):
            raise ValidationError("obstacle ids must be unique")
        for o in self.obstacles:
            if (o.polygon[:, 0].min() < x0 - 1e-9 or o.polygon[:, 0].max() > x1 + 1e-9
                    or o.polygon[:, 1].min() < y0 - 1e-9 or o.polygon[:, 1].max() > y1 + 1e-9):
                raise ValidationError(f"obstacle {o.id} leaves the bounds")
        for p, what in ((self.start, "start"), (self.goal, "goal")):
            if not (x0 <= p.x <= x1 and y0 <= p.y <= y1):
                raise ValidationError(f"{what} pose outside bounds")

    def copy(self) -> "WorldScenario":
        return copy.deepcopy(self)

    def obstacle(self, obj_id) -> ObstacleBody:
        for o in self.obstacles:
            if o.id == obj_id:
                return o
        raise KeyError(obj_id)

    def movability_labels(self) -> dict:
        return {o.id: o.movable for o in self.obstacles}

    def to_dict(self) -> dict:
        return {
            "bounds": list(self.bounds),
            "obstacles": [o.to_dict() for o in self.obstacles],
            "robot": {"start": list(self.start.as_array()), "goal": list(self.goal.as_array()),
                      "length": self.robot.length, "width": self.robot.width,
                      "pushCapability": self.robot.push_capability},
            "lidar": {"beamCount": self.lidar.beam_count, "fov": self.lidar.fov,
                      "maxRange": self.lidar.max_range, "rangeNoiseSigma": self.lidar.range_noise_sigma,
                      "rate": self.lidar.rate, "height": self.lidar.height},
            "camera": {"width": self.camera.width, "height": self.camera.height,
                       "focal": self.camera.focal, "mountHeight": self.camera.mount_height},
            "seed": self.seed,
            "name": self.name,
        }


_TOP = {"bounds", "obstacles", "robot", "lidar", "camera", "seed", "name"}
_OBST = {"id", "vertices", "movable", "resistance", "class"}
_ROBOT = {"start", "goal", "length", "width", "pushCapability"}
_LIDAR = {"beamCount": "beam_count", "fov": "fov", "maxRange": "max_range",
          "rangeNoiseSigma": "range_noise_sigma", "rate": "rate", "height": "height"}
_CAMERA = {"width": "width", "height": "height", "focal": "focal", "mountHeight": "mount_height"}


def _reject_unknown(d, allowed, where):
    if not isinstance(d, dict):
        raise ValidationError(f"{where}: expected an object")
    extra = set(d) - set(allowed)
    if extra:
        raise ValidationError(f"{where}: unknown field(s) {sorted(extra)}")


def scenario_from_dict(d: dict) -> WorldScenario:
    _reject_unknown(d, _TOP, "scenario")
    for key in ("bounds", "obstacles", "robot"):
        if key not in d:
            raise ValidationError(f"scenario: missing field {key!r}")
    obstacles = []
    for i, o in enumerate(d["obstacles"]):
        _reject_unknown(o, _OBST, f"obstacles[{i}]")
        obstacles.append(ObstacleBody(int(o["id"]), o["vertices"], bool(o.get("movable", False)),
                                      float(o.get("resistance", 0.0)), o.get("class", "box")))
    r = d["robot"]
    _reject_unknown(r, _ROBOT, "robot")
    robot = RobotSpec(float(r.get("length", 0.322)), float(r.get("width", 0.220)),
                      float(r.get("pushCapability", 1.0)))
    lidar = d.get("lidar", {})
    _reject_unknown(lidar, _LIDAR, "lidar")
    cam = d.get("camera", {})
    _reject_unknown(cam, _CAMERA, "camera")
    return WorldScenario(
        bounds=tuple(float(v) for v in d["bounds"]),
        obstacles=obstacles,
        start=Pose2.from_array(r["start"]),
        goal=Pose2.from_array(r["goal"]),
        seed=int(d.get("seed", 0)),
        robot=robot,
        lidar=LidarModel(**{_LIDAR[k]: v for k, v in lidar.items()}),
        camera=CameraSpec(**{_CAMERA[k]: v for k, v in cam.items()}),
        name=d.get("name", "custom"),
    )


def load_scenario(path) -> WorldScenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def save_scenario(scenario: WorldScenario, path):
    with open(path, "w") as fh:
        json.dump(scenario.to_dict(), fh, indent=1)
