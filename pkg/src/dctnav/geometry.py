"""Planar poses, robot polytopes and the pinhole camera used by perception.

Frames used throughout the package:

* world: z up, ground plane at z = 0.
* body (also the lidar frame): origin on the ground below the robot centre,
  x forward, y left, z up. Lidar returns keep their true height as z.
* camera: optical convention, z along the optical axis, x right, y down.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SingularHomographyError, ValidationError

DEPTH_EPS = 1e-6


def wrap_angle(theta):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    if np.isscalar(theta):
        t = math.remainder(float(theta), 2.0 * math.pi)
        return math.pi if t <= -math.pi else t
    t = np.remainder(np.asarray(theta, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    return np.where(t <= -math.pi, math.pi, t)


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        vals = (float(self.x), float(self.y), float(self.theta))
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"non-finite pose {vals}")
        object.__setattr__(self, "x", vals[0])
        object.__setattr__(self, "y", vals[1])
        object.__setattr__(self, "theta", wrap_angle(vals[2]))

    @classmethod
    def from_array(cls, a) -> "Pose2":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def distance_to(self, other: "Pose2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def compose(self, other: "Pose2") -> "Pose2":
        """Apply ``other`` expressed in this pose's frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(self.x + c * other.x - s * other.y,
                     self.y + s * other.x + c * other.y,
                     self.theta + other.theta)


def rotation_of(pose_or_theta) -> np.ndarray:
    theta = pose_or_theta.theta if isinstance(pose_or_theta, Pose2) else float(pose_or_theta)
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def to_body(pose: Pose2, points) -> np.ndarray:
    """World-frame points (n, 2) or (n, 3) into the body frame; z is untouched."""
    pts = np.asarray(points, dtype=float)
    out = pts.copy()
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    dx = pts[..., 0] - pose.x
    dy = pts[..., 1] - pose.y
    out[..., 0] = c * dx + s * dy
    out[..., 1] = -s * dx + c * dy
    return out


def to_world(pose: Pose2, points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    out = pts.copy()
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    out[..., 0] = pose.x + c * pts[..., 0] - s * pts[..., 1]
    out[..., 1] = pose.y + s * pts[..., 0] + c * pts[..., 1]
    return out


@dataclass(frozen=True, eq=False)
class RobotPolytope:
    """Robot body as ``{x : G x <= g}`` in the body frame.

    Rows of ``G`` are unit outward face normals. ``half_length`` and
    ``half_width`` are only set for rectangles built by :func:`rect_polytope`.
    """

    G: np.ndarray
    g: np.ndarray
    half_length: float | None = None
    half_width: float | None = None

    def __post_init__(self):
        G = np.array(self.G, dtype=float)
        g = np.array(self.g, dtype=float).reshape(-1)
        if G.ndim != 2 or G.shape[1] != 2 or G.shape[0] != g.shape[0]:
            raise ValidationError(f"bad polytope shapes G{G.shape} g{g.shape}")
        if G.shape[0] < 3:
            raise ValidationError("a polytope needs at least 3 faces")
        if not np.allclose(np.linalg.norm(G, axis=1), 1.0, atol=1e-12):
            raise ValidationError("rows of G must have unit norm")
        if not np.all(g > 0):
            raise ValidationError("body-frame origin must be strictly interior (g > 0)")
        G.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "g", g)

    @property
    def is_rectangle(self) -> bool:
        return self.half_length is not None and self.half_width is not None

    def contains(self, q, tol=0.0) -> np.ndarray:
        q = np.atleast_2d(q)
        return np.all(q @ self.G.T <= self.g + tol, axis=1)

    def vertices(self) -> np.ndarray:
        """Counterclockwise body-frame vertices (computed by half-plane intersection)."""
        if self.is_rectangle:
            a, b = self.half_length, self.half_width
            return np.array([[a, -b], [a, b], [-a, b], [-a, -b]])
        angles = np.arctan2(self.G[:, 1], self.G[:, 0])
        order = np.argsort(angles)
        G, g = self.G[order], self.g[order]
        verts = []
        m = len(g)
        for i in range(m):
            j = (i + 1) % m
            A = np.vstack([G[i], G[j]])
            verts.append(np.linalg.solve(A, [g[i], g[j]]))
        return np.array(verts)

    def world_vertices(self, pose: Pose2) -> np.ndarray:
        return to_world(pose, self.vertices())

    def to_dict(self) -> dict:
        return {"G": self.G.tolist(), "g": self.g.tolist(),
                "half_length": self.half_length, "half_width": self.half_width}

    @classmethod
    def from_dict(cls, d) -> "RobotPolytope":
        return cls(np.array(d["G"]), np.array(d["g"]), d.get("half_length"), d.get("half_width"))


def rect_polytope(length: float, width: float) -> RobotPolytope:
    """Rectangle centred on the body origin, faces ordered (+x, -x, +y, -y)."""
    if not (length > 0 and width > 0):
        raise ValidationError(f"rectangle dimensions must be positive, got {length} x {width}")
    G = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    g = np.array([length / 2, length / 2, width / 2, width / 2])
    return RobotPolytope(G, g, half_length=length / 2, half_width=width / 2)


# body axes -> optical axes for a level camera looking along +x
_BODY_TO_OPTICAL = np.array([[0.0, -1.0, 0.0],
                             [0.0, 0.0, -1.0],
                             [1.0, 0.0, 0.0]])


@dataclass(frozen=True, eq=False)
class CameraModel:
    K: np.ndarray
    T_lidar_to_camera: np.ndarray
    image_width: int
    image_height: int
    mount_height: float
    plane_normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        K = np.array(self.K, dtype=float)
        T = np.array(self.T_lidar_to_camera, dtype=float)
        n = np.array(self.plane_normal, dtype=float)
        if K.shape != (3, 3) or T.shape != (4, 4):
            raise ValidationError("K must be 3x3 and T_lidar_to_camera 4x4")
        if abs(K[1, 0]) + abs(K[2, 0]) + abs(K[2, 1]) > 0 or K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValidationError("K must be upper triangular with positive focal lengths")
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValidationError("plane normal must be a unit vector")
        if not self.mount_height > 0:
            raise ValidationError("mount height must be positive")
        # camera centre in the lidar/body frame must sit mount_height above the plane
        Rc, tc = T[:3, :3], T[:3, 3]
        centre = -Rc.T @ tc
        if abs(float(n @ centre) - self.mount_height) > 1e-9:
            raise ValidationError("T_lidar_to_camera disagrees with mount_height")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "T_lidar_to_camera", T)
        object.__setattr__(self, "plane_normal", n)
        object.__setattr__(self, "image_width", int(self.image_width))
        object.__setattr__(self, "image_height", int(self.image_height))

    @classmethod
    def forward_facing(cls, width=320, height=240, focal=200.0, mount_height=0.3,
                       pitch=0.0, forward_offset=0.0) -> "CameraModel":
        """Camera above the body origin (plus ``forward_offset``) looking ahead.

        Positive ``pitch`` tilts the optical axis down, in radians.
        """
        K = np.array([[focal, 0.0, width / 2.0], [0.0, focal, height / 2.0], [0.0, 0.0, 1.0]])
        cp, sp = math.cos(pitch), math.sin(pitch)
        # rotate body about its y axis so that +x dips toward the ground
        pitch_rot = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
        R = _BODY_TO_OPTICAL @ pitch_rot.T
        centre = np.array([forward_offset, 0.0, mount_height])
        T = np.eye(4)
        T[:3, :3] = R
        T[:3, 3] = -R @ centre
        return cls(K, T, width, height, mount_height)

    def camera_from_world(self, pose: Pose2) -> np.ndarray:
        """4x4 transform taking world points into the camera frame at ``pose``."""
        c, s = math.cos(pose.theta), math.sin(pose.theta)
        body_from_world = np.eye(4)
        body_from_world[:2, :2] = [[c, s], [-s, c]]
        body_from_world[:2, 3] = -body_from_world[:2, :2] @ [pose.x, pose.y]
        return self.T_lidar_to_camera @ body_from_world

    def centre_in_world(self, pose: Pose2) -> np.ndarray:
        T = self.camera_from_world(pose)
        return -T[:3, :3].T @ T[:3, 3]


def project_points(camera: CameraModel, pose: Pose2, points):
    """Project world points (n, 3) to pixels.

    Returns ``(uv, valid)``; ``valid`` is False for points at or behind the
    depth epsilon, whose ``uv`` entries are NaN.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[0] == 0:
        return np.zeros((0, 2)), np.zeros(0, dtype=bool)
    T = camera.camera_from_world(pose)
    Pc = P @ T[:3, :3].T + T[:3, 3]
    h = Pc @ camera.K.T
    valid = Pc[:, 2] > DEPTH_EPS
    uv = np.full((len(P), 2), np.nan)
    uv[valid] = h[valid, :2] / h[valid, 2:3]
    return uv, valid


def project_point(camera: CameraModel, pose: Pose2, p):
    """Pixel ``(u, v)`` of a world point, or None when it is behind the camera."""
    uv, valid = project_points(camera, pose, np.asarray(p, dtype=float).reshape(1, 3))
    return (float(uv[0, 0]), float(uv[0, 1])) if valid[0] else None


def plane_homography(camera: CameraModel, pose_tau: Pose2, pose_t: Pose2) -> np.ndarray:
    """Ground-plane induced homography from the image at ``pose_tau`` to ``pose_t``.

    ``H = K (R + T n^T / d) K^-1`` where ``(R, T)`` maps camera-tau coordinates
    to camera-t coordinates, ``n`` is the plane normal seen from camera tau
    (pointing away from the camera) and ``d`` the camera height. Normalised so
    that ``H[2, 2] == 1``.
    """
    A = camera.camera_from_world(pose_tau)
    B = camera.camera_from_world(pose_t)
    rel = B @ np.linalg.inv(A)
    R, T = rel[:3, :3], rel[:3, 3]
    # plane normal in the lidar frame, rotated into camera tau, flipped to point at the plane
    n = -(camera.T_lidar_to_camera[:3, :3] @ camera.plane_normal)
    H = camera.K @ (R + np.outer(T, n) / camera.mount_height) @ np.linalg.inv(camera.K)
    scale = H[2, 2]
    if abs(scale) < 1e-12 or abs(np.linalg.det(H)) < 1e-12 * abs(scale) ** 3:
        raise SingularHomographyError("plane homography is singular for this pose pair")
    return H / scale


def apply_homography(H, uv) -> tuple[np.ndarray, np.ndarray]:
    """Map pixels (n, 2); returns mapped pixels and a validity mask (w > 0)."""
    uv = np.atleast_2d(np.asarray(uv, dtype=float))
    h = uv @ H[:, :2].T + H[:, 2]
    valid = h[:, 2] > 1e-12
    out = np.full((len(uv), 2), np.nan)
    out[valid] = h[valid, :2] / h[valid, 2:3]
    return out, valid
