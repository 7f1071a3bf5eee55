"""Global reference path: 8-connected A* on an inflated occupancy grid."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt

from ..errors import UnreachableError, ValidationError
from ..geometry import Pose2

SQRT2 = math.sqrt(2.0)
_MOVES = [(1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
          (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2)]


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    bounds: tuple
    resolution: float
    blocked: np.ndarray    # (nx, ny)
    clearance: np.ndarray  # metres to the nearest occupied cell

    def cell_of(self, xy):
        x0, y0 = self.bounds[0], self.bounds[1]
        i = int(np.floor((xy[0] - x0) / self.resolution))
        j = int(np.floor((xy[1] - y0) / self.resolution))
        return min(max(i, 0), self.blocked.shape[0] - 1), min(max(j, 0), self.blocked.shape[1] - 1)

    def centre(self, cell):
        return np.array([self.bounds[0] + (cell[0] + 0.5) * self.resolution,
                         self.bounds[1] + (cell[1] + 0.5) * self.resolution])


def build_grid(fixed_points, bounds, resolution, inflation) -> OccupancyGrid:
    x0, y0, x1, y1 = bounds
    nx = max(1, int(math.ceil((x1 - x0) / resolution)))
    ny = max(1, int(math.ceil((y1 - y0) / resolution)))
    occ = np.zeros((nx, ny), dtype=bool)
    P = np.asarray(fixed_points, dtype=float).reshape(-1, np.shape(fixed_points)[-1] if len(fixed_points) else 2)
    if len(P):
        i = np.floor((P[:, 0] - x0) / resolution).astype(int)
        j = np.floor((P[:, 1] - y0) / resolution).astype(int)
        keep = (i >= 0) & (i < nx) & (j >= 0) & (j < ny)
        occ[i[keep], j[keep]] = True
    if occ.any():
        clearance = distance_transform_edt(~occ) * resolution
    else:
        clearance = np.full((nx, ny), np.inf)
    return OccupancyGrid(tuple(bounds), resolution, clearance <= inflation, clearance)


@dataclass(frozen=True, eq=False)
class ReferencePath:
    """Waypoints with cumulative arc length; ``grid_cost`` is the raw A* path length."""

    waypoints: np.ndarray   # (n, 3) x, y, heading
    arclength: np.ndarray
    grid_cost: float = 0.0
    cells: tuple = ()

    @classmethod
    def from_points(cls, xy, grid_cost=0.0, cells=()):
        xy = np.asarray(xy, dtype=float)
        if len(xy) == 1:
            xy = np.vstack([xy, xy])
        seg = np.diff(xy, axis=0)
        heading = np.arctan2(seg[:, 1], seg[:, 0])
        heading = np.r_[heading, heading[-1]]
        s = np.r_[0.0, np.cumsum(np.linalg.norm(seg, axis=1))]
        return cls(np.c_[xy, heading], s, float(grid_cost), tuple(cells))

    @property
    def length(self) -> float:
        return float(self.arclength[-1])

    @property
    def xy(self) -> np.ndarray:
        return self.waypoints[:, :2]

    def poses(self):
        return [Pose2(*w) for w in self.waypoints]

    def project(self, p) -> float:
        """Arc length of the closest point on the polyline to ``p``."""
        a, b = self.xy[:-1], self.xy[1:]
        e = b - a
        ee = np.einsum("ij,ij->i", e, e)
        t = np.where(ee > 0, np.einsum("ij,ij->i", np.asarray(p)[:2] - a, e) / np.where(ee > 0, ee, 1), 0.0)
        t = np.clip(t, 0.0, 1.0)
        d = np.linalg.norm(a + t[:, None] * e - np.asarray(p)[:2], axis=1)
        k = int(np.argmin(d))
        return float(self.arclength[k] + t[k] * math.sqrt(ee[k]))

    def point_at(self, s) -> np.ndarray:
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length)
        x = np.interp(s, self.arclength, self.xy[:, 0])
        y = np.interp(s, self.arclength, self.xy[:, 1])
        return np.stack([x, y], axis=-1)


def grid_astar(grid: OccupancyGrid, start, goal, passable=None):
    """Cell path and its length (in metres) between two cells; None if disconnected."""
    free = ~grid.blocked if passable is None else passable
    nx, ny = free.shape
    res = grid.resolution
    gx, gy = goal

    def h(c):
        dx, dy = abs(c[0] - gx), abs(c[1] - gy)
        return res * (max(dx, dy) + (SQRT2 - 1.0) * min(dx, dy))

    g = {start: 0.0}
    parent = {start: None}
    heap = [(h(start), 0.0, start)]
    closed = set()
    while heap:
        f, gc, c = heapq.heappop(heap)
        if c in closed:
            continue
        if c == goal:
            path = [c]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1], gc
        closed.add(c)
        for dx, dy, w in _MOVES:
            n = (c[0] + dx, c[1] + dy)
            if not (0 <= n[0] < nx and 0 <= n[1] < ny) or not free[n] or n in closed:
                continue
            ng = gc + w * res
            if ng < g.get(n, math.inf) - 1e-12:
                g[n] = ng
                parent[n] = c
                heapq.heappush(heap, (ng + h(n), ng, n))
    return None


def _line_free(free, a, b):
    n = int(max(abs(b[0] - a[0]), abs(b[1] - a[1])) * 2) + 1
    xs = np.rint(np.linspace(a[0], b[0], n + 1)).astype(int)
    ys = np.rint(np.linspace(a[1], b[1], n + 1)).astype(int)
    return bool(free[xs, ys].all())


def _shortcut(free, cells):
    out = [cells[0]]
    i = 0
    while i < len(cells) - 1:
        j = len(cells) - 1
        while j > i + 1 and not _line_free(free, cells[i], cells[j]):
            j -= 1
        out.append(cells[j])
        i = j
    return out


def _densify(xy, spacing):
    out = [xy[0]]
    for a, b in zip(xy[:-1], xy[1:]):
        n = max(1, int(math.ceil(np.linalg.norm(b - a) / spacing)))
        for k in range(1, n + 1):
            out.append(a + (b - a) * k / n)
    return np.array(out)


def astar_reference(fixed_points, bounds, resolution, start: Pose2, goal: Pose2, inflation,
                    smooth=True, escape_clearance=None) -> ReferencePath:
    """Reference path avoiding cells within ``inflation`` of any fixed point.

    Cells near the start may be crossed while their clearance stays above
    ``escape_clearance`` so a robot already inside the inflated band can
    leave it. Raises :class:`UnreachableError` when no path exists.
    """
    x0, y0, x1, y1 = bounds
    for p, what in ((start, "start"), (goal, "goal")):
        if not (x0 <= p.x <= x1 and y0 <= p.y <= y1):
            raise ValidationError(f"{what} outside bounds")
    grid = build_grid(fixed_points, bounds, resolution, inflation)
    s, g = grid.cell_of(start.position), grid.cell_of(goal.position)
    if grid.blocked[g]:
        raise UnreachableError("goal cell is occupied after inflation")
    free = ~grid.blocked
    if grid.blocked[s]:
        esc = 0.5 * inflation if escape_clearance is None else escape_clearance
        ii, jj = np.indices(free.shape)
        near = np.hypot(ii - s[0], jj - s[1]) * resolution <= inflation + resolution
        free = free | (near & (grid.clearance >= esc))
        free[s] = True
    found = grid_astar(grid, s, g, free)
    if found is None:
        raise UnreachableError("no grid path between start and goal")
    cells, cost = found
    if smooth and len(cells) > 2:
        cells_used = _shortcut(free, cells)
    else:
        cells_used = cells
    xy = np.array([grid.centre(c) for c in cells_used])
    xy[0] = start.position
    xy = np.vstack([xy, goal.position]) if len(xy) > 1 else np.vstack([start.position, goal.position])
    xy = _densify(xy, resolution)
    return ReferencePath.from_points(xy, cost, tuple(cells))


class FixedPointMemory:
    """Grid of cells where fixed returns were seen, cleared along later beams.

    Only the reference path reads it, so obstacles the robot has turned away
    from still shape the route while the horizon solve sees the live scan.
    """

    def __init__(self, bounds, resolution):
        x0, y0, x1, y1 = bounds
        self.bounds = tuple(bounds)
        self.resolution = resolution
        self.occupied = np.zeros((max(1, int(math.ceil((x1 - x0) / resolution))),
                                  max(1, int(math.ceil((y1 - y0) / resolution)))), dtype=bool)

    def _cells(self, xy):
        r = self.resolution
        i = np.floor((xy[:, 0] - self.bounds[0]) / r).astype(int)
        j = np.floor((xy[:, 1] - self.bounds[1]) / r).astype(int)
        keep = (i >= 0) & (i < self.occupied.shape[0]) & (j >= 0) & (j < self.occupied.shape[1])
        return i[keep], j[keep]

    def update(self, origin, fixed_xy, movable_xy=()):
        """Clear cells crossed by beams to every return, then mark the fixed returns."""
        origin = np.asarray(origin, dtype=float)[:2]
        F = np.asarray(fixed_xy, dtype=float).reshape(-1, 2)
        M = np.asarray(movable_xy, dtype=float).reshape(-1, 2)
        hits = np.vstack([F, M])
        if len(hits):
            d = hits - origin
            rng = np.linalg.norm(d, axis=1)
            stop = rng - 1.5 * self.resolution
            step = 0.5 * self.resolution
            n = int(max(stop.max(), 0.0) / step) + 1
            s = np.arange(n) * step
            ok = s[None, :] < stop[:, None]
            unit = d / np.maximum(rng, 1e-12)[:, None]
            samples = origin + unit[:, None, :] * s[None, :, None]
            self.occupied[self._cells(samples[ok])] = False
        if len(M):
            self.occupied[self._cells(M)] = False
        if len(F):
            self.occupied[self._cells(F)] = True

    def points(self) -> np.ndarray:
        i, j = np.nonzero(self.occupied)
        r = self.resolution
        return np.c_[self.bounds[0] + (i + 0.5) * r, self.bounds[1] + (j + 0.5) * r]
