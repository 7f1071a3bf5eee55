"""Built-in scenario library."""
from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from ..geometry import Pose2
from .world import LidarModel, ObstacleBody, WorldScenario, box

WALL = 0.1
LIGHT = 0.5
HEAVY = 5.0
DEFAULT_LIDAR = LidarModel(range_noise_sigma=0.003)


def border(x1, y1, first_id=100):
    t = WALL
    return [
        box(first_id, x1 / 2, t / 2, x1, t, False, cls="wall"),
        box(first_id + 1, x1 / 2, y1 - t / 2, x1, t, False, cls="wall"),
        box(first_id + 2, t / 2, y1 / 2, t, y1 - 2 * t, False, cls="wall"),
        box(first_id + 3, x1 - t / 2, y1 / 2, t, y1 - 2 * t, False, cls="wall"),
    ]


def _jitter_start(seed, x, y):
    rng = np.random.default_rng(seed)
    dx, dy, dth = rng.uniform(-0.05, 0.05, 3)
    return Pose2(x + dx, y + dy, dth)


def case1(seed=0, lidar=DEFAULT_LIDAR) -> WorldScenario:
    """Light box on the straight route; plenty of room to drive around."""
    obs = border(8.0, 4.0) + [box(1, 4.0, 2.0, 0.4, 0.5, True, LIGHT)]
    return WorldScenario((0, 0, 8, 4), obs, _jitter_start(seed, 1.0, 2.0), Pose2(7.0, 2.0, 0.0),
                         seed, lidar=lidar, name="case1")


def case2(seed=0, lidar=DEFAULT_LIDAR) -> WorldScenario:
    """Divider wall whose only wide opening is blocked by a light box; the side gap is too narrow."""
    x0, x1 = 3.9, 4.1
    cx = 0.5 * (x0 + x1)
    segs = [(WALL, 0.5), (0.68, 1.6), (2.4, 4.0 - WALL)]
    obs = border(8.0, 4.0)
    for k, (a, b) in enumerate(segs):
        obs.append(box(10 + k, cx, 0.5 * (a + b), x1 - x0, b - a, False, cls="wall"))
    obs.append(box(1, 3.55, 2.0, 0.3, 0.5, True, LIGHT))
    return WorldScenario((0, 0, 8, 4), obs, _jitter_start(seed, 1.0, 2.0), Pose2(6.5, 2.0, 0.0),
                         seed, lidar=lidar, name="case2")


def case3(seed=0, lidar=DEFAULT_LIDAR) -> WorldScenario:
    """Fixed shelf on the straight route with a wide way around."""
    obs = border(8.0, 4.0) + [box(1, 4.0, 2.0, 0.4, 0.8, False, cls="shelf")]
    return WorldScenario((0, 0, 8, 4), obs, _jitter_start(seed, 1.0, 2.0), Pose2(7.0, 2.0, 0.0),
                         seed, lidar=lidar, name="case3")


def heavy_box(seed=0, lidar=DEFAULT_LIDAR) -> WorldScenario:
    """A box the filter calls movable that is too heavy to push, with a free way around it."""
    obs = border(8.0, 4.0) + [box(1, 4.0, 2.0, 0.4, 0.6, True, HEAVY)]
    return WorldScenario((0, 0, 8, 4), obs, _jitter_start(seed, 1.0, 2.0), Pose2(7.0, 2.0, 0.0),
                         seed, lidar=lidar, name="heavy")


def fxmy(n_fixed: int, n_movable: int, seed=0, lidar=DEFAULT_LIDAR) -> WorldScenario:
    """A row of boxes across a corridor, ``n_movable`` of them light, the rest fixed.

    Neighbouring boxes and the lower wall sit 0.2 and 0.15 m apart, too
    narrow to drive through, and the row leaves one wide gap near the upper
    wall. Positions jitter with
    ``seed``; which boxes are movable follows a seeded order so the movable
    set for ``M`` is contained in the one for ``M + 1``.
    """
    n = n_fixed + n_movable
    if n_fixed < 0 or n_movable < 0 or n != 4:
        raise ValidationError("fxmy needs four boxes in total")
    rng = np.random.default_rng(seed)
    width, gap = 0.5, 0.2
    x = 5.0 + rng.uniform(-0.1, 0.1, 4)
    dy = rng.uniform(-0.03, 0.03, 4)
    order = rng.permutation(4)
    movable = np.zeros(4, dtype=bool)
    movable[order[:n_movable]] = True
    obs = border(10.0, 3.6)
    for i in range(4):
        cy = 0.25 + width / 2 + i * (width + gap) + dy[i]
        if movable[i]:
            obs.append(box(i + 1, x[i], cy, 0.4, width, True, LIGHT))
        else:
            obs.append(box(i + 1, x[i], cy, 0.4, width, False, cls="shelf"))
    start = _jitter_start(seed + 1000, 1.0, 1.4)
    return WorldScenario((0, 0, 10, 3.6), obs, start, Pose2(9.0, 1.4, 0.0), seed, lidar=lidar,
                         name=f"F{n_fixed}M{n_movable}")


LIBRARY = {"case1": case1, "case2": case2, "case3": case3, "heavy": heavy_box}


def by_name(name: str, seed=0, **kw) -> WorldScenario:
    if name in LIBRARY:
        return LIBRARY[name](seed, **kw)
    if len(name) == 4 and name[0] in "Ff" and name[2] in "Mm" and name[1].isdigit() and name[3].isdigit():
        return fxmy(int(name[1]), int(name[3]), seed, **kw)
    raise ValidationError(f"unknown scenario {name!r}")
