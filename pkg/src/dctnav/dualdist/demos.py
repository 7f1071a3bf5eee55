from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import ConvergenceError, ValidationError
from ..geometry import Pose2, RobotPolytope, rotation_of
from .exact import rect_duals_body, solve_dual_exact

log = logging.getLogger(__name__)

IDENTITY = Pose2(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class SamplingRanges:
    r_min: float = 0.0
    r_max: float = 5.0
    count: int = 100_000

    def __post_init__(self):
        if not (0 <= self.r_min < self.r_max):
            raise ValidationError(f"need 0 <= r_min < r_max, got [{self.r_min}, {self.r_max}]")
        if self.count < 0:
            raise ValidationError("count must be non-negative")


@dataclass(frozen=True, eq=False)
class DemoSample:
    G: np.ndarray
    g: np.ndarray
    pose: Pose2
    point: np.ndarray
    mu: np.ndarray
    lam: np.ndarray


@dataclass(eq=False)
class DemoSet:
    """Demonstrations stored column-wise; indexing yields :class:`DemoSample`."""

    polytope: RobotPolytope
    points: np.ndarray
    mu: np.ndarray
    lam: np.ndarray
    skipped: int = 0

    def __len__(self):
        return len(self.points)

    def __getitem__(self, i) -> DemoSample:
        return DemoSample(self.polytope.G, self.polytope.g, IDENTITY,
                          self.points[i], self.mu[i], self.lam[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def targets(self) -> np.ndarray:
        """(n, m + 2) training targets: mu then lambda."""
        return np.hstack([self.mu, self.lam])


def sample_annulus(rng, r_min, r_max, n):
    # uniform over area
    r = np.sqrt(rng.uniform(r_min**2, r_max**2, n))
    phi = rng.uniform(-np.pi, np.pi, n)
    return np.c_[r * np.cos(phi), r * np.sin(phi)]


def generate_demos(ranges: SamplingRanges, polytope: RobotPolytope, seed: int = 0) -> DemoSet:
    """Points in the body-frame annulus labelled with exact optimal duals."""
    rng = np.random.default_rng(seed)
    m = len(polytope.g)
    if ranges.count == 0:
        return DemoSet(polytope, np.zeros((0, 2)), np.zeros((0, m)), np.zeros((0, 2)))
    points = sample_annulus(rng, ranges.r_min, ranges.r_max, ranges.count)
    if polytope.is_rectangle:
        mu, lam, _ = rect_duals_body(polytope, points)
        return DemoSet(polytope, points, mu, lam)
    mus, lams, kept = [], [], []
    skipped = 0
    R = rotation_of(IDENTITY)
    i = 0
    while len(kept) < ranges.count:
        p = points[i] if i < len(points) else sample_annulus(rng, ranges.r_min, ranges.r_max, 1)[0]
        i += 1
        try:
            pair, _ = solve_dual_exact(polytope.G, polytope.g, IDENTITY, p)
        except ConvergenceError as exc:
            skipped += 1
            log.warning("skipping demo sample %s: %s", p, exc)
            continue
        kept.append(p)
        mus.append(pair.mu)
        lams.append(R.T @ pair.lam)
    return DemoSet(polytope, np.array(kept), np.array(mus), np.array(lams), skipped=skipped)
