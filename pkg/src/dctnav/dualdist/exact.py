"""Exact point-to-polytope distance through the dual problem.

For a robot ``{x : G x <= g}`` at pose ``(R, t)`` and an obstacle point ``p``,
the distance equals

    max  mu^T (G R^T (p - t) - g)
    s.t. mu >= 0, ||lam|| <= 1, G^T mu + R^T lam = 0.

The coupling constraint fixes ``lam = -R G^T mu`` so feasibility reduces to
``mu >= 0`` and ``||G^T mu|| <= 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConvergenceError, UnsupportedShapeError
from ..geometry import Pose2, RobotPolytope, rotation_of, to_body


@dataclass(frozen=True, eq=False)
class DualPair:
    mu: np.ndarray
    lam: np.ndarray

    def coupling_residual(self, G, pose: Pose2) -> float:
        R = rotation_of(pose)
        return float(np.abs(G.T @ self.mu + R.T @ self.lam).max())

    def is_feasible(self, G, pose: Pose2, tol=1e-6) -> bool:
        return (bool(np.all(self.mu >= 0)) and float(np.linalg.norm(self.lam)) <= 1 + 1e-9
                and self.coupling_residual(G, pose) <= tol)


def closed_form_rect_distance(polytope: RobotPolytope, pose: Pose2, p):
    """Box distance ``||max(|q| - half_extents, 0)||``; returns (distance, closest body point)."""
    if not polytope.is_rectangle:
        raise UnsupportedShapeError("closed-form distance needs a rectangle polytope")
    half = np.array([polytope.half_length, polytope.half_width])
    q = to_body(pose, np.asarray(p, dtype=float)[:2])
    closest = np.clip(q, -half, half)
    return float(np.linalg.norm(np.maximum(np.abs(q) - half, 0.0))), closest


def rect_duals_body(polytope: RobotPolytope, q):
    """Vectorised rectangle duals for body-frame points ``q`` (n, 2).

    Returns ``(mu, lam_body, dist)`` with ``lam_body = R^T lam = -G^T mu``.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    half = np.array([polytope.half_length, polytope.half_width])
    closest = np.clip(q, -half, half)
    diff = q - closest
    dist = np.linalg.norm(diff, axis=1)
    out = dist > 0
    n = np.zeros_like(diff)
    n[out] = diff[out] / dist[out, None]
    mu = np.zeros((len(q), 4))
    mu[:, 0] = np.where(q[:, 0] > half[0], n[:, 0], 0.0)
    mu[:, 1] = np.where(q[:, 0] < -half[0], -n[:, 0], 0.0)
    mu[:, 2] = np.where(q[:, 1] > half[1], n[:, 1], 0.0)
    mu[:, 3] = np.where(q[:, 1] < -half[1], -n[:, 1], 0.0)
    return mu, -n, dist


def dual_objective(pair: DualPair, G, g, pose: Pose2, p) -> float:
    q = to_body(pose, np.asarray(p, dtype=float)[:2])
    return float(pair.mu @ (np.asarray(G) @ q - np.asarray(g)))


def dual_objective_batch(mu, G, g, pose: Pose2, points) -> np.ndarray:
    """Row-wise objective for ``mu`` (n, m) against world points (n, 2+)."""
    q = to_body(pose, np.asarray(points, dtype=float)[:, :2])
    return np.einsum("nm,nm->n", mu, q @ np.asarray(G).T - np.asarray(g))


def objective_pose_gradient(mu, G, pose: Pose2, p) -> np.ndarray:
    """Gradient of ``mu^T (G R^T (p - t) - g)`` with respect to ``(x, y, theta)``.

    With ``mu`` at the optimum this is also the gradient of the distance
    (envelope theorem); the translational part equals ``lam = -R G^T mu``.
    """
    R = rotation_of(pose)
    Gmu = np.asarray(G).T @ np.asarray(mu)
    d = np.asarray(p, dtype=float)[:2] - pose.position
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    dRt = np.array([[-s, c], [-c, -s]])
    return np.array([*(-R @ Gmu), Gmu @ (dRt @ d)])


def _project_ellipsoid(v, U, S, Vt):
    """Euclidean projection onto ``{mu : ||A mu|| <= 1}`` with ``A = U diag(S) Vt``."""
    w = Vt @ v
    a = (S * w) ** 2
    if float(a.sum()) <= 1.0:
        return v
    s2 = S**2
    # secular equation sum a/(1+t s2)^2 = 1 is convex decreasing in t: Newton from 0 is monotone
    t = 0.0
    for _ in range(50):
        den = 1.0 + t * s2
        f = float(np.sum(a / den**2)) - 1.0
        if f < 1e-14:
            break
        t -= f / float(np.sum(-2.0 * a * s2 / den**3))
    return v - Vt.T @ (w * (t * s2 / (1.0 + t * s2)))


def _project_feasible(v, U, S, Vt, iters=40, tol=1e-10):
    """Dykstra's alternating projection onto the orthant and the ellipsoidal cylinder."""
    x = v.copy()
    p = np.zeros_like(v)
    q = np.zeros_like(v)
    for _ in range(iters):
        y = np.maximum(x + p, 0.0)
        p = x + p - y
        x_new = _project_ellipsoid(y + q, U, S, Vt)
        q = y + q - x_new
        if np.abs(x_new - x).max() < tol:
            return np.maximum(x_new, 0.0)
        x = x_new
    return np.maximum(x, 0.0)


def _polish(G, c, mu):
    """Exact optimum on the support of an approximate ``mu`` (one or two faces)."""
    support = np.flatnonzero(mu > 1e-6 * max(mu.max(), 1e-12))
    if len(support) == 1:
        cand = np.zeros_like(mu)
        cand[support] = 1.0
        return cand
    if len(support) == 2:
        Gs = G[support]
        if abs(np.linalg.det(Gs)) < 1e-12:
            return None
        w = np.linalg.solve(Gs, c[support])
        ms = np.linalg.solve(Gs.T, w / np.linalg.norm(w))
        if np.all(ms >= -1e-12):
            cand = np.zeros_like(mu)
            cand[support] = np.maximum(ms, 0.0)
            return cand
    return None


def _solve_general(G, g, q, tol, max_iter):
    c = G @ q - g
    U, S, Vt = np.linalg.svd(G.T, full_matrices=False)
    mu = np.zeros(len(g))
    step = 1.0 / max(np.linalg.norm(c), 1e-12)
    support, stable, moved = None, 0, np.inf
    for _ in range(max_iter):
        new = _project_feasible(mu + step * c, U, S, Vt)
        moved = np.abs(new - mu).max()
        mu = new
        current = tuple(np.flatnonzero(mu > 1e-6 * max(mu.max(), 1e-12)))
        stable = stable + 1 if current == support else 0
        support = current
        if stable >= 3 or moved < 1e-6:
            cand = _polish(G, c, mu)
            if (cand is not None and np.linalg.norm(G.T @ cand) <= 1 + 1e-12
                    and cand @ c >= mu @ c - 1e-9):
                return cand, float(cand @ c)
        if moved < tol:
            return mu, float(mu @ c)
    raise ConvergenceError("dual ascent did not converge", best_residual=float(moved))


def solve_dual_exact(G, g, pose: Pose2, p, tol=1e-9, max_iter=300,
                     polytope: RobotPolytope | None = None) -> tuple[DualPair, float]:
    """Optimal dual pair and distance for one point.

    Rectangles (``polytope.is_rectangle``) take a closed-form path; other
    polytopes run projected-gradient ascent on ``mu``.
    """
    G = np.asarray(G, dtype=float)
    g = np.asarray(g, dtype=float)
    R = rotation_of(pose)
    q = to_body(pose, np.asarray(p, dtype=float)[:2])
    if np.all(G @ q - g <= 0):
        return DualPair(np.zeros(len(g)), np.zeros(2)), 0.0
    if polytope is not None and polytope.is_rectangle:
        mu, lam_b, dist = rect_duals_body(polytope, q[None, :])
        return DualPair(mu[0], R @ lam_b[0]), float(dist[0])
    mu, val = _solve_general(G, g, q, tol, max_iter)
    return DualPair(mu, -R @ (G.T @ mu)), max(val, 0.0)
