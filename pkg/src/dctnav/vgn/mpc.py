"""Receding-horizon tracking with point-distance penalties.

Unicycle model ``(x, y, theta)`` with controls ``(v, psi)``, Euler steps.
The horizon problem alternates between querying duals for the nearest
fixed points along the current trajectory and minimising tracking cost plus
hinge-squared penalties with those duals held fixed. With fixed feasible
duals the objective ``mu^T (G R^T (p - t) - g)`` is a lower bound on the true
distance for every pose, so the penalty stays conservative while the
trajectory moves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ..geometry import Pose2, RobotPolytope, rect_polytope
from ..dualdist.exact import rect_duals_body
from .astar import ReferencePath


@dataclass(frozen=True)
class PlannerParams:
    horizon: int = 15
    dt: float = 0.1
    u_min: tuple = (-0.3, -1.5)
    u_max: tuple = (1.0, 1.5)
    d_min: float = 0.05
    polytope: RobotPolytope = field(default_factory=lambda: rect_polytope(0.322, 0.220))
    max_outer_iters: int = 4
    convergence_tol: float = 1e-3
    penalty_weights: tuple = (1e3, 1e4, 1e5)
    k_nearest: int = 100
    active_radius: float = 1.5
    inner_iters: int = 40
    smooth_weight: float = 0.02
    speed_fraction: float = 1.0

    def __post_init__(self):
        if self.horizon < 1 or not self.dt > 0 or not self.d_min > 0:
            raise ValueError("need horizon >= 1, dt > 0 and d_min > 0")
        if np.any(np.asarray(self.u_min) > np.asarray(self.u_max)):
            raise ValueError("u_min must not exceed u_max")
        if not self.penalty_weights:
            raise ValueError("penalty schedule is empty")


def kinematics_step(s: Pose2, u, dt: float) -> Pose2:
    v, psi = float(u[0]), float(u[1])
    return Pose2(s.x + v * math.cos(s.theta) * dt, s.y + v * math.sin(s.theta) * dt, s.theta + psi * dt)


def _prefix(a):
    """Cumulative sum with a leading zero."""
    out = np.zeros(len(a) + 1)
    np.cumsum(a, out=out[1:])
    return out


def rollout(s0, U, dt):
    """States (H + 1, 3) with unwrapped heading for controls ``U`` (H, 2)."""
    s0 = s0.as_array() if isinstance(s0, Pose2) else np.asarray(s0, dtype=float)
    U = np.asarray(U, dtype=float)
    S = np.empty((len(U) + 1, 3))
    S[:, 2] = s0[2] + dt * _prefix(U[:, 1])
    th = S[:-1, 2]
    S[:, 0] = s0[0] + dt * _prefix(U[:, 0] * np.cos(th))
    S[:, 1] = s0[1] + dt * _prefix(U[:, 0] * np.sin(th))
    return S


def rollout_backward(S, U, dt, gS):
    """Gradient with respect to ``U`` given gradients ``gS`` on states 1..H."""
    H = len(U)
    # suffix sums: gx[j] = sum of position gradients over states i >= j (j = 1..H)
    gx = np.cumsum(gS[::-1, 0])[::-1]
    gy = np.cumsum(gS[::-1, 1])[::-1]
    theta = S[:H, 2]
    c, s = np.cos(theta), np.sin(theta)
    out = np.empty((H, 2))
    out[:, 0] = dt * (c * gx + s * gy)
    # total effect of theta_j through the positions that follow it
    dth = np.zeros(H + 1)
    dth[1:] = gS[:, 2]
    dth[1:H] += dt * U[1:, 0] * (-s[1:] * gx[1:] + c[1:] * gy[1:])
    out[:, 1] = dt * np.cumsum(dth[::-1])[::-1][1:]
    return out


def reference_targets(reference: ReferencePath, current: Pose2, params: PlannerParams) -> np.ndarray:
    """(H, 2) matched waypoints for states 1..H, spaced by expected per-step travel."""
    s0 = reference.project(current.position)
    step = params.u_max[0] * params.dt * params.speed_fraction
    return reference.point_at(s0 + step * np.arange(1, params.horizon + 1))


def tracking_cost(states, targets) -> float:
    """Sum of squared position errors of states 1..H against their targets."""
    S = np.asarray([s.as_array() if isinstance(s, Pose2) else s for s in states], dtype=float)
    return float(np.sum((S[1:, :2] - np.asarray(targets)) ** 2))


@dataclass(frozen=True, eq=False)
class HorizonPlan:
    states: np.ndarray
    controls: np.ndarray
    predicted_min_distances: np.ndarray
    converged: bool
    iterations: int
    cost: float = 0.0
    cost_history: tuple = ()
    retreat: bool = False

    def poses(self):
        return [Pose2(*s) for s in self.states]


class _Penalty:
    """Hinge-squared penalty over (state, point) pairs with duals held fixed."""

    def __init__(self, G, g, idx, pts, mu, d_bar, n_states=0):
        self.G, self.g = G, g
        self.idx, self.pts, self.mu = idx, pts, mu
        self.Gmu = mu @ G  # (n, 2)
        self.mug = mu @ g
        self.d_bar = d_bar
        self.n_states = n_states

    def _terms(self, S):
        st = S[self.idx]
        c, s = np.cos(st[:, 2]), np.sin(st[:, 2])
        dx = self.pts[:, 0] - st[:, 0]
        dy = self.pts[:, 1] - st[:, 1]
        Gm = self.Gmu
        # mu^T (G R^T d - g) with R^T d = (c dx + s dy, -s dx + c dy)
        val = Gm[:, 0] * (c * dx + s * dy) + Gm[:, 1] * (-s * dx + c * dy) - self.mug
        return val, c, s, dx, dy

    def __call__(self, S, w):
        if len(self.idx) == 0:
            return 0.0, np.zeros_like(S)
        val, c, s, dx, dy = self._terms(S)
        viol = np.maximum(self.d_bar - val, 0.0)
        act = viol > 0
        grad = np.zeros_like(S)
        if not act.any():
            return 0.0, grad
        cost = w * float(viol[act] @ viol[act])
        coef = -2.0 * w * viol[act]
        Gm, c, s, dx, dy = self.Gmu[act], c[act], s[act], dx[act], dy[act]
        # d val / d (x, y) = -R G^T mu ; d val / d theta = (G^T mu) . (dR^T/dtheta) d
        gx = -(c * Gm[:, 0] - s * Gm[:, 1])
        gy = -(s * Gm[:, 0] + c * Gm[:, 1])
        gth = Gm[:, 0] * (-s * dx + c * dy) + Gm[:, 1] * (-c * dx - s * dy)
        n = len(S)
        idx = self.idx[act]
        grad[:, 0] = np.bincount(idx, coef * gx, n)
        grad[:, 1] = np.bincount(idx, coef * gy, n)
        grad[:, 2] = np.bincount(idx, coef * gth, n)
        return cost, grad

    def values(self, S):
        return self._terms(S)[0]


def _query_duals(S, tree, points, engine, params):
    m = len(params.polytope.g)
    if tree is None:
        return np.zeros(0, dtype=int), np.zeros((0, 2)), np.zeros((0, m))
    k = min(params.k_nearest, len(points))
    dist, nn = tree.query(S[1:, :2], k=k, distance_upper_bound=params.active_radius)
    dist, nn = dist.reshape(len(S) - 1, k), nn.reshape(len(S) - 1, k)
    ok = np.isfinite(dist)
    if not ok.any():
        return np.zeros(0, dtype=int), np.zeros((0, 2)), np.zeros((0, m))
    idx = np.broadcast_to(np.arange(1, len(S))[:, None], ok.shape)[ok]
    pts = points[nn[ok]]
    th = S[idx, 2]
    c, s = np.cos(th), np.sin(th)
    d = pts - S[idx, :2]
    q = np.column_stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]])
    mu, _, _ = engine.body_duals(q)
    return idx, pts, mu


def _objective(U, s0, targets, pen, w, params):
    S = rollout(s0, U, params.dt)
    err = S[1:, :2] - targets
    cost = float(np.sum(err**2))
    gS = np.zeros_like(S)
    gS[1:, :2] = 2.0 * err
    pc, pg = pen(S, w)
    cost += pc
    gS += pg
    dU = np.diff(U, axis=0)
    cost += params.smooth_weight * float(np.sum(dU**2))
    gU = rollout_backward(S, U, params.dt, gS[1:])
    gsm = np.zeros_like(U)
    gsm[1:] += 2 * params.smooth_weight * dU
    gsm[:-1] -= 2 * params.smooth_weight * dU
    return cost, gU + gsm


def _pgd(U, s0, targets, pen, w, params, lo, hi):
    f, g = _objective(U, s0, targets, pen, w, params)
    alpha = 0.05
    for _ in range(params.inner_iters):
        for _ in range(30):
            Un = np.clip(U - alpha * g, lo, hi)
            step = Un - U
            fn, gn = _objective(Un, s0, targets, pen, w, params)
            if fn <= f - 1e-4 / alpha * float(np.sum(step**2)):
                break
            alpha *= 0.5
        else:
            break
        sn = float(np.sum(step**2))
        if sn < 1e-14:
            break
        y = gn - g
        sy = float(np.sum(step * y))
        U, f, g = Un, fn, gn
        alpha = float(np.clip(sn / sy, 1e-5, 10.0)) if sy > 1e-16 else min(alpha * 2.0, 10.0)
    return U, f


def pursuit_guess(current: Pose2, targets, params: PlannerParams) -> np.ndarray:
    """Cold-start controls from steering towards each matched waypoint in turn."""
    lo, hi = np.asarray(params.u_min), np.asarray(params.u_max)
    U = np.zeros((params.horizon, 2))
    s = current.as_array().copy()
    for h in range(params.horizon):
        d = targets[h] - s[:2]
        err = math.atan2(math.sin(math.atan2(d[1], d[0]) - s[2]), math.cos(math.atan2(d[1], d[0]) - s[2]))
        psi = np.clip(2.5 * err, lo[1], hi[1])
        v = np.clip(min(np.hypot(*d) / params.dt, hi[0]) * max(math.cos(err), 0.0), lo[0], hi[0])
        U[h] = v, psi
        s = np.array([s[0] + v * math.cos(s[2]) * params.dt, s[1] + v * math.sin(s[2]) * params.dt,
                      s[2] + psi * params.dt])
    return U


def exact_clearance(polytope: RobotPolytope, pose: Pose2, points) -> float:
    """Exact distance from the robot at ``pose`` to the nearest point (inf if none)."""
    P = np.asarray(points, dtype=float)
    if len(P) == 0:
        return math.inf
    from ..geometry import to_body
    if polytope.is_rectangle:
        _, _, d = rect_duals_body(polytope, to_body(pose, P[:, :2]))
        return float(d.min())
    from ..dualdist.exact import solve_dual_exact
    return min(solve_dual_exact(polytope.G, polytope.g, pose, p)[1] for p in P[:, :2])


def _retreat_plan(current, points, params, tree):
    """Back away along the distance gradient of the nearest point."""
    poly = params.polytope
    _, k = tree.query(current.position)
    from ..dualdist.exact import solve_dual_exact
    pair, _ = solve_dual_exact(poly.G, poly.g, current, points[k], polytope=poly)
    lam = pair.lam if np.linalg.norm(pair.lam) > 0 else -np.array([math.cos(current.theta), math.sin(current.theta)])
    # distance grows along lam; the unicycle moves along its heading
    heading = np.array([math.cos(current.theta), math.sin(current.theta)])
    v = float(np.clip(np.sign(lam @ heading) * params.u_max[0] * 0.5, params.u_min[0], params.u_max[0]))
    U = np.tile([v, 0.0], (params.horizon, 1))
    return U


def _feasible_prefix(U, s0, points, params, d_bar):
    """Zero the speed from the first guessed state that comes within ``d_bar`` of a point."""
    if len(points) == 0:
        return U
    S = rollout(s0, U, params.dt)
    for k in range(1, len(S)):
        if exact_clearance(params.polytope, Pose2(*S[k]), points) < d_bar:
            U = U.copy()
            U[k - 1:, 0] = 0.0
            break
    return U


def solve_horizon(current: Pose2, fixed_points, reference: ReferencePath, params: PlannerParams,
                  engine, warm_start=None, margin=None) -> HorizonPlan:
    lo, hi = np.asarray(params.u_min, float), np.asarray(params.u_max, float)
    points = np.asarray(fixed_points, dtype=float)
    points = points[:, :2] if len(points) else np.zeros((0, 2))
    tree = cKDTree(points) if len(points) else None
    margin = getattr(engine, "margin_", 0.0) if margin is None else margin
    d_bar = params.d_min + margin
    s0 = current.as_array()
    targets = reference_targets(reference, current, params)
    G, g = params.polytope.G, params.polytope.g

    if tree is not None and exact_clearance(params.polytope, current, points) < params.d_min:
        U = _retreat_plan(current, points, params, tree)
        S = rollout(s0, U, params.dt)
        mins = np.array([exact_clearance(params.polytope, Pose2(*s), points) for s in S[1:]])
        return HorizonPlan(S, U, mins, False, 0, tracking_cost(S, targets), retreat=True)

    if warm_start is not None:
        U = np.clip(np.asarray(warm_start, dtype=float), lo, hi)
    else:
        U = np.clip(pursuit_guess(current, targets, params), lo, hi)
    U = np.clip(_feasible_prefix(U, s0, points, params, d_bar), lo, hi)
    S = rollout(s0, U, params.dt)
    converged = False
    history = []
    it = 0
    pen = None
    for it in range(1, params.max_outer_iters + 1):
        w = params.penalty_weights[min(it - 1, len(params.penalty_weights) - 1)]
        pen = _Penalty(G, g, *_query_duals(S, tree, points, engine, params), d_bar)
        U, f = _pgd(U, s0, targets, pen, w, params, lo, hi)
        S_new = rollout(s0, U, params.dt)
        change = float(np.abs(S_new[:, :2] - S[:, :2]).max())
        S = S_new
        history.append(f)
        violated = len(pen.idx) and float(pen.values(S).min()) < d_bar - 1e-3
        if change < params.convergence_tol and not violated:
            converged = True
            break
    final = _Penalty(G, g, *_query_duals(S, tree, points, engine, params), d_bar)
    mins = np.full(params.horizon, np.inf)
    if len(final.idx):
        vals = final.values(S)
        np.minimum.at(mins, final.idx - 1, vals)
    return HorizonPlan(S, U, mins, converged, it, tracking_cost(S, targets), tuple(history))
