"""Estimator front ends for the point-to-robot dual distance.

Both engines map body-frame obstacle points ``q = R^T (p - t)`` to dual
variables ``(mu, R^T lam)`` through ``predict`` and share the pose-aware
helpers in :class:`DistanceEngineMixin` used by the planner.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..errors import ValidationError
from ..geometry import Pose2, RobotPolytope, rect_polytope, rotation_of, to_body
from .demos import DemoSet
from .exact import rect_duals_body, solve_dual_exact
from .mlp import MODEL_FORMAT, MODEL_VERSION, MlpNet, read_model_file, sgd_train, write_model_file

CHASSIS_LENGTH = 0.322
CHASSIS_WIDTH = 0.220


def default_polytope() -> RobotPolytope:
    return rect_polytope(CHASSIS_LENGTH, CHASSIS_WIDTH)


def into_unit_disk(v):
    """Scale rows of ``v`` so every norm is at most 1 in floating point."""
    v = np.asarray(v, dtype=float)
    v = v / np.maximum(np.linalg.norm(v, axis=1), 1.0)[:, None]
    over = np.linalg.norm(v, axis=1) > 1.0
    while over.any():
        v[over] = np.nextafter(v[over], 0.0)
        over = np.linalg.norm(v, axis=1) > 1.0
    return v


def project_duals(mu, lam_body, G):
    """Map raw duals into the feasible set.

    ``mu`` is clipped to be non-negative and shrunk so ``||G^T mu|| <= 1``;
    ``lam`` is scaled into the unit disk. Returns the projected pair and the
    coupling residual ``||G^T mu + R^T lam||_inf`` per row.
    """
    mu = np.maximum(np.asarray(mu, dtype=float), 0.0)
    norm = np.linalg.norm(mu @ G, axis=1)
    mu = mu / np.maximum(norm, 1.0)[:, None]
    lam_body = into_unit_disk(lam_body)
    residual = np.abs(mu @ G + lam_body).max(axis=1) if len(mu) else np.zeros(0)
    return mu, lam_body, residual


class DistanceEngineMixin:
    """Pose-level queries on top of ``predict`` (body-frame duals)."""

    def infer_duals(self, pose: Pose2, points):
        """Projected duals for world points; returns ``(mu, lam_world, residual)``."""
        P = np.asarray(points, dtype=float).reshape(len(points), -1) if len(points) else np.zeros((0, 2))
        m = len(self.polytope_.g)
        if len(P) == 0:
            return np.zeros((0, m)), np.zeros((0, 2)), np.zeros(0)
        mu, lam_b, residual = self.body_duals(to_body(pose, P[:, :2]))
        return mu, into_unit_disk(lam_b @ rotation_of(pose).T), residual

    def body_duals(self, Q):
        """Projected ``(mu, lam_body, residual)`` for body-frame points ``Q``."""
        m = len(self.polytope_.g)
        raw = self.predict(Q)
        return project_duals(raw[:, :m], raw[:, m:], self.polytope_.G)

    def distances(self, pose: Pose2, points) -> np.ndarray:
        """Dual objective per world point (a lower bound on the true distance)."""
        P = np.asarray(points, dtype=float)
        if P.size == 0:
            return np.zeros(0)
        q = to_body(pose, P.reshape(len(P), -1)[:, :2])
        mu, _, _ = self.infer_duals(pose, P)
        return np.einsum("nm,nm->n", mu, q @ self.polytope_.G.T - self.polytope_.g)

    def min_distance(self, pose: Pose2, points):
        """``(distance, index)`` of the closest point; ``(inf, -1)`` for an empty set."""
        P = np.asarray(points, dtype=float)
        if P.size == 0:
            return float("inf"), -1
        d = self.distances(pose, P)
        i = int(np.argmin(d))
        return float(d[i]), i


class ExactDualSolver(DistanceEngineMixin, BaseEstimator):
    """Optimal duals from the exact solver; ``fit`` only records the polytope."""

    def __init__(self, polytope: RobotPolytope | None = None):
        self.polytope = polytope

    def fit(self, X=None, y=None):
        self.polytope_ = self.polytope if self.polytope is not None else default_polytope()
        self.n_outputs_ = len(self.polytope_.g) + 2
        return self

    def predict(self, X):
        check_is_fitted(self, "polytope_")
        Q = check_array(X, ensure_min_samples=0)
        poly = self.polytope_
        if poly.is_rectangle:
            mu, lam, _ = rect_duals_body(poly, Q)
            return np.hstack([mu, lam])
        out = np.zeros((len(Q), len(poly.g) + 2))
        identity = Pose2(0.0, 0.0, 0.0)
        for i, q in enumerate(Q):
            pair, _ = solve_dual_exact(poly.G, poly.g, identity, q)
            out[i] = np.r_[pair.mu, pair.lam]
        return out

    @property
    def margin_(self) -> float:
        return 0.0


class DualDistanceMLP(DistanceEngineMixin, RegressorMixin, BaseEstimator):
    """Learned surrogate for the dual solver.

    Parameters
    ----------
    polytope : RobotPolytope, optional
        Robot body the model is trained for; defaults to the 0.322 x 0.220 m chassis.
    hidden_units, n_hidden : int
        Width and number of hidden layers.
    epochs, learning_rate, momentum, batch_size : training schedule for SGD.
    random_state : int
        Seeds weight initialisation and minibatch order.
    """

    def __init__(self, polytope=None, hidden_units=32, n_hidden=6, epochs=100,
                 learning_rate=0.05, momentum=0.9, batch_size=256, random_state=0):
        self.polytope = polytope
        self.hidden_units = hidden_units
        self.n_hidden = n_hidden
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.random_state = random_state

    def _decode(self, h):
        m = len(self.polytope_.g)
        pred = h.copy()
        pred[:, :m] = 0.5 * self.mu_max_ * (h[:, :m] + 1.0)
        dpred = np.ones_like(h)
        dpred[:, :m] = 0.5 * self.mu_max_
        return pred, dpred

    def _init(self, n_features, n_outputs, rng):
        dims = [n_features] + [self.hidden_units] * self.n_hidden + [n_outputs]
        norm = [False] + [True] * (self.n_hidden - 1)
        self.net_ = MlpNet(dims, norm, rng)

    def fit(self, X, y, callback=None):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        self.polytope_ = self.polytope if self.polytope is not None else default_polytope()
        m = len(self.polytope_.g)
        if y.shape[1] != m + 2:
            raise ValidationError(f"targets need {m + 2} columns (mu then lambda)")
        rng = np.random.default_rng(self.random_state)
        self.n_features_in_ = X.shape[1]
        self.mu_max_ = float(max(y[:, :m].max(), 1e-6))
        self.input_scale_ = float(max(np.abs(X).max(), 1e-6))
        self._init(X.shape[1], y.shape[1], rng)
        self.loss_curve_ = sgd_train(
            self.net_, X / self.input_scale_, y, self.epochs, self.learning_rate,
            self.batch_size, self.momentum, rng, self._decode, callback=callback)
        self.margin_ = 0.0
        return self

    def fit_demos(self, demos: DemoSet, callback=None):
        self.polytope = demos.polytope
        return self.fit(demos.points, demos.targets, callback=callback)

    def predict(self, X):
        """Raw (unprojected) ``(mu, R^T lam)`` for body-frame points."""
        check_is_fitted(self, "net_")
        X = check_array(X, ensure_min_samples=0)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} input features, got {X.shape[1]}")
        if len(X) == 0:
            return np.zeros((0, self.net_.layer_dims[-1]))
        pred, _ = self._decode(self.net_.forward(X / self.input_scale_))
        return pred

    def calibrate_margin(self, X, quantile=0.99):
        """Store the ``quantile`` of the coupling residual on sample points as ``margin_``."""
        raw = self.predict(X)
        m = len(self.polytope_.g)
        _, _, residual = project_duals(raw[:, :m], raw[:, m:], self.polytope_.G)
        self.margin_ = float(np.quantile(residual, quantile))
        return self.margin_

    def save(self, path):
        check_is_fitted(self, "net_")
        header = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "inputDim": self.n_features_in_,
            "outputDim": self.net_.layer_dims[-1],
            "layerDims": self.net_.layer_dims,
            "activations": ["relu"] * self.n_hidden + ["tanh"],
            "layerNorm": self.net_.layer_norm,
            "muMax": self.mu_max_,
            "inputScale": self.input_scale_,
            "margin": self.margin_,
            "polytope": self.polytope_.to_dict(),
            "lossCurve": list(self.loss_curve_),
        }
        write_model_file(path, header, self.net_.to_dict())

    @classmethod
    def load(cls, path) -> "DualDistanceMLP":
        header, layers = read_model_file(path)
        dims = header["layerDims"]
        if dims[0] != header["inputDim"] or dims[-1] != header["outputDim"]:
            raise ValidationError("layer dims disagree with input/output dims")
        poly = RobotPolytope.from_dict(header["polytope"])
        model = cls(polytope=poly, hidden_units=dims[1], n_hidden=len(dims) - 2)
        model.polytope_ = poly
        model.net_ = MlpNet.from_dict(dims, header["layerNorm"], layers)
        model.n_features_in_ = header["inputDim"]
        model.mu_max_ = float(header["muMax"])
        model.input_scale_ = float(header["inputScale"])
        model.margin_ = float(header.get("margin", 0.0))
        model.loss_curve_ = list(header.get("lossCurve", []))
        return model


def train_mlp(demos: DemoSet, epochs=100, learning_rate=0.05, batch_size=256, seed=0,
              **kwargs) -> DualDistanceMLP:
    if len(demos) == 0:
        raise ValidationError("cannot train on an empty demonstration set")
    model = DualDistanceMLP(polytope=demos.polytope, epochs=epochs, learning_rate=learning_rate,
                            batch_size=batch_size, random_state=seed, **kwargs)
    return model.fit_demos(demos)


def evaluate_surrogate(model, count=10_000, seed=12345, r_min=0.0, r_max=5.0) -> dict:
    """Distance error of ``model`` on fresh annulus points labelled by the exact duals."""
    from .demos import SamplingRanges, generate_demos

    poly = model.polytope_
    held = generate_demos(SamplingRanges(r_min, r_max, count), poly, seed=seed)
    if len(held) == 0:
        raise ValidationError("evaluation needs at least one sample")
    q = held.points
    ref = np.einsum("nm,nm->n", held.mu, q @ poly.G.T - poly.g)
    mu, _, residual = model.body_duals(q)
    est = np.einsum("nm,nm->n", mu, q @ poly.G.T - poly.g)
    err = est - ref
    return {
        "sampleCount": int(len(q)),
        "heldOutDistanceMAE": float(np.mean(np.abs(err))),
        "maxAbsError": float(np.max(np.abs(err))),
        "maxOverestimate": float(np.max(err)),
        "couplingResidualP99": float(np.quantile(residual, 0.99)),
    }
