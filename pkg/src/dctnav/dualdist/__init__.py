"""Point-to-robot distance through the dual problem, exact and learned."""
from importlib import resources

from .demos import DemoSample, DemoSet, SamplingRanges, generate_demos
from .estimator import (
    DualDistanceMLP,
    ExactDualSolver,
    default_polytope,
    evaluate_surrogate,
    project_duals,
    train_mlp,
)
from .exact import (
    DualPair,
    closed_form_rect_distance,
    dual_objective,
    dual_objective_batch,
    objective_pose_gradient,
    solve_dual_exact,
)


def load_default_model() -> DualDistanceMLP:
    """Surrogate trained for the default 0.322 x 0.220 m chassis."""
    with resources.as_file(resources.files("dctnav") / "data" / "dual_mlp.json") as path:
        return DualDistanceMLP.load(path)


__all__ = [
    "DemoSample", "DemoSet", "SamplingRanges", "generate_demos",
    "DualDistanceMLP", "ExactDualSolver", "default_polytope", "project_duals", "train_mlp",
    "DualPair", "closed_form_rect_distance", "dual_objective", "dual_objective_batch",
    "objective_pose_gradient", "solve_dual_exact", "load_default_model", "evaluate_surrogate",
]
