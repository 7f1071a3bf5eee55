"""Receding-horizon navigation over partitioned point clouds."""
from .astar import OccupancyGrid, ReferencePath, astar_reference, build_grid, grid_astar
from .correction import (
    CorrectionConfig,
    CorrectionResult,
    StateHistory,
    apply_correction,
    detect_stuck,
    failed_push_points,
    reverse_control,
)
from .mpc import (
    HorizonPlan,
    PlannerParams,
    exact_clearance,
    kinematics_step,
    reference_targets,
    rollout,
    solve_horizon,
    tracking_cost,
)
from .navigator import Decision, Navigator, NavigatorConfig
