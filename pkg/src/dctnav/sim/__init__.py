"""Deterministic 2D world with lidar, camera detections and quasi-static pushing."""
from .episode import EpisodeConfig, EpisodeTrace, Metrics, compute_metrics, run_episode
from .physics import StepResult, polygon_distance, sat_mtv, step_world
from .scenarios import by_name, case1, case2, case3, fxmy, heavy_box
from .sensors import LidarScan, make_camera, raycast_scan, render_instances, synth_detections
from .world import (
    CameraSpec,
    LidarModel,
    ObstacleBody,
    RobotSpec,
    WorldScenario,
    box,
    load_scenario,
    save_scenario,
    scenario_from_dict,
)
