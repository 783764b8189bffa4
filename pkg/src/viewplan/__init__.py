"""Point-cloud-conditioned view synthesis: rendering, next-best-view planning and evaluation."""

from .completer import (
    CompletionRequest,
    CompletionResponse,
    OracleCompleter,
    PassthroughCompleter,
    RemoteCompleter,
    oracle_complete,
    passthrough_complete,
    remote_complete,
)
from .geometry import (
    CameraIntrinsics,
    Pose,
    Trajectory,
    estimate_focal_weiszfeld,
    interpolate_poses,
    look_at,
    project,
    unproject,
)
from .metrics import (
    normalize_trajectory,
    psnr,
    rotation_distance,
    surface_coverage,
    translation_distance,
)
from .planner import (
    PlannerConfig,
    SearchSpace,
    build_search_space,
    circular_baseline_trajectory,
    plan_and_synthesize,
    sample_candidates,
    select_nbv,
    utility,
)
from .pointcloud import ColoredPointCloud, PointMap, cloud_from_pointmaps, fuse_novel_view, read_ply, write_ply
from .renderer import HoleMask, RenderOutput, hole_ratio, render, render_trajectory
from .scenes import SyntheticScene, make_synthetic_scene

__version__ = "0.1.0"

__all__ = [
    "build_search_space",
    "CameraIntrinsics",
    "circular_baseline_trajectory",
    "cloud_from_pointmaps",
    "ColoredPointCloud",
    "CompletionRequest",
    "CompletionResponse",
    "estimate_focal_weiszfeld",
    "fuse_novel_view",
    "hole_ratio",
    "HoleMask",
    "interpolate_poses",
    "look_at",
    "make_synthetic_scene",
    "normalize_trajectory",
    "oracle_complete",
    "OracleCompleter",
    "passthrough_complete",
    "PassthroughCompleter",
    "plan_and_synthesize",
    "PlannerConfig",
    "PointMap",
    "Pose",
    "project",
    "psnr",
    "read_ply",
    "remote_complete",
    "RemoteCompleter",
    "render",
    "render_trajectory",
    "RenderOutput",
    "rotation_distance",
    "sample_candidates",
    "SearchSpace",
    "select_nbv",
    "surface_coverage",
    "SyntheticScene",
    "Trajectory",
    "translation_distance",
    "unproject",
    "utility",
    "write_ply",
]
