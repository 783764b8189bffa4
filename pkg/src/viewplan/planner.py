"""Next-best-view camera trajectory planning with iterative view synthesis.

Cameras live on a quarter sphere around the scene point under the reference
view's center pixel. Each planning step looks at the ``K`` grid poses nearest
the current camera, renders the hole mask of the current cloud at each one,
scores the hole ratio with a thresholded utility and moves to the best pose.
The path there is completed by a view completer and the completed frames are
back-projected into the cloud.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .completer import CompletionRequest, ViewCompleter, validate_response
from .errors import (
    CompleterError,
    DegenerateRender,
    InvalidCount,
    NotEnoughCandidates,
    ValidationError,
)
from .geometry import CameraIntrinsics, Pose, Trajectory, interpolate_poses, look_at, unproject
from .pointcloud import ColoredPointCloud, fuse_novel_view
from .renderer import RenderOutput, hole_ratio, render_mask, render_trajectory

HALF_PI = math.pi / 2


@dataclass(frozen=True)
class PlannerConfig:
    max_steps: int = 3  # N; the loop runs N + 1 times
    candidates_per_step: int = 5  # K
    threshold: float = 0.6  # Θ
    frames_per_segment: int = 25  # L
    neighborhood_deg: float = 30.0
    splat_radius_px: int = 1
    grid_azimuth: int = 12
    grid_elevation: int = 4
    voxel_size: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.max_steps < 0:
            raise ValidationError("N must be non-negative")
        if self.candidates_per_step < 1:
            raise ValidationError("K must be at least 1")
        if not 0 < self.threshold < 1:
            raise ValidationError("theta must lie in (0, 1)")
        if self.frames_per_segment < 2:
            raise ValidationError("L must be at least 2")
        if not self.neighborhood_deg > 0:
            raise ValidationError("neighborhood_deg must be positive")
        if self.splat_radius_px < 0:
            raise ValidationError("splat_radius_px must be non-negative")
        if self.grid_azimuth < 1 or self.grid_elevation < 1:
            raise ValidationError("grid dimensions must be positive")
        if self.voxel_size < 0:
            raise ValidationError("voxel_rho must be non-negative")

    _KEYS = {
        "N": "max_steps",
        "K": "candidates_per_step",
        "theta": "threshold",
        "L": "frames_per_segment",
        "voxel_rho": "voxel_size",
    }

    def to_dict(self) -> dict:
        inv = {v: k for k, v in self._KEYS.items()}
        return {inv.get(k, k): v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerConfig":
        known = {f for f in cls.__dataclass_fields__}
        kwargs = {}
        for key, value in d.items():
            name = cls._KEYS.get(key, key)
            if name not in known:
                raise ValidationError(f"unknown planner config key {key!r}")
            kwargs[name] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "PlannerConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class SearchSpace:
    """Spherical patch of camera positions, all looking at ``center``.

    Angles are measured in the frame of the reference camera: azimuth turns
    toward its right axis, elevation toward its up axis (image -y).
    """

    center: np.ndarray
    radius: float
    azimuth_range: tuple = (-HALF_PI, HALF_PI)
    elevation_range: tuple = (0.0, HALF_PI)
    grid_azimuth: int = 12
    grid_elevation: int = 4
    forward: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    right: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, -1.0, 0.0]))

    def __post_init__(self):
        for name in ("center", "forward", "right", "up"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if not self.radius > 0:
            raise ValidationError(f"radius must be positive, got {self.radius}")
        a0, a1 = self.azimuth_range
        e0, e1 = self.elevation_range
        if not (a1 > a0 and e1 > e0):
            raise ValidationError("search space angle intervals must be non-degenerate")
        if self.grid_azimuth < 1 or self.grid_elevation < 1:
            raise ValidationError("grid dimensions must be positive")

    def position(self, azimuth: float, elevation: float) -> np.ndarray:
        offset = (
            -math.cos(elevation) * math.cos(azimuth) * self.forward
            + math.cos(elevation) * math.sin(azimuth) * self.right
            + math.sin(elevation) * self.up
        )
        return self.center + self.radius * offset

    def angles_of(self, position) -> tuple[float, float]:
        """(azimuth, elevation) of the direction from ``center`` to ``position``."""
        rel = np.asarray(position, dtype=np.float64) - self.center
        rel = rel / np.linalg.norm(rel)
        el = math.asin(float(np.clip(rel @ self.up, -1.0, 1.0)))
        az = math.atan2(float(rel @ self.right), float(-(rel @ self.forward)))
        return az, el

    def pose_at(self, azimuth: float, elevation: float) -> Pose:
        return look_at(self.position(azimuth, elevation), self.center, self.up)

    def grid_angles(self) -> tuple[np.ndarray, np.ndarray]:
        """Azimuth and elevation samples; a node exactly at a pole is left out."""
        a0, a1 = self.azimuth_range
        e0, e1 = self.elevation_range
        az = np.linspace(a0, a1, self.grid_azimuth) if self.grid_azimuth > 1 else np.array([(a0 + a1) / 2])
        n = self.grid_elevation
        if n == 1:
            el = np.array([e0])
        elif abs(e1) >= HALF_PI - 1e-12:
            el = e0 + (e1 - e0) * np.arange(n) / n
        else:
            el = np.linspace(e0, e1, n)
        return az, el

    def grid(self) -> list[tuple[float, float]]:
        """Grid nodes as (azimuth, elevation), elevation-major."""
        az, el = self.grid_angles()
        return [(a, e) for e in el for a in az]

    def grid_poses(self) -> list[Pose]:
        return [self.pose_at(a, e) for a, e in self.grid()]

    def half(self, side: str) -> "SearchSpace":
        """The left (negative azimuth) or right half of this space."""
        a0, a1 = self.azimuth_range
        mid = (a0 + a1) / 2
        if side == "left":
            return replace(self, azimuth_range=(a0, mid))
        if side == "right":
            return replace(self, azimuth_range=(mid, a1))
        raise ValidationError(f"side must be 'left' or 'right', got {side!r}")

    def to_dict(self) -> dict:
        return {
            "center": self.center.tolist(),
            "radius": self.radius,
            "azimuth_range_deg": [math.degrees(x) for x in self.azimuth_range],
            "elevation_range_deg": [math.degrees(x) for x in self.elevation_range],
            "grid_azimuth": self.grid_azimuth,
            "grid_elevation": self.grid_elevation,
        }


def build_search_space(
    reference_render: RenderOutput,
    reference_pose: Pose,
    k: CameraIntrinsics,
    grid_azimuth: int = 12,
    grid_elevation: int = 4,
    azimuth_range: tuple = (-HALF_PI, HALF_PI),
    elevation_range: tuple = (0.0, HALF_PI),
) -> SearchSpace:
    """Quarter sphere centered on the scene point under the reference center pixel.

    The radius is that pixel's depth, or the median finite depth when the
    center pixel is a hole.
    """
    depth = np.asarray(reference_render.depth)
    cu, cv = k.width // 2, k.height // 2
    d = float(depth[cv, cu])
    if reference_render.mask.values[cv, cu] or not (math.isfinite(d) and d > 0):
        finite = depth[np.isfinite(depth) & (depth > 0)]
        if finite.size == 0:
            raise DegenerateRender("reference render has no covered pixels")
        d = float(np.median(finite))
    center = unproject(cu, cv, d, reference_pose, k)
    r = reference_pose.rotation
    return SearchSpace(
        center, d, tuple(azimuth_range), tuple(elevation_range), grid_azimuth, grid_elevation,
        forward=r[:, 2], right=r[:, 0], up=-r[:, 1],
    )


def utility(ratio: float, theta: float) -> float:
    """Hole-ratio utility: the ratio up to ``theta``, then ``1 - ratio``."""
    return ratio if ratio <= theta else 1.0 - ratio


def candidate_indices(space: SearchSpace, current: Pose, k: int, neighborhood_deg: float) -> list[int]:
    """Grid node indices chosen around ``current``; see :func:`sample_candidates`."""
    if k < 1:
        raise InvalidCount(f"K must be at least 1, got {k}")
    nodes = space.grid()
    if k > len(nodes) - 1:
        raise NotEnoughCandidates(f"K={k} but the grid only offers {len(nodes) - 1} candidates")
    dirs = np.array([space.position(a, e) for a, e in nodes]) - space.center
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    rel = current.position - space.center
    n = np.linalg.norm(rel)
    c = rel / n if n > 1e-12 else -space.forward
    ang = np.degrees(np.arccos(np.clip(dirs @ c, -1.0, 1.0)))
    order = np.lexsort((np.arange(len(nodes)), ang))  # by angle, then index
    nearest = order[0]
    rest = [int(j) for j in order[1:]]
    pool = [j for j in rest if ang[j] <= neighborhood_deg]
    if len(pool) < k:
        pool = rest[:k]
    # stratify by azimuth column: round-robin over columns, best column first
    columns: dict[int, list[int]] = {}
    for j in pool:
        columns.setdefault(j % space.grid_azimuth, []).append(j)
    picked: list[int] = []
    depth = 0
    while len(picked) < k:
        for col in columns.values():
            if depth < len(col) and len(picked) < k:
                picked.append(col[depth])
        depth += 1
    assert nearest not in picked
    return picked


def sample_candidates(space: SearchSpace, current: Pose, k: int, neighborhood_deg: float = 30.0) -> list[Pose]:
    """The ``k`` grid poses closest (in angle about ``center``) to ``current``.

    The node nearest ``current`` is excluded. Nodes within ``neighborhood_deg``
    form the pool (widened to the ``k`` nearest if too small) and are drawn
    round-robin across azimuth columns so one column cannot take every slot.
    """
    nodes = space.grid()
    return [space.pose_at(*nodes[j]) for j in candidate_indices(space, current, k, neighborhood_deg)]


class Selection(NamedTuple):
    index: int
    ratios: list
    utilities: list


def select_nbv(
    cloud: ColoredPointCloud,
    candidates: Sequence[Pose],
    k: CameraIntrinsics,
    theta: float,
    splat_radius_px: int = 1,
) -> Selection:
    """Render each candidate's hole mask and return the utility argmax (lowest index on ties)."""
    if not candidates:
        raise ValidationError("no candidate poses")
    ratios = [hole_ratio(render_mask(cloud, p, k, splat_radius_px)) for p in candidates]
    utils = [utility(r, theta) for r in ratios]
    best = max(range(len(utils)), key=lambda i: (utils[i], -i))
    return Selection(best, ratios, utils)


@dataclass(frozen=True, eq=False)
class PlanStepRecord:
    step: int
    chosen_index: int
    chosen_pose: Pose
    candidate_poses: tuple
    candidate_ratios: tuple
    candidate_utilities: tuple
    segment_trajectory: Trajectory
    cloud_size: int = 0

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "chosen_index": self.chosen_index,
            "chosen_pose": self.chosen_pose.to_dict(),
            "candidate_poses": [p.to_dict() for p in self.candidate_poses],
            "candidate_ratios": list(self.candidate_ratios),
            "candidate_utilities": list(self.candidate_utilities),
            "segment_poses": [p.to_dict() for p in self.segment_trajectory.poses],
            "cloud_size": self.cloud_size,
        }


class PlanResult(NamedTuple):
    cloud: ColoredPointCloud
    records: list
    frames: list
    masks: list = []


def synthesize_segment(
    cloud: ColoredPointCloud,
    poses: Sequence[Pose],
    k: CameraIntrinsics,
    completer: ViewCompleter,
    reference_frame,
    splat_radius_px: int = 1,
    voxel_size: float = 0.0,
    step: int = 0,
):
    """Render, complete and fuse one camera segment.

    ``reference_frame`` is pinned to the segment's first pose. Returns the
    grown cloud, the completed frames and the hole masks of the renders.
    """
    traj = Trajectory(tuple(poses), k)
    renders = render_trajectory(cloud, traj, splat_radius_px)
    req = CompletionRequest(tuple(renders), traj, ((0, reference_frame),))
    try:
        resp = validate_response(req, completer.complete(req))
    except Exception as exc:
        raise CompleterError(step, exc) from exc
    if resp.depths is not None:
        for frame, depth, pose in zip(resp.frames, resp.depths, traj.poses):
            # re-mask against the grown cloud so overlapping frames add each hole once
            holes = render_mask(cloud, pose, k, splat_radius_px).values.astype(bool)
            holes &= np.isfinite(depth) & (depth > 0)
            cloud = fuse_novel_view(cloud, frame, depth, holes, pose, k, voxel_size)
    return cloud, list(resp.frames), [r.mask for r in renders]


def plan_and_synthesize(
    scene_init: ColoredPointCloud,
    reference: tuple,
    k: CameraIntrinsics,
    config: PlannerConfig,
    space: SearchSpace,
    completer: ViewCompleter,
    on_step: Optional[Callable[[PlanStepRecord, ColoredPointCloud], None]] = None,
) -> PlanResult:
    """Run the planning loop from the reference camera for ``N + 1`` steps.

    ``reference`` is ``(rgb image, pose)``. ``on_step`` sees each record and
    the cloud after that step's fusion.
    """
    ref_rgb, ref_pose = reference
    cloud = scene_init
    curr = ref_pose
    pinned = np.asarray(ref_rgb, dtype=np.float64)
    records, frames, masks = [], [], []
    step = 0
    while step <= config.max_steps:
        cands = sample_candidates(space, curr, config.candidates_per_step, config.neighborhood_deg)
        sel = select_nbv(cloud, cands, k, config.threshold, config.splat_radius_px)
        nbv = cands[sel.index]
        poses = interpolate_poses(curr, nbv, config.frames_per_segment)
        cloud, seg_frames, seg_masks = synthesize_segment(
            cloud, poses, k, completer, pinned, config.splat_radius_px, config.voxel_size, step
        )
        rec = PlanStepRecord(
            step, sel.index, nbv, tuple(cands), tuple(sel.ratios), tuple(sel.utilities),
            Trajectory(tuple(poses), k), len(cloud),
        )
        records.append(rec)
        frames.extend(seg_frames)
        masks.extend(seg_masks)
        if on_step is not None:
            on_step(rec, cloud)
        curr = nbv
        pinned = seg_frames[-1]
        step += 1
    return PlanResult(cloud, records, frames, masks)


def circular_baseline_trajectory(
    reference_pose: Pose, space: SearchSpace, steps: int, step_deg: float, k: CameraIntrinsics | None = None
) -> Trajectory:
    """Poses reached by swinging the reference camera about the vertical axis through ``center``.

    Pose ``i`` (1-based) sits ``i * step_deg`` degrees of azimuth from the
    reference; negative ``step_deg`` moves left.
    """
    if steps < 1:
        raise InvalidCount(f"steps must be at least 1, got {steps}")
    az0, el0 = space.angles_of(reference_pose.position)
    poses = tuple(space.pose_at(az0 + math.radians(i * step_deg), el0) for i in range(1, steps + 1))
    if k is None:
        k = CameraIntrinsics(1.0, 2, 2)
    return Trajectory(poses, k)


def run_waypoints(
    scene_init: ColoredPointCloud,
    reference: tuple,
    k: CameraIntrinsics,
    waypoints: Sequence[Pose],
    completer: ViewCompleter,
    frames_per_segment: int = 25,
    splat_radius_px: int = 1,
    voxel_size: float = 0.0,
    on_step: Optional[Callable[[int, ColoredPointCloud], None]] = None,
) -> PlanResult:
    """Iterative synthesis along fixed waypoints (the circular-baseline counterpart of planning)."""
    ref_rgb, curr = reference
    cloud = scene_init
    pinned = np.asarray(ref_rgb, dtype=np.float64)
    frames, masks = [], []
    for i, target in enumerate(waypoints):
        poses = interpolate_poses(curr, target, frames_per_segment)
        cloud, seg, seg_masks = synthesize_segment(
            cloud, poses, k, completer, pinned, splat_radius_px, voxel_size, i
        )
        frames.extend(seg)
        masks.extend(seg_masks)
        if on_step is not None:
            on_step(i, cloud)
        curr, pinned = target, seg[-1]
    return PlanResult(cloud, [], frames, masks)
