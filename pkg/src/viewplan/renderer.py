"""Z-buffer point splatting.

A point projected to continuous coordinates ``(u, v)`` lands in pixel
``(floor(u + 0.5), floor(v + 0.5))`` and covers every pixel within Chebyshev
distance ``splat_radius_px`` of it. Per pixel the nearest covering point wins;
points whose depths are within ``DEPTH_TIE`` of the nearest are treated as
tied and the lowest point index wins.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import CameraIntrinsics, Pose, Trajectory, project_points
from .pointcloud import ColoredPointCloud

DEPTH_TIE = 1e-12
DEFAULT_SPLAT_RADIUS = 1


@dataclass(frozen=True, eq=False)
class HoleMask:
    """Binary (H, W) grid; 1 marks pixels no point covers."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.uint8)
        if v.ndim != 2 or np.any(v > 1):
            raise ValueError("hole mask must be a 2-D binary grid")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class RenderOutput:
    rgb: np.ndarray  # (H, W, 3), black where uncovered
    depth: np.ndarray  # (H, W), +inf where uncovered
    mask: HoleMask

    def __post_init__(self):
        for name in ("rgb", "depth"):
            a = np.array(getattr(self, name), dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not isinstance(self.mask, HoleMask):
            object.__setattr__(self, "mask", HoleMask(self.mask))

    def same_as(self, other: "RenderOutput") -> bool:
        return (
            np.array_equal(self.rgb, other.rgb)
            and np.array_equal(self.depth, other.depth)
            and np.array_equal(self.mask.values, other.mask.values)
        )


def _splat(cloud: ColoredPointCloud, pose: Pose, k: CameraIntrinsics, radius: int):
    """Flattened (pixel, depth, point index) triples for every splat footprint cell,
    plus the camera-frame depth of every point."""
    u, v, z = project_points(cloud.positions, pose, k)
    idx = np.flatnonzero(np.isfinite(u) & np.isfinite(v))
    pu = np.floor(u[idx] + 0.5)
    pv = np.floor(v[idx] + 0.5)
    near = (pu >= -radius) & (pu < k.width + radius) & (pv >= -radius) & (pv < k.height + radius)
    idx, pu, pv = idx[near], pu[near].astype(np.int64), pv[near].astype(np.int64)
    pix, zs, ids = [], [], []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            x, y = pu + dx, pv + dy
            ok = (x >= 0) & (x < k.width) & (y >= 0) & (y < k.height)
            pix.append(y[ok] * k.width + x[ok])
            zs.append(z[idx[ok]])
            ids.append(idx[ok])
    return np.concatenate(pix), np.concatenate(zs), np.concatenate(ids), z


def render(
    cloud: ColoredPointCloud,
    pose: Pose,
    k: CameraIntrinsics,
    splat_radius_px: int = DEFAULT_SPLAT_RADIUS,
) -> RenderOutput:
    n_pix = k.width * k.height
    pix, zs, ids, z = _splat(cloud, pose, k, int(splat_radius_px))
    zbuf = np.full(n_pix, np.inf)
    np.minimum.at(zbuf, pix, zs)
    tied = zs - zbuf[pix] < DEPTH_TIE
    n = len(cloud)
    winner = np.full(n_pix, n, dtype=np.int64)
    np.minimum.at(winner, pix[tied], ids[tied])
    covered = winner < n
    w = winner[covered]
    depth = np.full(n_pix, np.inf)
    rgb = np.zeros((n_pix, 3))
    if n:
        depth[covered] = z[w]
        rgb[covered] = cloud.colors[w]
    shape = k.shape
    return RenderOutput(
        rgb.reshape(shape + (3,)), depth.reshape(shape), HoleMask((~covered).reshape(shape))
    )


def render_mask(
    cloud: ColoredPointCloud,
    pose: Pose,
    k: CameraIntrinsics,
    splat_radius_px: int = DEFAULT_SPLAT_RADIUS,
) -> HoleMask:
    """Hole mask only; identical to ``render(...).mask`` but skips the z-buffer."""
    pix, _, _, _ = _splat(cloud, pose, k, int(splat_radius_px))
    holes = np.ones(k.width * k.height, dtype=np.uint8)
    holes[pix] = 0
    return HoleMask(holes.reshape(k.shape))


def render_trajectory(
    cloud: ColoredPointCloud, traj: Trajectory, splat_radius_px: int = DEFAULT_SPLAT_RADIUS
) -> list[RenderOutput]:
    return [render(cloud, p, traj.intrinsics, splat_radius_px) for p in traj.poses]


def hole_ratio(mask) -> float:
    """Fraction of hole pixels, ``sum(mask) / (W * H)``."""
    values = np.asarray(getattr(mask, "values", mask))
    return int(np.count_nonzero(values)) / values.size


def hole_ratios(masks: Sequence) -> list[float]:
    return [hole_ratio(m) for m in masks]
