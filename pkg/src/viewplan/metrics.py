"""Pose accuracy, image quality and reconstruction coverage."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import LengthMismatch, ShapeMismatch
from .geometry import Pose, Trajectory

DEGENERATE_SCALE = 1e-12


@dataclass(frozen=True)
class NormalizedTrajectory:
    """Poses relative to the first frame, translations scaled so the furthest frame sits at distance 1."""

    poses: tuple
    scale: float
    degenerate: bool = False

    def __len__(self):
        return len(self.poses)


def normalize_trajectory(traj) -> NormalizedTrajectory:
    poses = list(traj.poses if isinstance(traj, Trajectory) else traj)
    if not poses:
        raise LengthMismatch("cannot normalize an empty trajectory")
    inv0 = poses[0].inverse()
    rel = [inv0 @ p for p in poses]
    rel[0] = Pose.identity()
    scale = max(float(np.linalg.norm(p.translation)) for p in rel)
    degenerate = scale < DEGENERATE_SCALE
    if degenerate:
        scale = 1.0
    out = tuple(Pose(p.rotation, p.translation / scale) for p in rel)
    return NormalizedTrajectory(out, scale, degenerate)


def _check_lengths(a, b):
    if len(a) != len(b):
        raise LengthMismatch(f"trajectory lengths differ: {len(a)} vs {len(b)}")


def rotation_errors(gen: NormalizedTrajectory, gt: NormalizedTrajectory) -> np.ndarray:
    """Per-frame geodesic angle (radians) between generated and ground-truth rotations."""
    _check_lengths(gen, gt)
    out = np.empty(len(gen))
    for i, (a, b) in enumerate(zip(gen.poses, gt.poses)):
        if np.array_equal(a.rotation, b.rotation):
            out[i] = 0.0
            continue
        # atan2 stays accurate near 0 and pi where acos of the trace does not
        r = a.rotation @ b.rotation.T
        sin = 0.5 * math.hypot(r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1])
        out[i] = math.atan2(sin, (np.trace(r) - 1.0) / 2.0)
    return out


def translation_errors(gen: NormalizedTrajectory, gt: NormalizedTrajectory) -> np.ndarray:
    _check_lengths(gen, gt)
    return np.array(
        [float(np.linalg.norm(b.translation - a.translation)) for a, b in zip(gen.poses, gt.poses)]
    )


def rotation_distance(gen: NormalizedTrajectory, gt: NormalizedTrajectory) -> float:
    """Summed per-frame rotation angle."""
    return float(np.sum(rotation_errors(gen, gt)))


def translation_distance(gen: NormalizedTrajectory, gt: NormalizedTrajectory) -> float:
    """Summed per-frame Euclidean distance between normalized translations."""
    return float(np.sum(translation_errors(gen, gt)))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio of images in [0, 1]; ``inf`` for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def surface_coverage(cloud, scene, samples: int = 20000, eps: float = 0.05, seed: int = 0) -> float:
    """Fraction of quasi-uniform surface samples that have a cloud point within ``eps``."""
    if samples < 1:
        raise ValueError("samples must be at least 1")
    if len(cloud) == 0:
        return 0.0
    pts = scene.surface_samples(samples, seed)
    return float(np.count_nonzero(covered_samples(cloud.positions, pts, eps))) / len(pts)


def covered_samples(cloud_points, sample_points, eps: float) -> np.ndarray:
    tree = cKDTree(np.asarray(cloud_points, dtype=np.float64))
    dist, _ = tree.query(np.asarray(sample_points, dtype=np.float64), k=1)
    return dist <= eps


def trajectory_report(gen: Trajectory, gt: Trajectory) -> dict:
    """Rotation and translation distances, with the per-frame terms and their means."""
    ng, nt = normalize_trajectory(gen), normalize_trajectory(gt)
    rot = rotation_errors(ng, nt)
    trans = translation_errors(ng, nt)
    return {
        "r_dist": float(rot.sum()),
        "t_dist": float(trans.sum()),
        "r_dist_mean": float(rot.mean()),
        "t_dist_mean": float(trans.mean()),
        "per_frame": [{"r": float(r), "t": float(t)} for r, t in zip(rot, trans)],
        "scale_gen": ng.scale,
        "scale_gt": nt.scale,
        "degenerate": bool(ng.degenerate or nt.degenerate),
    }
