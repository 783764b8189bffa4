"""Synthetic test worlds built from analytic primitives.

Each scene is a handful of textured rectangles and spheres. The analytic
description gives exact ray casts, point-to-surface distances and surface
samples, which the oracle completer and the coverage metric rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.stats import qmc

from .errors import UnknownRecipe, ValidationError
from .geometry import CameraIntrinsics, Pose, pixel_grid
from .pointcloud import ColoredPointCloud, PointMap, quantize_colors

RAY_EPS = 1e-9


@dataclass(frozen=True)
class Texture:
    """Smooth procedural color: ``base + amplitude * sin(frequency * (...))`` per channel."""

    base: tuple = (0.5, 0.5, 0.5)
    amplitude: float = 0.2
    frequency: float = 1.5

    def __call__(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        f = self.frequency
        wave = np.stack(
            [np.sin(f * (x + y)), np.sin(f * (y + z) + 1.0), np.sin(f * (z + x) + 2.0)], axis=1
        )
        return quantize_colors(np.asarray(self.base) + self.amplitude * wave)

    def to_dict(self) -> dict:
        return {"base": list(self.base), "amplitude": self.amplitude, "frequency": self.frequency}

    @classmethod
    def from_dict(cls, d: dict) -> "Texture":
        return cls(tuple(d["base"]), d["amplitude"], d["frequency"])


@dataclass(frozen=True, eq=False)
class Rect:
    """Parallelogram ``origin + s * edge_u + t * edge_v`` for ``s, t`` in [0, 1]."""

    origin: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    texture: Texture = field(default_factory=Texture)

    def __post_init__(self):
        for name in ("origin", "edge_u", "edge_v"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))

    @property
    def area(self) -> float:
        return float(np.linalg.norm(np.cross(self.edge_u, self.edge_v)))

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.edge_u, self.edge_v)
        return n / np.linalg.norm(n)

    def _params(self, p):
        """Least-squares (s, t) of points projected onto the plane."""
        g = np.array(
            [[self.edge_u @ self.edge_u, self.edge_u @ self.edge_v],
             [self.edge_u @ self.edge_v, self.edge_v @ self.edge_v]]
        )
        rhs = np.stack([(p - self.origin) @ self.edge_u, (p - self.origin) @ self.edge_v], axis=1)
        return np.linalg.solve(g, rhs.T).T

    def at(self, st) -> np.ndarray:
        st = np.asarray(st, dtype=np.float64)
        return self.origin + st[:, :1] * self.edge_u + st[:, 1:2] * self.edge_v

    def distance(self, p) -> np.ndarray:
        st = np.clip(self._params(p), 0.0, 1.0)
        return np.linalg.norm(p - self.at(st), axis=1)

    def intersect(self, origins, dirs) -> np.ndarray:
        n = self.normal
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self.origin - origins) @ n) / denom
        t = np.where(np.abs(denom) > 1e-15, t, np.inf)
        hit = origins + np.where(np.isfinite(t), t, 0.0)[:, None] * dirs
        st = self._params(hit)
        inside = np.all((st >= 0) & (st <= 1), axis=1) & (t > RAY_EPS)
        return np.where(inside, t, np.inf)

    def to_dict(self) -> dict:
        return {
            "type": "rect",
            "origin": self.origin.tolist(),
            "edge_u": self.edge_u.tolist(),
            "edge_v": self.edge_v.tolist(),
            "texture": self.texture.to_dict(),
        }


@dataclass(frozen=True, eq=False)
class Sphere:
    center: np.ndarray
    radius: float
    texture: Texture = field(default_factory=Texture)

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def area(self) -> float:
        return 4 * math.pi * self.radius**2

    def at(self, st) -> np.ndarray:
        """Area-preserving map from the unit square onto the sphere."""
        st = np.asarray(st, dtype=np.float64)
        z = 1 - 2 * st[:, 0]
        phi = 2 * math.pi * st[:, 1]
        rxy = np.sqrt(np.maximum(0.0, 1 - z * z))
        d = np.stack([rxy * np.cos(phi), rxy * np.sin(phi), z], axis=1)
        return self.center + self.radius * d

    def distance(self, p) -> np.ndarray:
        return np.abs(np.linalg.norm(p - self.center, axis=1) - self.radius)

    def intersect(self, origins, dirs) -> np.ndarray:
        oc = origins - self.center
        a = np.einsum("ij,ij->i", dirs, dirs)
        b = 2 * np.einsum("ij,ij->i", oc, dirs)
        c = np.einsum("ij,ij->i", oc, oc) - self.radius**2
        disc = b * b - 4 * a * c
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = (-b - sq) / (2 * a)
        t1 = (-b + sq) / (2 * a)
        t = np.where(t0 > RAY_EPS, t0, np.where(t1 > RAY_EPS, t1, np.inf))
        return np.where(disc >= 0, t, np.inf)

    def to_dict(self) -> dict:
        return {
            "type": "sphere",
            "center": self.center.tolist(),
            "radius": self.radius,
            "texture": self.texture.to_dict(),
        }


Surface = Union[Rect, Sphere]


def surface_from_dict(d: dict) -> Surface:
    tex = Texture.from_dict(d["texture"])
    if d["type"] == "rect":
        return Rect(d["origin"], d["edge_u"], d["edge_v"], tex)
    if d["type"] == "sphere":
        return Sphere(d["center"], d["radius"], tex)
    raise ValidationError(f"unknown surface type {d['type']!r}")


def _box_face(lo, hi, axis, value, texture) -> Rect:
    """Axis-aligned rectangle in the plane ``coord[axis] == value`` spanning [lo, hi] on the other axes."""
    others = [i for i in range(3) if i != axis]
    origin = np.array(lo, dtype=np.float64)
    origin[axis] = value
    eu = np.zeros(3)
    ev = np.zeros(3)
    eu[others[0]] = hi[others[0]] - lo[others[0]]
    ev[others[1]] = hi[others[1]] - lo[others[1]]
    return Rect(origin, eu, ev, texture)


def _box_room(s: float) -> list:
    lo = np.array([-2.0, -1.5, -1.0]) * s
    hi = np.array([2.0, 1.5, 3.0]) * s
    return [
        _box_face(lo, hi, 2, hi[2], Texture((0.7, 0.6, 0.5), 0.2, 1.2)),  # back
        _box_face(lo, hi, 0, lo[0], Texture((0.3, 0.5, 0.7), 0.2, 1.5)),  # left
        _box_face(lo, hi, 0, hi[0], Texture((0.6, 0.3, 0.3), 0.2, 1.5)),  # right
        _box_face(lo, hi, 1, hi[1], Texture((0.5, 0.5, 0.3), 0.2, 2.0)),  # floor (y down)
        _box_face(lo, hi, 1, lo[1], Texture((0.8, 0.8, 0.8), 0.1, 1.0)),  # ceiling
    ]


def _occluder(s: float) -> list:
    back = Rect(np.array([-4.0, -3.0, 4.0]) * s, [8.0 * s, 0, 0], [0, 6.0 * s, 0],
                Texture((0.45, 0.55, 0.65), 0.25, 1.3))
    front = Rect(np.array([-0.5, -1.0, 2.0]) * s, [1.0 * s, 0, 0], [0, 2.0 * s, 0],
                 Texture((0.8, 0.4, 0.2), 0.15, 2.0))
    return [back, front]


def _spheres(s: float) -> list:
    ground = Rect(np.array([-3.0, 1.0, 1.0]) * s, [6.0 * s, 0, 0], [0, 0, 6.0 * s],
                  Texture((0.4, 0.5, 0.35), 0.15, 1.0))
    return [
        ground,
        Sphere(np.array([-1.0, 0.5, 3.5]) * s, 0.5 * s, Texture((0.8, 0.3, 0.3), 0.15, 3.0)),
        Sphere(np.array([0.6, 0.3, 4.5]) * s, 0.7 * s, Texture((0.3, 0.7, 0.4), 0.15, 3.0)),
        Sphere(np.array([1.5, 0.6, 3.0]) * s, 0.4 * s, Texture((0.3, 0.4, 0.8), 0.15, 3.0)),
    ]


RECIPES = {"box_room": _box_room, "occluder": _occluder, "spheres": _spheres}
DEFAULT_FOV_DEG = 60.0


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    """A random sampling of analytic surfaces, plus the frontal reference camera."""

    cloud: ColoredPointCloud
    surfaces: tuple
    recipe: str = "custom"
    density: float = 0.0
    seed: int = 0
    scale: float = 1.0
    reference_pose: Pose = field(default_factory=Pose.identity)
    fov_deg: float = DEFAULT_FOV_DEG

    def intrinsics(self, width: int, height: int) -> CameraIntrinsics:
        return CameraIntrinsics.from_fov(self.fov_deg, width, height)

    def distance(self, points) -> np.ndarray:
        """Distance from each point to the nearest surface."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if not self.surfaces:
            return np.full(len(p), np.inf)
        return np.min([s.distance(p) for s in self.surfaces], axis=0)

    def intersect(self, origins, dirs):
        """Nearest hit parameter and surface index per ray (``inf`` / -1 on miss)."""
        ts = np.stack([s.intersect(origins, dirs) for s in self.surfaces])
        which = np.argmin(ts, axis=0)
        t = ts[which, np.arange(ts.shape[1])]
        return t, np.where(np.isfinite(t), which, -1)

    def raycast(self, pose: Pose, k: CameraIntrinsics):
        """Exact dense render through pixel centers: ``(rgb, depth)`` with ``inf`` depth on misses."""
        uu, vv = pixel_grid(k)
        cam = np.stack(
            [(uu - k.principal_x) / k.focal_px, (vv - k.principal_y) / k.focal_px, np.ones_like(uu)],
            axis=-1,
        ).reshape(-1, 3)
        dirs = cam @ pose.rotation.T
        origins = np.broadcast_to(pose.translation, dirs.shape)
        # unit camera-frame z component makes the ray parameter equal to depth
        t, which = self.intersect(origins, dirs)
        rgb = np.zeros((len(t), 3))
        for i, s in enumerate(self.surfaces):
            sel = which == i
            if sel.any():
                rgb[sel] = s.texture(origins[sel] + t[sel, None] * dirs[sel])
        return rgb.reshape(k.shape + (3,)), t.reshape(k.shape)

    def reference_pointmap(self, k: CameraIntrinsics) -> PointMap:
        """Point map of the reference view, as a dense stereo model would report it."""
        rgb, depth = self.raycast(self.reference_pose, k)
        return PointMap.from_depth(depth, rgb, k)

    def surface_samples(self, count: int, seed: int = 0) -> np.ndarray:
        """``count`` quasi-uniform points spread over all surfaces in proportion to area."""
        areas = np.array([s.area for s in self.surfaces])
        share = areas / areas.sum() * count
        n = np.floor(share).astype(int)
        for i in np.argsort(-(share - n), kind="stable")[: count - n.sum()]:
            n[i] += 1
        out = []
        for i, (s, m) in enumerate(zip(self.surfaces, n)):
            if m:
                st = qmc.Halton(d=2, scramble=True, seed=seed + i).random(int(m))
                out.append(s.at(st))
        return np.concatenate(out) if out else np.zeros((0, 3))

    def to_dict(self) -> dict:
        return {
            "recipe": self.recipe,
            "density": self.density,
            "seed": self.seed,
            "scale": self.scale,
            "fov_deg": self.fov_deg,
            "reference_pose": self.reference_pose.to_dict(),
            "surfaces": [s.to_dict() for s in self.surfaces],
        }

    @classmethod
    def from_dict(cls, d: dict, cloud: ColoredPointCloud | None = None) -> "SyntheticScene":
        surfaces = tuple(surface_from_dict(x) for x in d["surfaces"])
        if cloud is None:
            cloud = sample_surfaces(surfaces, d["density"], d["seed"])
        return cls(
            cloud, surfaces, d.get("recipe", "custom"), d.get("density", 0.0), d.get("seed", 0),
            d.get("scale", 1.0), Pose.from_dict(d["reference_pose"]), d.get("fov_deg", DEFAULT_FOV_DEG),
        )


def sample_surfaces(surfaces, density: float, seed: int) -> ColoredPointCloud:
    rng = np.random.default_rng(seed)
    pos, col = [], []
    for s in surfaces:
        n = max(1, int(math.ceil(s.area * density)))
        p = s.at(rng.random((n, 2)))
        pos.append(p)
        col.append(s.texture(p))
    return ColoredPointCloud(np.concatenate(pos), np.concatenate(col))


def make_synthetic_scene(recipe: str, density: float, seed: int, scale: float = 1.0) -> SyntheticScene:
    """Build a named scene (``box_room``, ``occluder`` or ``spheres``) sampled at ``density`` points per unit area."""
    if recipe not in RECIPES:
        raise UnknownRecipe(f"unknown recipe {recipe!r}; choose from {sorted(RECIPES)}")
    if not density > 0:
        raise ValidationError(f"density must be positive, got {density}")
    if not scale > 0:
        raise ValidationError(f"scale must be positive, got {scale}")
    surfaces = tuple(RECIPES[recipe](float(scale)))
    cloud = sample_surfaces(surfaces, density, seed)
    return SyntheticScene(cloud, surfaces, recipe, float(density), int(seed), float(scale))
