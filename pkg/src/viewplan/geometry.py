"""Pinhole camera model, rigid poses, trajectory interpolation and focal recovery.

Conventions: right-handed, the camera looks down +Z with x to the right and y
down. Poses are stored camera-to-world. A pixel with integer index ``i`` has its
center at continuous coordinate ``i``; a projected coordinate ``u`` lands in
pixel ``floor(u + 0.5)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (
    DegeneratePointMap,
    InvalidCount,
    InvalidDepth,
    NumericalFailure,
    ValidationError,
)

EPS_Z = 1e-9
EPS_RESIDUAL = 1e-12
ORTHO_TOL = 1e-9


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CameraIntrinsics:
    """Square-pixel pinhole intrinsics. The principal point defaults to the image center."""

    focal_px: float
    width: int
    height: int
    principal_x: Optional[float] = None
    principal_y: Optional[float] = None

    def __post_init__(self):
        if not (self.focal_px > 0 and math.isfinite(self.focal_px)):
            raise ValidationError(f"focal_px must be positive, got {self.focal_px}")
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValidationError("width and height must be integers")
        if self.width < 2 or self.height < 2:
            raise ValidationError(f"image must be at least 2x2, got {self.width}x{self.height}")
        object.__setattr__(self, "focal_px", float(self.focal_px))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if self.principal_x is None:
            object.__setattr__(self, "principal_x", self.width / 2)
        if self.principal_y is None:
            object.__setattr__(self, "principal_y", self.height / 2)
        object.__setattr__(self, "principal_x", float(self.principal_x))
        object.__setattr__(self, "principal_y", float(self.principal_y))

    @classmethod
    def from_fov(cls, fov_deg: float, width: int, height: int) -> "CameraIntrinsics":
        """Intrinsics whose horizontal field of view is ``fov_deg``."""
        focal = 0.5 * width / math.tan(math.radians(fov_deg) / 2)
        return cls(focal, width, height)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.focal_px, 0.0, self.principal_x],
                [0.0, self.focal_px, self.principal_y],
                [0.0, 0.0, 1.0],
            ]
        )

    def to_dict(self) -> dict:
        return {
            "focal_px": self.focal_px,
            "cx": self.principal_x,
            "cy": self.principal_y,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(d["focal_px"], d["width"], d["height"], d.get("cx"), d.get("cy"))


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid camera-to-world transform ``x_world = R @ x_cam + t``."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = _frozen(self.rotation)
        t = _frozen(self.translation).reshape(-1)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValidationError(f"bad pose shapes {r.shape}, {t.shape}")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValidationError("pose contains non-finite values")
        if np.max(np.abs(r.T @ r - np.eye(3))) >= ORTHO_TOL or np.linalg.det(r) <= 0:
            raise ValidationError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def position(self) -> np.ndarray:
        return self.translation

    @property
    def forward(self) -> np.ndarray:
        """Viewing direction in world coordinates."""
        return self.rotation[:, 2]

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def transform(self, points) -> np.ndarray:
        """Map camera-frame points (N, 3) into the world frame."""
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def to_camera(self, points) -> np.ndarray:
        """Map world points (N, 3) into this camera's frame."""
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation

    def allclose(self, other: "Pose", atol: float = 1e-12) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0, atol=atol)
        )

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "rotation": [float(x) for x in self.rotation.reshape(-1)],
            "translation": [float(x) for x in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(np.reshape(d["rotation"], (3, 3)), d["translation"])

    def __repr__(self):
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True)
class Trajectory:
    """Ordered camera path sharing one set of intrinsics."""

    poses: tuple
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        poses = tuple(self.poses)
        if not poses:
            raise ValidationError("trajectory must contain at least one pose")
        object.__setattr__(self, "poses", poses)

    def __len__(self):
        return len(self.poses)

    def __iter__(self):
        return iter(self.poses)

    def __getitem__(self, i):
        return self.poses[i]

    def to_dict(self) -> dict:
        return {
            "intrinsics": self.intrinsics.to_dict(),
            "poses": [p.to_dict() for p in self.poses],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        # segmented files (baseline runs) are read as their concatenation
        try:
            poses = d["poses"] if "poses" in d else [p for seg in d["segments"] for p in seg["poses"]]
            return cls(tuple(Pose.from_dict(p) for p in poses), CameraIntrinsics.from_dict(d["intrinsics"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed trajectory: {exc!r}") from exc

    def dumps(self) -> str:
        # float repr is the shortest string that parses back to the same double
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def loads(cls, text: str) -> "Trajectory":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n")

    @classmethod
    def load(cls, path) -> "Trajectory":
        return cls.loads(Path(path).read_text())


# --------------------------------------------------------------------------
# projection


def project(point, pose: Pose, k: CameraIntrinsics):
    """Project one world point. Returns ``(u, v, depth)`` or ``None``.

    ``None`` when the point is behind (or on) the image plane or lands outside
    ``[0, width) x [0, height)``.
    """
    x, y, z = pose.to_camera(np.reshape(point, (1, 3)))[0]
    if not z > EPS_Z:
        return None
    u = k.focal_px * x / z + k.principal_x
    v = k.focal_px * y / z + k.principal_y
    if not (0 <= u < k.width and 0 <= v < k.height):
        return None
    return (float(u), float(v), float(z))


def project_points(points, pose: Pose, k: CameraIntrinsics):
    """Vectorised projection without bounds checks.

    Returns ``(u, v, z)`` arrays; entries with ``z <= EPS_Z`` have NaN ``u, v``.
    """
    cam = pose.to_camera(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    z = cam[:, 2]
    ok = z > EPS_Z
    safe_z = np.where(ok, z, 1.0)
    u = np.where(ok, k.focal_px * cam[:, 0] / safe_z + k.principal_x, np.nan)
    v = np.where(ok, k.focal_px * cam[:, 1] / safe_z + k.principal_y, np.nan)
    return u, v, z


def unproject(u: float, v: float, depth: float, pose: Pose, k: CameraIntrinsics) -> np.ndarray:
    if not depth > 0:
        raise InvalidDepth(f"depth must be positive, got {depth}")
    return unproject_pixels(np.array([u]), np.array([v]), np.array([depth]), pose, k)[0]


def unproject_pixels(u, v, depth, pose: Pose, k: CameraIntrinsics) -> np.ndarray:
    """Vectorised inverse of projection; returns world points (N, 3)."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    d = np.asarray(depth, dtype=np.float64).reshape(-1)
    if np.any(~(d > 0)):
        raise InvalidDepth("all depths must be positive")
    cam = np.stack(
        [(u - k.principal_x) / k.focal_px * d, (v - k.principal_y) / k.focal_px * d, d], axis=1
    )
    return pose.transform(cam)


def pixel_grid(k: CameraIntrinsics):
    """Integer pixel-center coordinates ``(u, v)``, each of shape (H, W)."""
    return np.meshgrid(
        np.arange(k.width, dtype=np.float64), np.arange(k.height, dtype=np.float64)
    )


def look_at(eye, target, up=(0.0, -1.0, 0.0)) -> Pose:
    """Camera at ``eye`` looking at ``target``; image y points away from ``up``."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValidationError("eye and target coincide")
    fwd = fwd / n
    down = -np.asarray(up, dtype=np.float64)
    right = np.cross(down, fwd)
    if np.linalg.norm(right) < 1e-9:
        # looking along the up axis: borrow a perpendicular hint
        alt = np.array([0.0, 0.0, 1.0]) if abs(fwd[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        right = np.cross(alt, fwd)
    right /= np.linalg.norm(right)
    y = np.cross(fwd, right)
    return Pose(np.stack([right, y, fwd], axis=1), eye)


# --------------------------------------------------------------------------
# rotations and interpolation


def rotation_to_quaternion(r) -> np.ndarray:
    """Unit quaternion ``(w, x, y, z)`` with ``w >= 0`` (Shepperd's method)."""
    r = np.asarray(r, dtype=np.float64)
    tr = np.trace(r)
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = 2.0 * math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = np.array([(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s])
    elif r[1, 1] > r[2, 2]:
        s = 2.0 * math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q = np.array([(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s])
    else:
        s = 2.0 * math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q = np.array([(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


def quaternion_to_rotation(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def axis_angle(axis, angle_rad: float) -> np.ndarray:
    """Rotation matrix for a right-handed rotation about ``axis``."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = angle_rad / 2
    return quaternion_to_rotation(np.concatenate([[math.cos(half)], math.sin(half) * axis]))


def rotation_angle(r) -> float:
    """Geodesic angle of a rotation matrix, in radians."""
    c = (np.trace(r) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def slerp(q0, q1, t: float) -> np.ndarray:
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    dot = float(np.dot(q0, q1))
    if dot < 0:
        q1, dot = -q1, -dot
    if dot > 1 - 1e-13:
        q = q0 + t * (q1 - q0)
        return q / np.linalg.norm(q)
    theta = math.acos(min(dot, 1.0))
    s = math.sin(theta)
    return (math.sin((1 - t) * theta) * q0 + math.sin(t * theta) * q1) / s


def interpolate_poses(a: Pose, b: Pose, count: int) -> list[Pose]:
    """``count`` poses from ``a`` to ``b``: slerp on rotation, linear on translation."""
    if count < 2:
        raise InvalidCount(f"count must be >= 2, got {count}")
    qa = rotation_to_quaternion(a.rotation)
    qb = rotation_to_quaternion(b.rotation)
    out = [a]
    for i in range(1, count - 1):
        t = i / (count - 1)
        r = quaternion_to_rotation(slerp(qa, qb, t))
        out.append(Pose(r, (1 - t) * a.translation + t * b.translation))
    out.append(b)
    return out


# --------------------------------------------------------------------------
# focal recovery


@dataclass(frozen=True)
class FocalFit:
    focal_px: float
    iterations: int
    objectives: tuple  # objective at f_0, f_1, ...


def _focal_terms(pm):
    pts = np.asarray(pm.points, dtype=np.float64)
    conf = np.asarray(pm.confidence, dtype=np.float64)
    h, w = conf.shape
    vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
    with np.errstate(invalid="ignore"):
        ok = (conf > 0) & np.isfinite(conf) & np.all(np.isfinite(pts), axis=-1) & (pts[..., 2] > EPS_Z)
    if np.count_nonzero(ok) < 2:
        raise DegeneratePointMap("fewer than two usable pixels")
    o = pts[ok]
    q = o[:, :2] / o[:, 2:3]
    p = np.stack([uu[ok] - w / 2, vv[ok] - h / 2], axis=1)
    return p, q, conf[ok], max(w, h)


def focal_objective(pm, focal) -> np.ndarray:
    """Confidence-weighted reprojection residual sum for one or more focal values."""
    p, q, d, _ = _focal_terms(pm)
    f = np.atleast_1d(np.asarray(focal, dtype=np.float64))
    out = np.empty(f.shape)
    for i, fi in enumerate(f):
        out[i] = np.sum(d * np.linalg.norm(p - fi * q, axis=1))
    return out if np.ndim(focal) else out[0]


def fit_focal_weiszfeld(pm, max_iters: int = 10, tol: float = 1e-6) -> FocalFit:
    """Weiszfeld / IRLS estimate of the focal length from a point map.

    Minimises ``sum D * ||(u', v') - f * (x, y) / z||`` with pixel offsets taken
    from the image center. Starts at ``max(width, height)``.
    """
    p, q, d, f = _focal_terms(pm)
    pq = np.einsum("ij,ij->i", p, q)
    qq = np.einsum("ij,ij->i", q, q)
    if not np.sum(d * qq) > 0:
        raise DegeneratePointMap("all rays lie on the optical axis")

    def objective(fv):
        return float(np.sum(d * np.linalg.norm(p - fv * q, axis=1)))

    f = float(f)
    objectives = [objective(f)]
    it = 0
    for it in range(1, max_iters + 1):
        r = np.linalg.norm(p - f * q, axis=1)
        wd = d / np.maximum(r, EPS_RESIDUAL)
        f_new = float(np.sum(wd * pq) / np.sum(wd * qq))
        if not math.isfinite(f_new):
            raise NumericalFailure(f"non-finite focal at iteration {it}")
        objectives.append(objective(f_new))
        done = abs(f_new - f) < tol
        f = f_new
        if done:
            break
    return FocalFit(f, it, tuple(objectives))


def estimate_focal_weiszfeld(pm, max_iters: int = 10, tol: float = 1e-6) -> float:
    return fit_focal_weiszfeld(pm, max_iters, tol).focal_px

