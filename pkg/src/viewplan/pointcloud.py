"""Point maps, colored point clouds, view fusion and PLY I/O."""

from __future__ import annotations

import io
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyInput, InvalidDepth, ShapeMismatch, ValidationError
from .geometry import CameraIntrinsics, Pose, pixel_grid, unproject_pixels


def _readonly(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def quantize_colors(c) -> np.ndarray:
    """Snap colors to the 8-bit grid so they survive PNG/PLY round trips exactly."""
    return np.round(np.clip(np.asarray(c, dtype=np.float64), 0.0, 1.0) * 255.0) / 255.0


@dataclass(frozen=True, eq=False)
class PointMap:
    """Per-pixel 3D points in an anchor camera frame, with confidence and color."""

    points: np.ndarray  # (H, W, 3)
    confidence: np.ndarray  # (H, W)
    colors: np.ndarray  # (H, W, 3)

    def __post_init__(self):
        pts = _readonly(self.points)
        conf = _readonly(self.confidence)
        col = _readonly(self.colors)
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise ShapeMismatch(f"points must be (H, W, 3), got {pts.shape}")
        if conf.shape != pts.shape[:2] or col.shape != pts.shape:
            raise ShapeMismatch(f"shapes differ: {pts.shape}, {conf.shape}, {col.shape}")
        if not np.all(np.isfinite(conf)) or np.any(conf < 0):
            raise ValidationError("confidence must be finite and non-negative")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "confidence", conf)
        object.__setattr__(self, "colors", col)

    @property
    def shape(self):
        return self.confidence.shape

    @classmethod
    def from_depth(cls, depth, colors, k: CameraIntrinsics, confidence=None) -> "PointMap":
        """Back-project a depth image into its own camera frame.

        Non-finite or non-positive depths get NaN points and zero confidence.
        """
        depth = np.asarray(depth, dtype=np.float64)
        if depth.shape != k.shape:
            raise ShapeMismatch(f"depth {depth.shape} does not match intrinsics {k.shape}")
        ok = np.isfinite(depth) & (depth > 0)
        uu, vv = pixel_grid(k)
        pts = np.full(depth.shape + (3,), np.nan)
        pts[ok] = unproject_pixels(uu[ok], vv[ok], depth[ok], Pose.identity(), k)
        conf = np.ones(depth.shape) if confidence is None else np.array(confidence, dtype=np.float64)
        conf = np.where(ok, conf, 0.0)
        return cls(pts, conf, colors)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_npz_bytes())

    def to_npz_bytes(self) -> bytes:
        """NPZ archive with pinned zip timestamps, so equal maps give equal bytes."""
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
            for name in ("points", "confidence", "colors"):
                arr = io.BytesIO()
                np.save(arr, getattr(self, name), allow_pickle=False)
                zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), arr.getvalue())
        return buf.getvalue()

    @classmethod
    def load(cls, path) -> "PointMap":
        with np.load(path) as z:
            return cls(z["points"], z["confidence"], z["colors"])


@dataclass(frozen=True, eq=False)
class ColoredPointCloud:
    positions: np.ndarray  # (N, 3)
    colors: np.ndarray  # (N, 3) in [0, 1]
    confidences: Optional[np.ndarray] = None  # (N,)

    def __post_init__(self):
        pos = _readonly(np.reshape(self.positions, (-1, 3)))
        col = _readonly(np.reshape(self.colors, (-1, 3)))
        if len(pos) != len(col):
            raise ShapeMismatch(f"{len(pos)} positions but {len(col)} colors")
        if not np.all(np.isfinite(pos)):
            raise ValidationError("positions must be finite")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col)
        if self.confidences is not None:
            conf = _readonly(np.reshape(self.confidences, (-1,)))
            if len(conf) != len(pos):
                raise ShapeMismatch("confidences length differs from positions")
            object.__setattr__(self, "confidences", conf)

    @classmethod
    def empty(cls) -> "ColoredPointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)))

    def __len__(self):
        return len(self.positions)

    def same_as(self, other: "ColoredPointCloud") -> bool:
        if (self.confidences is None) != (other.confidences is None):
            return False
        return bool(
            np.array_equal(self.positions, other.positions)
            and np.array_equal(self.colors, other.colors)
            and (self.confidences is None or np.array_equal(self.confidences, other.confidences))
        )

    def concat(self, positions, colors, confidences=None) -> "ColoredPointCloud":
        conf = None
        if self.confidences is not None:
            extra = np.ones(len(positions)) if confidences is None else confidences
            conf = np.concatenate([self.confidences, extra])
        return ColoredPointCloud(
            np.concatenate([self.positions, np.reshape(positions, (-1, 3))]),
            np.concatenate([self.colors, np.reshape(colors, (-1, 3))]),
            conf,
        )


def cloud_from_pointmaps(
    maps: Sequence[tuple[PointMap, Pose]], conf_threshold: float = 0.0
) -> ColoredPointCloud:
    """Merge point maps into one world-frame cloud, keeping pixels with confidence above the threshold."""
    if not maps:
        raise EmptyInput("no point maps given")
    pos, col, conf = [], [], []
    for pm, pose in maps:
        keep = pm.confidence > conf_threshold
        keep &= np.all(np.isfinite(pm.points), axis=-1)
        pos.append(pose.transform(pm.points[keep]))
        col.append(pm.colors[keep])
        conf.append(pm.confidence[keep])
    return ColoredPointCloud(np.concatenate(pos), np.concatenate(col), np.concatenate(conf))


def fuse_novel_view(
    cloud: ColoredPointCloud,
    frame,
    depth,
    mask,
    pose: Pose,
    k: CameraIntrinsics,
    voxel_size: float = 0.0,
) -> ColoredPointCloud:
    """Back-project the hole pixels (``mask == 1``) of a completed view and append them.

    With ``voxel_size > 0`` a new point is dropped when its voxel already holds
    a point (existing points, then earlier new points, keep the voxel).
    """
    frame = np.asarray(frame, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    mask = np.asarray(getattr(mask, "values", mask))
    if frame.shape != k.shape + (3,) or depth.shape != k.shape or mask.shape != k.shape:
        raise ShapeMismatch(
            f"frame {frame.shape}, depth {depth.shape}, mask {mask.shape} vs image {k.shape}"
        )
    sel = mask.astype(bool)
    if not sel.any():
        return cloud
    d = depth[sel]
    if not np.all(np.isfinite(d) & (d > 0)):
        raise InvalidDepth("depth must be finite and positive at every fused pixel")
    uu, vv = pixel_grid(k)
    new_pos = unproject_pixels(uu[sel], vv[sel], d, pose, k)
    new_col = frame[sel]
    if voxel_size > 0:
        keep = _novel_voxels(cloud.positions, new_pos, voxel_size)
        new_pos, new_col = new_pos[keep], new_col[keep]
    return cloud.concat(new_pos, new_col)


def _novel_voxels(existing: np.ndarray, new: np.ndarray, size: float) -> np.ndarray:
    occupied = set(map(tuple, np.floor(existing / size).astype(np.int64)))
    keep = np.zeros(len(new), dtype=bool)
    for i, key in enumerate(map(tuple, np.floor(new / size).astype(np.int64))):
        if key not in occupied:
            occupied.add(key)
            keep[i] = True
    return keep


# --------------------------------------------------------------------------
# PLY


def write_ply(path, cloud: ColoredPointCloud) -> None:
    """Binary little-endian PLY: float32 xyz, uint8 rgb, optional float32 confidence."""
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("red", "u1"), ("green", "u1"), ("blue", "u1")]
    if cloud.confidences is not None:
        fields.append(("confidence", "<f4"))
    data = np.empty(len(cloud), dtype=fields)
    for i, name in enumerate("xyz"):
        data[name] = cloud.positions[:, i]
    rgb = np.round(np.clip(cloud.colors, 0, 1) * 255).astype(np.uint8)
    for i, name in enumerate(("red", "green", "blue")):
        data[name] = rgb[:, i]
    if cloud.confidences is not None:
        data["confidence"] = cloud.confidences
    types = {"<f4": "float", "u1": "uchar"}
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(cloud)}"]
    header += [f"property {types[t]} {n}" for n, t in fields]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(data.tobytes())


_PLY_TYPES = {
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
    "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
}


def read_ply(path) -> ColoredPointCloud:
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise ValidationError(f"{path}: not a PLY file")
    body_start = raw.index(b"\n", end) + 1
    lines = raw[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in lines:
        raise ValidationError(f"{path}: only binary little-endian PLY is supported")
    count, fields, in_vertex = 0, [], False
    for line in lines:
        parts = line.split()
        if parts[:1] == ["element"]:
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
        elif parts[:1] == ["property"] and in_vertex:
            if parts[1] == "list":
                raise ValidationError(f"{path}: list properties are not supported")
            fields.append((parts[2], _PLY_TYPES[parts[1]]))
    data = np.frombuffer(raw, dtype=fields, count=count, offset=body_start)
    pos = np.stack([data[n].astype(np.float64) for n in "xyz"], axis=1)
    names = data.dtype.names
    if "red" in names:
        col = np.stack([data[n] for n in ("red", "green", "blue")], axis=1).astype(np.float64) / 255.0
    else:
        col = np.zeros_like(pos)
    conf = data["confidence"].astype(np.float64) if "confidence" in names else None
    return ColoredPointCloud(pos, col, conf)
