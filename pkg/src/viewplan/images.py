"""8-bit PNG and little-endian PFM encoding for frames, masks and depth maps.

PNG encoder settings are pinned and no ancillary chunks are written, so equal
arrays always encode to equal bytes. In PFM depth files ``+inf`` (no coverage)
is stored as ``0.0``.
"""

from __future__ import annotations

import io
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError

PNG_COMPRESS_LEVEL = 6


def to_uint8(img) -> np.ndarray:
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_png(img) -> bytes:
    """Encode an RGB image in [0, 1] (H, W, 3) or a binary mask (H, W)."""
    arr = np.asarray(img)
    if arr.ndim == 2:
        data = (arr.astype(bool) * 255).astype(np.uint8)
        pil = Image.fromarray(data, mode="L")
    elif arr.ndim == 3 and arr.shape[2] == 3:
        pil = Image.fromarray(to_uint8(arr), mode="RGB")
    else:
        raise ValidationError(f"cannot encode array of shape {arr.shape} as PNG")
    buf = io.BytesIO()
    pil.save(buf, format="PNG", compress_level=PNG_COMPRESS_LEVEL, optimize=False)
    return buf.getvalue()


def decode_png_rgb(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def decode_png_mask(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return (np.asarray(im.convert("L")) > 127).astype(np.uint8)


def encode_pfm(depth) -> bytes:
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim != 2:
        raise ValidationError(f"depth must be 2-D, got {d.shape}")
    stored = np.where(np.isfinite(d), d, 0.0).astype("<f4")
    h, w = d.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    # PFM rows run bottom to top
    return header + stored[::-1].tobytes()


_PFM_HEADER = re.compile(rb"^(PF|Pf)\s+(\d+)\s+(\d+)\s+(\S+)\s")


def decode_pfm(data: bytes) -> np.ndarray:
    m = _PFM_HEADER.match(data)
    if not m:
        raise ValidationError("not a PFM image")
    if m.group(1) != b"Pf":
        raise ValidationError("only single-channel PFM depth maps are supported")
    w, h, scale = int(m.group(2)), int(m.group(3)), float(m.group(4))
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(data, dtype=dtype, count=w * h, offset=m.end()).reshape(h, w)[::-1]
    out = arr.astype(np.float64)
    out[out == 0.0] = np.inf
    return out


def write_png(path, img) -> None:
    Path(path).write_bytes(encode_png(img))


def read_png_rgb(path) -> np.ndarray:
    return decode_png_rgb(Path(path).read_bytes())


def read_png_mask(path) -> np.ndarray:
    return decode_png_mask(Path(path).read_bytes())


def write_pfm(path, depth) -> None:
    Path(path).write_bytes(encode_pfm(depth))


def read_pfm(path) -> np.ndarray:
    return decode_pfm(Path(path).read_bytes())
