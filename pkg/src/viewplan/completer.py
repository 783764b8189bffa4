"""View completers: fill the holes of point-cloud renders along a camera path.

A completer receives the renders of a trajectory plus reference images pinned
to some of its frames and returns one finished frame per pose, optionally with
depth. Frames at reference indices must reproduce the references exactly.

Three implementations live here: a passthrough (returns the renders as they
are), a ground-truth oracle backed by a :class:`~viewplan.scenes.SyntheticScene`,
and an HTTP client for an external generation service. A small reference
server for the wire format is included for local testing.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import logging
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Optional, Protocol

import numpy as np
import requests

from .errors import ContractViolation, ProtocolError, TransportError, ValidationError, ViewPlanError
from .geometry import CameraIntrinsics, Pose, Trajectory
from .images import decode_pfm, decode_png_mask, decode_png_rgb, encode_pfm, encode_png, to_uint8
from .renderer import HoleMask, RenderOutput

log = logging.getLogger(__name__)

COMPLETE_PATH = "/v1/complete"


@dataclass(frozen=True, eq=False)
class CompletionRequest:
    renders: tuple
    trajectory: Trajectory
    reference_images: tuple = ()  # (frame index, rgb image) pairs

    def __post_init__(self):
        object.__setattr__(self, "renders", tuple(self.renders))
        object.__setattr__(
            self,
            "reference_images",
            tuple((int(i), np.asarray(img, dtype=np.float64)) for i, img in self.reference_images),
        )

    def __len__(self):
        return len(self.renders)

    def validate(self) -> None:
        n = len(self.renders)
        if n != len(self.trajectory):
            raise ContractViolation(f"{n} renders for a trajectory of {len(self.trajectory)} poses")
        shape = self.trajectory.intrinsics.shape
        for i, r in enumerate(self.renders):
            if r.rgb.shape != shape + (3,) or r.depth.shape != shape or r.mask.shape != shape:
                raise ContractViolation(f"render {i} does not match image size {shape}")
        seen = set()
        for idx, img in self.reference_images:
            if not 0 <= idx < n:
                raise ContractViolation(f"reference index {idx} outside [0, {n})")
            if idx in seen:
                raise ContractViolation(f"duplicate reference index {idx}")
            seen.add(idx)
            if img.shape != shape + (3,):
                raise ContractViolation(f"reference image {idx} has shape {img.shape}")


@dataclass(frozen=True, eq=False)
class CompletionResponse:
    frames: tuple
    depths: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(np.asarray(f, dtype=np.float64) for f in self.frames))
        if self.depths is not None:
            object.__setattr__(
                self, "depths", tuple(np.asarray(d, dtype=np.float64) for d in self.depths)
            )


def validate_response(req: CompletionRequest, resp: CompletionResponse) -> CompletionResponse:
    """Raise :class:`ContractViolation` unless ``resp`` is a valid answer to ``req``.

    Reference frames are compared after 8-bit quantisation, the precision of
    every on-disk and on-wire image.
    """
    n = len(req.renders)
    shape = req.trajectory.intrinsics.shape
    if len(resp.frames) != n:
        raise ContractViolation(f"expected {n} frames, got {len(resp.frames)}")
    for i, f in enumerate(resp.frames):
        if f.shape != shape + (3,):
            raise ContractViolation(f"frame {i} has shape {f.shape}")
    for idx, img in req.reference_images:
        if not np.array_equal(to_uint8(resp.frames[idx]), to_uint8(img)):
            raise ContractViolation(f"frame {idx} does not reproduce its reference image")
    if resp.depths is not None:
        if len(resp.depths) != n:
            raise ContractViolation(f"expected {n} depth maps, got {len(resp.depths)}")
        for i, (d, r) in enumerate(zip(resp.depths, req.renders)):
            if d.shape != shape:
                raise ContractViolation(f"depth {i} has shape {d.shape}")
            filled = r.mask.values == 0
            if not np.all(np.isfinite(d[filled]) & (d[filled] > 0)):
                raise ContractViolation(f"depth {i} is not positive and finite on covered pixels")
    return resp


class ViewCompleter(Protocol):
    def complete(self, req: CompletionRequest) -> CompletionResponse: ...


def _pin_references(frames: list, req: CompletionRequest) -> list:
    for idx, img in req.reference_images:
        frames[idx] = img.copy()
    return frames


def passthrough_complete(req: CompletionRequest) -> CompletionResponse:
    """Identity completer: renders in, renders out, references pinned, render depth reused."""
    req.validate()
    frames = _pin_references([r.rgb.copy() for r in req.renders], req)
    resp = CompletionResponse(frames, tuple(r.depth for r in req.renders))
    return validate_response(req, resp)


def oracle_complete(scene, req: CompletionRequest) -> CompletionResponse:
    """Fill holes with an exact ray cast of the ground-truth scene.

    Covered pixels keep the render's color and depth; hole pixels take the ray
    cast (depth stays ``inf`` where the ray leaves the scene).
    """
    req.validate()
    k = req.trajectory.intrinsics
    frames, depths = [], []
    for r, pose in zip(req.renders, req.trajectory.poses):
        gt_rgb, gt_depth = scene.raycast(pose, k)
        hole = r.mask.values.astype(bool)
        frames.append(np.where(hole[..., None], gt_rgb, r.rgb))
        depths.append(np.where(hole, gt_depth, r.depth))
    resp = CompletionResponse(_pin_references(frames, req), tuple(depths))
    return validate_response(req, resp)


class PassthroughCompleter:
    name = "passthrough"

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        return passthrough_complete(req)


class OracleCompleter:
    name = "oracle"

    def __init__(self, scene):
        self.scene = scene

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        return oracle_complete(self.scene, req)


# --------------------------------------------------------------------------
# wire format


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(text) -> bytes:
    if not isinstance(text, str):
        raise ProtocolError("expected a base64 string")
    try:
        return base64.b64decode(text, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ProtocolError(f"invalid base64 payload: {exc}") from exc


def encode_request(req: CompletionRequest) -> dict:
    body = {
        "intrinsics": req.trajectory.intrinsics.to_dict(),
        "poses": [p.to_dict() for p in req.trajectory.poses],
        "renders": [
            {
                "rgb_png_b64": _b64(encode_png(r.rgb)),
                "depth_pfm_b64": _b64(encode_pfm(r.depth)),
                "mask_png_b64": _b64(encode_png(r.mask.values)),
            }
            for r in req.renders
        ],
        "references": [{"index": i, "rgb_png_b64": _b64(encode_png(img))} for i, img in req.reference_images],
    }
    digest = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()
    return {"request_id": digest[:32], **body}


def decode_request(body: dict) -> CompletionRequest:
    try:
        k = CameraIntrinsics.from_dict(body["intrinsics"])
        traj = Trajectory(tuple(Pose.from_dict(p) for p in body["poses"]), k)
        renders = []
        for r in body["renders"]:
            depth = decode_pfm(_unb64(r["depth_pfm_b64"]))
            mask = decode_png_mask(_unb64(r["mask_png_b64"]))
            renders.append(RenderOutput(decode_png_rgb(_unb64(r["rgb_png_b64"])), depth, HoleMask(mask)))
        refs = [(int(x["index"]), decode_png_rgb(_unb64(x["rgb_png_b64"]))) for x in body["references"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed completion request: {exc}") from exc
    return CompletionRequest(tuple(renders), traj, tuple(refs))


def encode_response(request_id: str, resp: CompletionResponse) -> dict:
    out = {"request_id": request_id, "frames": [_b64(encode_png(f)) for f in resp.frames]}
    if resp.depths is not None:
        out["depths"] = [_b64(encode_pfm(d)) for d in resp.depths]
    return out


def decode_response(body, request_id: str, expected: int) -> CompletionResponse:
    if not isinstance(body, dict):
        raise ProtocolError("response is not a JSON object")
    if body.get("request_id") != request_id:
        raise ProtocolError(f"response request_id {body.get('request_id')!r} != {request_id!r}")
    frames = body.get("frames")
    if not isinstance(frames, list) or len(frames) != expected:
        got = len(frames) if isinstance(frames, list) else type(frames).__name__
        raise ProtocolError(f"expected {expected} frames, got {got}")
    depths = body.get("depths")
    if depths is not None and (not isinstance(depths, list) or len(depths) != expected):
        raise ProtocolError(f"expected {expected} depth maps")
    try:
        fr = tuple(decode_png_rgb(_unb64(f)) for f in frames)
        dp = None if depths is None else tuple(decode_pfm(_unb64(d)) for d in depths)
    except (OSError, ValidationError, ValueError) as exc:
        raise ProtocolError(f"undecodable image payload: {exc}") from exc
    return CompletionResponse(fr, dp)


def _endpoint_url(endpoint: str) -> str:
    endpoint = endpoint.rstrip("/")
    return endpoint if endpoint.endswith(COMPLETE_PATH) else endpoint + COMPLETE_PATH


def remote_complete(
    endpoint: str, req: CompletionRequest, timeout_s: float = 60.0, retries: int = 0
) -> CompletionResponse:
    """POST ``req`` to a completion service and validate what comes back.

    Transport failures are retried ``retries`` times with the same request id.
    """
    req.validate()
    body = encode_request(req)
    url = _endpoint_url(endpoint)
    last: Exception | None = None
    for attempt in range(retries + 1):
        try:
            reply = requests.post(url, json=body, timeout=timeout_s)
        except requests.RequestException as exc:
            last = TransportError(f"{url}: {exc}")
            log.warning("completion attempt %d failed: %s", attempt + 1, exc)
            continue
        if 400 <= reply.status_code < 500:
            raise ProtocolError(f"{url}: HTTP {reply.status_code}: {reply.text[:200]}")
        if reply.status_code >= 500:
            last = TransportError(f"{url}: HTTP {reply.status_code}")
            continue
        if reply.status_code != 200:
            raise ProtocolError(f"{url}: unexpected HTTP {reply.status_code}")
        try:
            payload = reply.json()
        except ValueError as exc:
            raise ProtocolError(f"{url}: response is not JSON") from exc
        resp = decode_response(payload, body["request_id"], len(req))
        return validate_response(req, resp)
    raise last


class RemoteCompleter:
    name = "remote"

    def __init__(self, endpoint: str, timeout_s: float = 60.0, retries: int = 0):
        self.endpoint = endpoint
        self.timeout_s = timeout_s
        self.retries = retries

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        return remote_complete(self.endpoint, req, self.timeout_s, self.retries)


# --------------------------------------------------------------------------
# reference server


def _handler_for(complete: Callable[[CompletionRequest], CompletionResponse]):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):
            log.debug("%s " + fmt, self.address_string(), *args)

        def _reply(self, code: int, payload: dict):
            data = json.dumps(payload).encode()
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_POST(self):
            if self.path != COMPLETE_PATH:
                self._reply(404, {"error": f"unknown path {self.path}"})
                return
            try:
                body = json.loads(self.rfile.read(int(self.headers.get("Content-Length", 0))))
                req = decode_request(body)
                req.validate()
            except (ValueError, ViewPlanError) as exc:
                self._reply(400, {"error": str(exc)})
                return
            try:
                resp = complete(req)
            except Exception as exc:  # noqa: BLE001 - reported to the client as a 500
                log.exception("completion failed")
                self._reply(500, {"error": str(exc)})
                return
            self._reply(200, encode_response(body.get("request_id", ""), resp))

    return Handler


def make_server(
    host: str = "127.0.0.1",
    port: int = 0,
    complete: Callable[[CompletionRequest], CompletionResponse] = passthrough_complete,
) -> ThreadingHTTPServer:
    """HTTP server speaking the completion wire format; ``port=0`` picks a free port."""
    return ThreadingHTTPServer((host, port), _handler_for(complete))


class BackgroundServer:
    """Context manager running :func:`make_server` on a daemon thread."""

    def __init__(self, complete=passthrough_complete, host: str = "127.0.0.1", port: int = 0):
        self.server = make_server(host, port, complete)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()
        self.thread.join()

