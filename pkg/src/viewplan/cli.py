"""Command-line interface.

Every command that writes an output directory also writes ``manifest.json``
recording its arguments, input hashes, artifact hashes and stage timings.
``viewplan replay manifest.json`` re-runs the command and checks that every
artifact comes out byte-identical.

Exit codes: 0 success, 2 usage/validation, 3 contract/protocol, 4 transport,
5 internal.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import math
import os
import sys
import tempfile
import time
from pathlib import Path

from . import __version__
from .completer import BackgroundServer, OracleCompleter, PassthroughCompleter, RemoteCompleter
from .errors import CompleterError, LengthMismatch, ShapeMismatch, ValidationError, ViewPlanError
from .geometry import Trajectory, fit_focal_weiszfeld
from .images import encode_pfm, encode_png, read_png_rgb
from .metrics import psnr, surface_coverage, trajectory_report
from .planner import (
    PlannerConfig,
    build_search_space,
    circular_baseline_trajectory,
    plan_and_synthesize,
    run_waypoints,
)
from .pointcloud import ColoredPointCloud, PointMap, cloud_from_pointmaps, read_ply, write_ply
from .renderer import hole_ratio, render, render_trajectory
from .scenes import RECIPES, SyntheticScene, make_synthetic_scene

log = logging.getLogger("viewplan")

ENDPOINT_ENV = "VIEWPLAN_ENDPOINT"
MANIFEST = "manifest.json"


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()


def _ply_bytes(cloud: ColoredPointCloud) -> bytes:
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "c.ply"
        write_ply(path, cloud)
        return path.read_bytes()


class RunRecorder:
    """Collects artifacts and timings for one command and writes the run manifest."""

    def __init__(self, out_dir, command: str, args: dict):
        self.out = Path(out_dir)
        self.command = command
        self.args = args
        self.inputs: dict[str, str] = {}
        self.artifacts: dict[str, str] = {}
        self.timings: dict[str, float] = {}

    def add_input(self, path) -> Path:
        p = Path(path)
        try:
            self.inputs[str(p.resolve())] = sha256_file(p)
        except FileNotFoundError as exc:
            raise ValidationError(f"input not found: {p}") from exc
        return p

    @contextlib.contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0

    def write(self, rel: str, data: bytes) -> Path:
        path = self.out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        self.artifacts[rel] = hashlib.sha256(data).hexdigest()
        return path

    def finish(self, status: str = "ok", error: str | None = None, step: int | None = None) -> None:
        manifest = {
            "tool": "viewplan",
            "version": __version__,
            "command": self.command,
            "args": self.args,
            "seed": self.args.get("seed"),
            "inputs": self.inputs,
            "artifacts": dict(sorted(self.artifacts.items())),
            "timings_s": self.timings,
            "status": status,
        }
        if error is not None:
            manifest["error"] = error
            manifest["failed_step"] = step
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / MANIFEST).write_bytes(_json_bytes(manifest))


def _recorder(args, command: str) -> RunRecorder:
    snapshot = {k: v for k, v in vars(args).items() if k not in ("func", "out", "verbose")}
    return RunRecorder(args.out, command, snapshot)


def _abs(path):
    return None if path is None else str(Path(path).resolve())


def _load_scene(path) -> SyntheticScene:
    d = json.loads(Path(path).read_text())
    return SyntheticScene.from_dict(d, cloud=ColoredPointCloud.empty())


def _make_completer(args):
    choice = args.completer
    if choice == "passthrough":
        return PassthroughCompleter()
    if choice == "oracle":
        if not args.scene:
            raise ValidationError("--completer oracle needs --scene")
        return OracleCompleter(_load_scene(args.scene))
    if choice == "remote":
        endpoint = args.endpoint or os.environ.get(ENDPOINT_ENV)
        if not endpoint:
            raise ValidationError(f"--completer remote needs --endpoint or ${ENDPOINT_ENV}")
        return RemoteCompleter(endpoint, args.timeout, args.retries)
    raise ValidationError(f"unknown completer {choice!r}")


def _write_frames(rec: RunRecorder, prefix: str, frames, masks=()) -> None:
    for i, f in enumerate(frames):
        rec.write(f"{prefix}/frame_{i:04d}.png", encode_png(f))
    for i, m in enumerate(masks):
        rec.write(f"{prefix}/mask_{i:04d}.png", encode_png(m.values))


# --------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    recipe = {"recipe": args.recipe, "density": args.density, "seed": args.seed, "scale": args.scale}
    if args.recipe_file:
        recipe.update(json.loads(Path(args.recipe_file).read_text()))
    if recipe["recipe"] not in RECIPES:
        make_synthetic_scene(recipe["recipe"], 1.0, 0)  # raises UnknownRecipe
    if not recipe["density"] > 0:
        raise ValidationError(f"density must be positive, got {recipe['density']}")
    rec = _recorder(args, "synth")
    if args.recipe_file:
        rec.add_input(args.recipe_file)
    with rec.stage("scene"):
        scene = make_synthetic_scene(recipe["recipe"], recipe["density"], recipe["seed"], recipe["scale"])
        k = scene.intrinsics(args.width, args.height)
        pm = scene.reference_pointmap(k)
        init = cloud_from_pointmaps([(pm, scene.reference_pose)])
        ref_rgb, ref_depth = scene.raycast(scene.reference_pose, k)
    with rec.stage("write"):
        rec.write("scene.ply", _ply_bytes(scene.cloud))
        rec.write("scene.json", _json_bytes(scene.to_dict()))
        rec.write("initial.ply", _ply_bytes(init))
        rec.write("reference.png", encode_png(ref_rgb))
        rec.write("reference_depth.pfm", encode_pfm(ref_depth))
        rec.write("reference_pointmap.npz", pm.to_npz_bytes())
        rec.write("reference_pose.json", _json_bytes(Trajectory((scene.reference_pose,), k).to_dict()))
    rec.finish()
    print(f"wrote {recipe['recipe']} scene ({len(scene.cloud)} points, initial cloud {len(init)}) to {args.out}")
    return 0


def cmd_render(args) -> int:
    rec = _recorder(args, "render")
    cloud = read_ply(rec.add_input(args.cloud))
    traj = Trajectory.load(rec.add_input(args.trajectory))
    with rec.stage("render"):
        outs = render_trajectory(cloud, traj, args.splat_radius)
    with rec.stage("write"):
        for i, o in enumerate(outs):
            rec.write(f"frame_{i:04d}.png", encode_png(o.rgb))
            rec.write(f"mask_{i:04d}.png", encode_png(o.mask.values))
            rec.write(f"depth_{i:04d}.pfm", encode_pfm(o.depth))
        rec.write("hole_ratios.json", _json_bytes([hole_ratio(o.mask) for o in outs]))
    rec.finish()
    return 0


def _config_from_args(args) -> PlannerConfig:
    base = PlannerConfig.load(args.config).to_dict() if args.config else {}
    for key in ("N", "K", "theta", "L", "neighborhood_deg", "grid_azimuth", "grid_elevation",
                "splat_radius_px", "voxel_rho", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            base[key] = value
    return PlannerConfig.from_dict(base)


def _load_reference(rec: RunRecorder, args):
    cloud = read_ply(rec.add_input(args.cloud))
    ref_traj = Trajectory.load(rec.add_input(args.reference_pose))
    ref_rgb = read_png_rgb(rec.add_input(args.reference))
    k = ref_traj.intrinsics
    if ref_rgb.shape != k.shape + (3,):
        raise ShapeMismatch(f"reference image {ref_rgb.shape} does not match intrinsics {k.shape}")
    if args.scene:
        rec.add_input(args.scene)
    return cloud, ref_rgb, ref_traj.poses[0], k


def cmd_plan(args) -> int:
    rec = _recorder(args, "plan")
    config = _config_from_args(args)
    rec.args["resolved_config"] = config.to_dict()
    cloud, ref_rgb, ref_pose, k = _load_reference(rec, args)
    completer = _make_completer(args)
    ref_render = render(cloud, ref_pose, k, config.splat_radius_px)
    space = build_search_space(ref_render, ref_pose, k, config.grid_azimuth, config.grid_elevation)
    halves = [h for h in args.halves.split(",") if h]
    report = {"config": config.to_dict(), "search_space": space.to_dict(), "halves": []}
    poses = []
    current = cloud
    start = (ref_rgb, ref_pose)
    try:
        for side in halves:
            sub = space if side == "full" else space.half(side)
            with rec.stage(f"plan_{side}"):
                res = plan_and_synthesize(current, start, k, config, sub, completer)
            current = res.cloud
            report["halves"].append({"side": side, "steps": [r.to_dict() for r in res.records]})
            for r in res.records:
                poses.extend(r.segment_trajectory.poses)
            with rec.stage("write"):
                _write_frames(rec, side, res.frames, res.masks)
            if not args.no_reset:
                start = (ref_rgb, ref_pose)
            else:
                start = (res.frames[-1], res.records[-1].chosen_pose)
    except CompleterError as exc:
        rec.write("plan.json", _json_bytes(report))
        rec.write("fused_partial.ply", _ply_bytes(current))
        rec.finish("failed", str(exc), exc.step)
        raise
    with rec.stage("write"):
        rec.write("fused.ply", _ply_bytes(current))
        rec.write("plan.json", _json_bytes(report))
        rec.write("trajectory.json", _json_bytes(Trajectory(tuple(poses), k).to_dict()))
    rec.finish()
    print(f"planned {sum(len(h['steps']) for h in report['halves'])} steps; cloud {len(cloud)} -> {len(current)} points")
    return 0


def cmd_baseline(args) -> int:
    rec = _recorder(args, "baseline")
    cloud, ref_rgb, ref_pose, k = _load_reference(rec, args)
    completer = _make_completer(args)
    ref_render = render(cloud, ref_pose, k, args.splat_radius_px)
    space = build_search_space(ref_render, ref_pose, k)
    sides = {"left": [-1], "right": [1], "both": [-1, 1]}[args.direction]
    current = cloud
    waypoints_json = []
    all_poses = []
    try:
        for sign in sides:
            name = "left" if sign < 0 else "right"
            traj = circular_baseline_trajectory(ref_pose, space, args.steps, sign * args.step_deg, k)
            waypoints_json.append({
                "side": name,
                "cumulative_azimuth_deg": [i * args.step_deg for i in range(1, args.steps + 1)],
                "poses": [p.to_dict() for p in traj.poses],
            })
            with rec.stage(f"baseline_{name}"):
                res = run_waypoints(current, (ref_rgb, ref_pose), k, traj.poses, completer,
                                    args.L, args.splat_radius_px, args.voxel_rho)
            current = res.cloud
            all_poses.extend(traj.poses)
            with rec.stage("write"):
                _write_frames(rec, name, res.frames, res.masks)
    except CompleterError as exc:
        rec.write("fused_partial.ply", _ply_bytes(current))
        rec.finish("failed", str(exc), exc.step)
        raise
    with rec.stage("write"):
        rec.write("trajectory.json", _json_bytes({
            "intrinsics": k.to_dict(),
            "step_deg": args.step_deg,
            "steps": args.steps,
            "segments": waypoints_json,
        }))
        rec.write("fused.ply", _ply_bytes(current))
    rec.finish()
    return 0


def _frame_paths(path) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        return sorted(p.glob("*.png"))
    return [p]


def cmd_eval(args) -> int:
    report: dict = {}
    if args.gen_traj or args.gt_traj:
        if not (args.gen_traj and args.gt_traj):
            raise ValidationError("--gen-traj and --gt-traj go together")
        gen, gt = Trajectory.load(args.gen_traj), Trajectory.load(args.gt_traj)
        if len(gen) != len(gt):
            raise LengthMismatch(f"trajectories have {len(gen)} and {len(gt)} poses")
        report.update(trajectory_report(gen, gt))
    if args.gen_frames or args.gt_frames:
        if not (args.gen_frames and args.gt_frames):
            raise ValidationError("--gen-frames and --gt-frames go together")
        a, b = _frame_paths(args.gen_frames), _frame_paths(args.gt_frames)
        if len(a) != len(b):
            raise LengthMismatch(f"{len(a)} generated frames vs {len(b)} ground-truth frames")
        values = []
        for i, (fa, fb) in enumerate(zip(a, b)):
            ia, ib = read_png_rgb(fa), read_png_rgb(fb)
            if ia.shape != ib.shape:
                raise ShapeMismatch(f"frame {i}: {fa.name} {ia.shape} vs {fb.name} {ib.shape}")
            v = psnr(ia, ib)
            values.append("inf" if math.isinf(v) else v)
        report["psnr"] = values
    if args.cloud or args.scene:
        if not (args.cloud and args.scene):
            raise ValidationError("--cloud and --scene go together")
        cloud = read_ply(args.cloud)
        report["coverage"] = surface_coverage(cloud, _load_scene(args.scene), args.samples, args.eps, args.seed)
    if not report:
        raise ValidationError("nothing to evaluate: pass trajectories, frames or a cloud with its scene")
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_focal(args) -> int:
    pm = PointMap.load(args.pointmap)
    fit = fit_focal_weiszfeld(pm, args.max_iters, args.tol)
    print(json.dumps({"focal_px": fit.focal_px, "iterations": fit.iterations, "objective": fit.objectives[-1]}))
    return 0


def cmd_serve(args) -> int:
    with BackgroundServer(host=args.host, port=args.port) as srv:
        print(f"passthrough completer listening on {srv.url}", flush=True)
        try:
            srv.thread.join()
        except KeyboardInterrupt:
            pass
    return 0


def cmd_replay(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    command = manifest["command"]
    if command not in COMMANDS:
        raise ValidationError(f"manifest command {command!r} cannot be replayed")
    for path, digest in manifest["inputs"].items():
        if sha256_file(path) != digest:
            raise ValidationError(f"input changed since the recorded run: {path}")
    out = args.out or tempfile.mkdtemp(prefix="viewplan-replay-")
    ns = argparse.Namespace(**{k: v for k, v in manifest["args"].items() if k != "resolved_config"})
    ns.out = out
    ns.verbose = False
    COMMANDS[command](ns)
    fresh = json.loads((Path(out) / MANIFEST).read_text())["artifacts"]
    diffs = sorted(
        rel for rel in set(fresh) | set(manifest["artifacts"])
        if fresh.get(rel) != manifest["artifacts"].get(rel)
    )
    for rel in diffs:
        print(f"MISMATCH {rel}")
    print(f"replayed {command} into {out}: {len(manifest['artifacts']) - len(diffs)} identical, {len(diffs)} differ")
    return 0 if not diffs else 5


COMMANDS = {
    "synth": cmd_synth,
    "render": cmd_render,
    "plan": cmd_plan,
    "baseline": cmd_baseline,
}


# --------------------------------------------------------------------------
# parser


def _add_completer_args(p):
    p.add_argument("--completer", choices=["passthrough", "oracle", "remote"], default="oracle")
    p.add_argument("--scene", type=_abs, help="scene.json (needed by the oracle completer)")
    p.add_argument("--endpoint", help=f"completion service URL (default: ${ENDPOINT_ENV})")
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--retries", type=int, default=0)


def _add_reference_args(p):
    p.add_argument("--cloud", type=_abs, required=True, help="initial cloud (PLY)")
    p.add_argument("--reference", type=_abs, required=True, help="reference image (PNG)")
    p.add_argument("--reference-pose", type=_abs, required=True,
                   help="trajectory JSON whose first pose and intrinsics describe the reference camera")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="viewplan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene and its reference view")
    p.add_argument("--recipe", default="occluder")
    p.add_argument("--recipe-file", type=_abs, help="JSON {recipe, density, seed, scale}")
    p.add_argument("--density", type=float, default=200.0, help="points per unit area")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("render", help="render a cloud along a trajectory")
    p.add_argument("--cloud", type=_abs, required=True)
    p.add_argument("--trajectory", type=_abs, required=True)
    p.add_argument("--splat-radius", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("plan", help="next-best-view planning with iterative synthesis")
    _add_reference_args(p)
    _add_completer_args(p)
    p.add_argument("--config", type=_abs, help="planner config JSON")
    p.add_argument("--N", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--theta", type=float)
    p.add_argument("--L", type=int)
    p.add_argument("--neighborhood-deg", dest="neighborhood_deg", type=float)
    p.add_argument("--grid-azimuth", dest="grid_azimuth", type=int)
    p.add_argument("--grid-elevation", dest="grid_elevation", type=int)
    p.add_argument("--splat-radius-px", dest="splat_radius_px", type=int)
    p.add_argument("--voxel-rho", dest="voxel_rho", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--halves", default="left,right",
                   help="comma-separated search-space parts to explore in order: left, right, full")
    p.add_argument("--no-reset", action="store_true",
                   help="continue the next half from the last planned pose instead of the reference")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("baseline", help="iterative synthesis along a circular trajectory")
    _add_reference_args(p)
    _add_completer_args(p)
    p.add_argument("--steps", type=int, default=3)
    p.add_argument("--step-deg", type=float, default=20.0)
    p.add_argument("--direction", choices=["left", "right", "both"], default="left")
    p.add_argument("--L", type=int, default=25)
    p.add_argument("--splat-radius-px", type=int, default=1)
    p.add_argument("--voxel-rho", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="pose, image and coverage metrics")
    p.add_argument("--gen-traj")
    p.add_argument("--gt-traj")
    p.add_argument("--gen-frames")
    p.add_argument("--gt-frames")
    p.add_argument("--cloud")
    p.add_argument("--scene")
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the JSON report here as well as to stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("focal", help="estimate the focal length of a point map (.npz)")
    p.add_argument("--pointmap", required=True)
    p.add_argument("--max-iters", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_focal)

    p = sub.add_parser("serve", help="run a passthrough completion server")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", help="re-run a recorded command and compare artifact hashes")
    p.add_argument("manifest")
    p.add_argument("--out")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ViewPlanError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"error: internal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
