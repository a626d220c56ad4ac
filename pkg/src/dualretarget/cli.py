"""Command-line front end: retarget, graphs, metrics, rewards, sync.

Exit codes: 0 ok, 2 usage, 3 config/parse, 4 solver, 5 I/O.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .fixtures import GENERATORS, load_fixture
from .mesh import MeshConfig, extract_priors
from .metrics import retarget_report, trajectory_keypoints
from .motion_io import (
    MotionFormatError,
    atomic_write_text,
    build_manifolds,
    clip_from_bvh,
    load_clip,
    read_trajectory,
    write_trajectory,
)
from .rewards import RewardConfig, score_trajectory
from .robot import RobotSpecError, load_robot_spec
from .solver import SolverConfig, retarget_clip
from .sync import ChannelModel, SyncAgent, fixed_point_error, simulate

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4, 5
DEFAULT_SEED = 0

log = logging.getLogger("dualretarget")


class ConfigError(Exception):
    pass


class SolverFailure(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    inputs: list
    robot: str = None
    output: str = None
    seed: int = DEFAULT_SEED
    solver: SolverConfig = field(default_factory=SolverConfig)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    rewards: RewardConfig = field(default_factory=RewardConfig)


# --------------------------------------------------------------- loading


def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"{what} not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path} is not valid JSON (line {exc.lineno}): {exc.msg}") from None


def load_config_file(path):
    d = _read_json(path, "config file")
    unknown = set(d) - {"solver", "mesh", "rewards", "robot", "seed"}
    if unknown:
        raise ConfigError(f"config file {path}: unknown sections {sorted(unknown)}")
    return d


def build_manifest(args):
    """Defaults < --config file < command-line flags."""
    cfg = load_config_file(args.config) if args.config else {}
    try:
        solver = SolverConfig.from_dict(cfg.get("solver", {}))
        mesh = MeshConfig.from_dict(cfg.get("mesh", {}))
        rewards = RewardConfig.from_dict(cfg.get("rewards", {}))
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    overrides = {}
    for name in ("w_self", "w_inter", "w_reg", "lambda_rot", "delta", "eps_safe", "sqp_iters_per_frame"):
        v = getattr(args, name, None)
        if v is not None:
            overrides[name] = v
    if getattr(args, "no_collisions", False):
        overrides["collisions"] = False
    try:
        solver = replace(solver, **overrides)
    except ValueError as exc:
        raise ConfigError(f"invalid solver setting: {exc}") from None
    robot = getattr(args, "robot", None) or cfg.get("robot")
    seed = args.seed if args.seed is not None else cfg.get("seed", DEFAULT_SEED)
    return RunManifest(args.command, list(getattr(args, "inputs", []) or []), robot,
                       getattr(args, "out", None), seed, solver, mesh, rewards)


def load_spec(path):
    try:
        return load_robot_spec(path)
    except FileNotFoundError:
        raise ConfigError(f"robot spec not found: {path}") from None
    except (RobotSpecError, KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"robot spec {path or '(bundled)'} is invalid: {exc}") from None


def load_input(spec_str, bvh_scale=1.0, up_axis="z", names=None):
    """`fixture:NAME`, a keypoint file, or `a.bvh+b.bvh`."""
    try:
        if spec_str.startswith("fixture:"):
            name = spec_str.split(":", 1)[1]
            if name not in GENERATORS:
                raise ConfigError(f"unknown fixture {name!r}; choose from {sorted(GENERATORS)}")
            return load_fixture(name)
        if "+" in spec_str and spec_str.endswith(".bvh"):
            a, b = spec_str.split("+", 1)
            return clip_from_bvh(Path(a).read_text(), Path(b).read_text(), names, bvh_scale, up_axis)
        return load_clip(spec_str)
    except FileNotFoundError as exc:
        raise OSError(f"input not found: {exc.filename}") from None
    except MotionFormatError as exc:
        raise ConfigError(f"{spec_str}: {exc}") from None


def clip_stem(spec_str):
    if spec_str.startswith("fixture:"):
        return spec_str.split(":", 1)[1]
    return Path(spec_str.split("+")[0]).name.split(".")[0]


def _out_dir(path):
    if path is None:
        raise ConfigError("--out is required")
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {p}: {exc.strerror}") from None
    return p


def _json(obj):
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


# -------------------------------------------------------------- commands


def _retarget_one(job):
    inp, manifest, bvh = job
    spec = load_spec(manifest.robot)
    clip = load_input(inp, *bvh)
    traj, _ = retarget_clip(clip, (spec, spec), manifest.solver, manifest.mesh)
    return inp, traj


def cmd_retarget(args, manifest):
    out = None if args.dry_run else _out_dir(manifest.output)
    spec = load_spec(manifest.robot)
    bvh = (args.bvh_scale, args.up_axis, list(manifest.mesh.vertices))
    clips = [load_input(i, *bvh) for i in manifest.inputs]
    if args.dry_run:
        print(f"robot: {spec.name} ({spec.n_joints} joints)")
        for inp, clip in zip(manifest.inputs, clips):
            print(f"would retarget {inp}: {clip.n_frames} frames, dt={clip.frame_dt:.5f} -> "
                  f"{clip_stem(inp)}.traj.json, {clip_stem(inp)}.graphs.json, {clip_stem(inp)}.diag.json")
        print("solver: " + json.dumps(manifest.solver.to_dict(), sort_keys=True))
        return EXIT_OK
    jobs = [(i, manifest, bvh) for i in manifest.inputs]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_retarget_one, jobs))
    else:
        results = [_retarget_one(j) for j in jobs]
    failed = []
    for inp, traj in results:
        stem = clip_stem(inp)
        write_trajectory(traj, out / f"{stem}.traj.json")
        atomic_write_text(out / f"{stem}.graphs.json", traj.priors.to_json())
        atomic_write_text(out / f"{stem}.diag.json", _json(traj.diagnostics))
        bad = [d["frame"] for d in traj.diagnostics if "qp_failed" in d["flags"]]
        pen = max(d["penetration"] for d in traj.diagnostics)
        print(f"{inp}: {traj.n_frames} frames, max penetration {pen:.2e} m, failed frames {len(bad)}")
        if bad:
            failed.append((inp, bad))
    if failed:
        for inp, bad in failed:
            print(f"error: {inp}: QP failed at frames {bad[:20]}", file=sys.stderr)
        raise SolverFailure("solver failed on some frames")
    return EXIT_OK


def _load_pair(args, manifest):
    spec = load_spec(manifest.robot)
    try:
        traj = read_trajectory(args.traj)
    except FileNotFoundError:
        raise OSError(f"trajectory not found: {args.traj}") from None
    except MotionFormatError as exc:
        raise ConfigError(f"{args.traj}: {exc}") from None
    clip = load_input(args.clip, args.bvh_scale, args.up_axis, list(manifest.mesh.vertices))
    if clip.n_frames != traj.n_frames:
        raise ConfigError(f"trajectory has {traj.n_frames} frames but clip has {clip.n_frames}")
    meta = traj.metadata
    mesh = MeshConfig.from_dict(meta["mesh_config"]) if "mesh_config" in meta else manifest.mesh
    h = meta.get("h_robot_manifold")
    if h is None:
        raise ConfigError(f"{args.traj}: metadata lacks h_robot_manifold")
    estimator = meta.get("solver_config", {}).get("height_estimator", "head_foot")
    ref = build_manifolds(clip, h, estimator)
    return spec, traj, ref, mesh


def cmd_graphs(args, manifest):
    spec, traj, ref, mesh = _load_pair(args, manifest)
    priors = extract_priors(ref, mesh, traj, (spec, spec))
    if args.dry_run:
        print(f"would write graphs for {traj.n_frames} frames to {args.out}")
        return EXIT_OK
    out = _out_dir(manifest.output)
    atomic_write_text(out / f"{clip_stem(args.clip)}.graphs.json", priors.to_json())
    return EXIT_OK


def cmd_metrics(args, manifest):
    spec, traj, ref, mesh = _load_pair(args, manifest)
    priors = extract_priors(ref, mesh)
    if args.dry_run:
        print(f"would compute metrics for {traj.n_frames} frames into {args.out}")
        return EXIT_OK
    h = args.h_robot if args.h_robot is not None else spec.height
    report = retarget_report(traj, (spec, spec), ref, priors, h)
    out = _out_dir(manifest.output)
    stem = clip_stem(args.clip)
    atomic_write_text(out / f"{stem}.metrics.json", report.to_json())
    atomic_write_text(out / f"{stem}.metrics.txt", report.to_table())
    atomic_write_text(out / f"{stem}.traces.csv", report.traces_to_text())
    sys.stdout.write(report.to_table())
    return EXIT_OK


def cmd_rewards(args, manifest):
    spec, traj, ref, mesh = _load_pair(args, manifest)
    priors = extract_priors(ref, mesh)
    if args.dry_run:
        print(f"would score {traj.n_frames} frames into {args.out}")
        return EXIT_OK
    sim = trajectory_keypoints(traj, (spec, spec), priors.vertex_names)
    ri, rc = score_trajectory(sim, priors, manifest.rewards, args.contact_threshold, args.nominal_force)
    w_i = manifest.rewards.weight("interact_edge")
    w_c = manifest.rewards.weight("contact")
    lines = ["frame,r_inter,r_contact,weighted"]
    for t, (a, b) in enumerate(zip(ri, rc)):
        lines.append(f"{t},{a:.9g},{b:.9g},{w_i * a + w_c * b:.9g}")
    out = _out_dir(manifest.output)
    stem = clip_stem(args.clip)
    atomic_write_text(out / f"{stem}.rewards.csv", "\n".join(lines) + "\n")
    summary = {"r_inter_mean": round(float(ri.mean()), 10), "r_contact_mean": round(float(rc.mean()), 10)}
    atomic_write_text(out / f"{stem}.rewards.json", _json(summary))
    print(f"r_inter mean {summary['r_inter_mean']:.4f}, r_contact mean {summary['r_contact_mean']:.4f}")
    return EXIT_OK


def cmd_sync(args, manifest):
    if args.k < 0:
        raise ConfigError("--k must be non-negative")
    if not 0 <= args.delay[0] <= args.delay[1]:
        raise ConfigError("--delay needs 0 <= LO <= HI (milliseconds)")
    if args.duration <= 0:
        raise ConfigError("--duration must be positive")
    try:
        agents = [SyncAgent(0.0, args.drift[0], args.k), SyncAgent(0.0, args.drift[1], args.k, not args.ego_only)]
        channel = ChannelModel(args.delay[0] / 1000.0, args.delay[1] / 1000.0, args.drop, manifest.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print(f"seed {manifest.seed}")
    trace = simulate(agents, channel, args.duration)
    if not args.dry_run and manifest.output:
        out = _out_dir(manifest.output)
        atomic_write_text(out / "sync_trace.csv", trace.to_text())
    err = np.abs(trace.error)
    expected = fixed_point_error(args.drift[0], args.drift[1], args.k)
    print(f"steady-state |dphi| {trace.steady_state_error():.6g} (fixed point {expected:.6g}), "
          f"max {err.max():.6g}, final {err[-1]:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_common(p):
    p.add_argument("--robot", help="robot spec JSON (default: bundled G1-like model)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--dry-run", action="store_true", help="validate and print the plan, write nothing")
    p.add_argument("--bvh-scale", type=float, default=1.0, help="BVH length unit in metres")
    p.add_argument("--up-axis", choices=("z", "y"), default="z")


def _add_pair(p):
    p.add_argument("--traj", required=True, help="trajectory JSON written by 'retarget'")
    p.add_argument("--clip", required=True, help="source clip the trajectory came from")


def build_parser():
    parser = argparse.ArgumentParser(prog="dualretarget", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config", help="JSON config with solver/mesh/rewards/robot/seed sections")
    parser.add_argument("--seed", type=int, default=None, help=f"random seed (default {DEFAULT_SEED})")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("retarget", help="retarget two-agent clips onto two robots")
    p.add_argument("inputs", nargs="+", help="keypoint file, fixture:NAME, or A.bvh+B.bvh")
    _add_common(p)
    p.add_argument("--jobs", type=int, default=1, help="clips solved in parallel")
    for name in ("w_self", "w_inter", "w_reg", "lambda_rot", "delta", "eps_safe"):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=float)
    p.add_argument("--sqp-iters-per-frame", dest="sqp_iters_per_frame", type=int)
    p.add_argument("--no-collisions", action="store_true")

    p = sub.add_parser("graphs", help="extract interaction and contact graphs")
    _add_pair(p)
    _add_common(p)

    p = sub.add_parser("metrics", help="IPR, MPD, IEE and contact F1 of a trajectory")
    _add_pair(p)
    _add_common(p)
    p.add_argument("--h-robot", type=float, help="IEE normalizer in metres (default: robot spec height)")

    p = sub.add_parser("rewards", help="offline interaction and contact rewards per frame")
    _add_pair(p)
    _add_common(p)
    p.add_argument("--contact-threshold", type=float, default=0.10)
    p.add_argument("--nominal-force", type=float, default=20.0)

    p = sub.add_parser("sync", help="simulate two-agent phase synchronization")
    p.add_argument("--k", type=float, default=0.2)
    p.add_argument("--drift", type=float, nargs=2, default=(1e-3, -1e-3), metavar=("RHO1", "RHO2"))
    p.add_argument("--delay", type=float, nargs=2, default=(20.0, 60.0), metavar=("LO_MS", "HI_MS"))
    p.add_argument("--drop", type=float, default=0.0)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--ego-only", action="store_true", help="only agent 0 applies the correction")
    p.add_argument("--out", help="directory for sync_trace.csv")
    p.add_argument("--dry-run", action="store_true")
    return parser


COMMANDS = {"retarget": cmd_retarget, "graphs": cmd_graphs, "metrics": cmd_metrics,
            "rewards": cmd_rewards, "sync": cmd_sync}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        manifest = build_manifest(args)
        return COMMANDS[args.command](args, manifest)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
