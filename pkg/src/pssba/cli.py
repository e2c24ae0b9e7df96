"""Command-line entry point: ``pssba <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 non-convergence (outputs still written).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .cloud import build_world_cloud
from .pipeline import FIXED, PROGRESSIVE, PipelineConfig, PipelineError, run_pss_ba
from .pose_adjustment import POINT2PLANE, POLYNOMIAL
from .simbench import suite
from .simbench.metrics import ape, occupancy_count
from .simbench.scanner import FRAME_RATE_HZ, NoiseSpec, generate_frames, perturb_poses
from .simbench.scene import format_scene, parse_scene

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NOT_CONVERGED = 0, 1, 2, 3

log = logging.getLogger("pssba")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _sim_gen(args) -> int:
    if args.scene in suite.SUITE:
        sc = suite.scene(args.scene)
        truth = suite.trajectory(args.scene, args.n_frames)
        stamps = np.arange(len(truth)) / FRAME_RATE_HZ
    else:
        sc = parse_scene(Path(args.scene).read_text(), args.scene)
        if args.trajectory is None:
            raise UsageError("--trajectory is required with a scene file")
    if args.trajectory is not None:
        stamps, truth = io.read_trajectory(args.trajectory)
    frames = generate_frames(sc, truth, args.points_per_frame, args.fov, args.max_range,
                             args.seed, args.range_noise)
    for f, s in zip(frames, stamps):
        f.timestamp = float(s)
    io.write_frames(args.frames_out, frames)
    io.write_trajectory(args.truth_out, stamps, truth)
    if args.scene_out:
        Path(args.scene_out).write_text(format_scene(sc))
    print(f"frames: {len(frames)}")
    print(f"points: {sum(len(f) for f in frames)}")
    return EXIT_OK


def _perturb(args) -> int:
    stamps, poses = io.read_trajectory(args.poses)
    spec = NoiseSpec(args.trans_sigma, args.rot_sigma_deg, args.mode, seed=args.seed)
    io.write_trajectory(args.out, stamps, perturb_poses(poses, spec))
    return EXIT_OK


def _load_frames(frames_path, poses_path):
    stamps, poses = io.read_trajectory(poses_path)
    pts, owner = io.read_cloud(frames_path)
    frames = io.frames_from_cloud(pts, owner, stamps)
    return stamps, poses, frames


def _run(args) -> int:
    cfg = io.read_config(args.config) if args.config else PipelineConfig()
    if args.schedule:
        cfg.schedule = args.schedule
    if args.residual:
        cfg.residual_mode = args.residual
    try:
        cfg.validate()
    except ValueError as exc:
        raise io.DataError(str(exc)) from None
    stamps, init, frames = _load_frames(args.frames, args.poses)
    truth = io.read_trajectory(args.truth)[1] if args.truth else None

    report = run_pss_ba(frames, init, cfg)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_trajectory(out / "poses.txt", stamps, report.poses)
    io.write_cloud(out / "smoothed.txt", report.smoothed, report.smoothed_frame)
    io.write_surfaces(out / "surfaces.txt", report.surfaces)
    (out / "report.log").write_text("\n".join(io.report_log_lines(report)) + "\n")
    summary = {
        "frames": len(frames),
        "points": sum(len(f) for f in frames),
        "schedule": cfg.schedule,
        "residual_mode": cfg.residual_mode,
        "iterations": len(report.iterations),
        "converged": str(report.converged).lower(),
        "reason": report.reason,
        "gamma_final_m": f"{report.gammas[-1]:.6f}" if report.iterations else "nan",
        "gamma_min_m": f"{report.gamma_min:.6f}",
        "rms_initial_m": f"{report.iterations[0].rms_before:.6e}" if report.iterations else "nan",
        "rms_final_m": f"{report.iterations[-1].rms_after:.6e}" if report.iterations else "nan",
        "surfaces": len(report.surfaces),
    }
    if truth is not None:
        if len(truth) != len(report.poses):
            raise io.DataError(f"truth has {len(truth)} poses, run has {len(report.poses)}")
        summary["ape_initial_rmse_m"] = f"{ape(init, truth).rmse_m:.6e}"
        summary["ape_final_rmse_m"] = f"{ape(report.poses, truth).rmse_m:.6e}"
    io.write_summary(out / "summary.txt", summary)
    if not args.no_figures:
        from .plotting import plot_iterations, plot_trajectories
        if report.iterations:
            plot_iterations(report, out / "iterations.png", cfg.t_conv)
        plot_trajectories(out / "trajectory.png", init, report.poses, truth)
    for k, v in summary.items():
        print(f"{k}: {v}")
    if not report.converged:
        log.warning("stopped without converging (%s)", report.reason)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _eval_ape(args) -> int:
    _, est = io.read_trajectory(args.estimate)
    _, ref = io.read_trajectory(args.reference)
    if len(est) != len(ref):
        raise io.DataError(f"trajectory lengths differ: {len(est)} vs {len(ref)}")
    m = ape(est, ref)
    print(f"rmse {m.rmse_m:.9f}")
    print(f"mean {m.mean_m:.9f}")
    print(f"max {m.max_m:.9f}")
    return EXIT_OK


def _eval_occupancy(args) -> int:
    if args.voxel <= 0:
        raise UsageError("--voxel must be positive")
    pts, _ = io.read_cloud(args.cloud)
    print(occupancy_count(pts, args.voxel))
    return EXIT_OK


def _export_cloud(args) -> int:
    _, poses, frames = _load_frames(args.frames, args.poses)
    cloud = build_world_cloud(frames, poses)
    io.write_cloud(args.out, cloud.world, cloud.frame)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pssba", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sim-gen", help="simulate frames and ground-truth poses")
    s.add_argument("--scene", required=True, help=f"suite name ({', '.join(suite.SUITE)}) or scene file")
    s.add_argument("--trajectory", help="ground-truth trajectory file (default: suite path)")
    s.add_argument("--n-frames", type=int, default=20)
    s.add_argument("--points-per-frame", type=int, default=1500)
    s.add_argument("--fov", type=float, default=90.0, help="vertical field of view [deg]")
    s.add_argument("--max-range", type=float, default=40.0)
    s.add_argument("--range-noise", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--frames-out", required=True)
    s.add_argument("--truth-out", required=True)
    s.add_argument("--scene-out")
    s.set_defaults(func=_sim_gen)

    s = sub.add_parser("perturb", help="add Gaussian noise to a trajectory")
    s.add_argument("poses")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--trans-sigma", type=float, default=0.2)
    s.add_argument("--rot-sigma-deg", type=float, default=1.0)
    s.add_argument("--mode", choices=("independent", "random_walk"), default="independent")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_perturb)

    s = sub.add_parser("run", help="adjust poses")
    s.add_argument("frames", help="sensor-frame cloud file with a frame column")
    s.add_argument("poses", help="initial trajectory")
    s.add_argument("-o", "--out-dir", required=True)
    s.add_argument("--config")
    s.add_argument("--schedule", choices=(PROGRESSIVE, FIXED))
    s.add_argument("--residual", choices=(POLYNOMIAL, POINT2PLANE))
    s.add_argument("--truth", help="ground-truth trajectory for APE in the summary")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=_run)

    s = sub.add_parser("eval-ape", help="absolute position error of a trajectory")
    s.add_argument("estimate")
    s.add_argument("reference")
    s.set_defaults(func=_eval_ape)

    s = sub.add_parser("eval-occupancy", help="count occupied voxels of a cloud")
    s.add_argument("cloud")
    s.add_argument("--voxel", type=float, default=0.1)
    s.set_defaults(func=_eval_occupancy)

    s = sub.add_parser("export-cloud", help="merge frames into a world cloud")
    s.add_argument("frames")
    s.add_argument("poses")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=_export_cloud)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:      # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"pssba {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (io.DataError, PipelineError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"pssba {args.command}: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
