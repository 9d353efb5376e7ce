"""Command-line entry points: ``run``, ``eval`` and ``sim``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import io
from .metrics import DEFAULT_SEGMENTS, Trajectory, ate_rmse, rpe_translation_percent, segment_errors
from .pipeline import OdometryPipeline, ScanInput, odometry_increments
from .simulator import PRESET_NAMES, simulate

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kinodom", description="Wheel-odometry-aware LiDAR odometry.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="estimate a trajectory for a dataset directory")
    run.add_argument("--dataset", required=True, type=Path)
    run.add_argument("--config", type=Path, help="key=value configuration file")
    run.add_argument("--output", required=True, type=Path, help="TUM trajectory to write")
    run.add_argument("--report", type=Path, help="per-scan diagnostics CSV")

    ev = sub.add_parser("eval", help="compare an estimate with a reference trajectory")
    ev.add_argument("--gt", required=True, type=Path)
    ev.add_argument("--est", required=True, type=Path)
    ev.add_argument("--segments", default=",".join(f"{s:g}" for s in DEFAULT_SEGMENTS))
    ev.add_argument("--max-time-diff", type=float, default=0.01)
    ev.add_argument("--segments-csv", type=Path, help="write per-segment errors here")

    sim = sub.add_parser("sim", help="write a synthetic dataset directory")
    sim.add_argument("--preset", required=True, choices=PRESET_NAMES)
    sim.add_argument("--out", required=True, type=Path)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--max-scans", type=int, help="keep only the first N scans")
    return parser


def _cmd_run(args) -> int:
    manifest = io.read_manifest(args.dataset)
    config = io.RunConfig()
    if args.config is not None:
        config = io.parse_run_config(args.config.read_text(), str(args.config))
    odometry = io.read_odometry_csv(manifest.odometry_file)
    files = manifest.scan_files()
    if len(files) != len(odometry):
        raise io.DataError(
            f"{len(files)} scan files but {len(odometry)} odometry rows in {manifest.root}"
        )
    pipeline = OdometryPipeline(config.odometry, manifest.extrinsic, config.initial_pose)
    for path, (stamp, _), increment in zip(files, odometry, odometry_increments(odometry)):
        cloud = io.read_scan_file(path)
        if not manifest.has_timestamps:
            cloud.timestamps = None
        pipeline.process_scan(ScanInput(cloud, increment, stamp))
    io.write_trajectory_tum(args.output, pipeline.state.trajectory)
    if args.report is not None:
        io.write_report_csv(args.report, pipeline.state.diagnostics)
    print(f"wrote {len(files)} poses to {args.output}")
    return EXIT_OK


def _parse_segments(text: str) -> list[float]:
    try:
        segments = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"invalid --segments {text!r}") from None
    if not segments or min(segments) <= 0:
        raise UsageError("--segments needs positive lengths")
    return segments


def _cmd_eval(args) -> int:
    segments = _parse_segments(args.segments)
    gt: Trajectory = io.read_trajectory_tum(args.gt)
    est: Trajectory = io.read_trajectory_tum(args.est)
    try:
        rpe = rpe_translation_percent(est, gt, segments, args.max_time_diff)
        ate = ate_rmse(est, gt, args.max_time_diff)
    except ValueError as exc:
        raise io.DataError(str(exc)) from None
    print(f"RPE {rpe:.2f}%")
    print(f"ATE {ate:.3f} m")
    if args.segments_csv is not None:
        io.write_segments_csv(args.segments_csv, segment_errors(est, gt, segments, args.max_time_diff))
    return EXIT_OK


def _cmd_sim(args) -> int:
    if args.max_scans is not None and args.max_scans < 1:
        raise UsageError("--max-scans must be positive")
    dataset = simulate(args.preset, seed=args.seed, max_scans=args.max_scans)
    io.write_dataset(args.out, dataset)
    print(f"wrote {len(dataset.scans)} scans to {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {"run": _cmd_run, "eval": _cmd_eval, "sim": _cmd_sim}[args.command]
        return handler(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (io.DataError, OSError) as exc:
        print(f"kinodom: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
