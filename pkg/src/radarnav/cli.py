"""Command-line interface: simulate, run, eval."""
from __future__ import annotations

import argparse
import sys

import numpy as np

from . import dataset, metrics, plots
from .config import Config, ConfigError, load_config
from .pipeline import run_pipeline
from .scenario_io import load_scenario
from .sim import simulate


def _cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    out = simulate(scenario)
    gt = [
        (float(t), p, R)
        for t, p, R in zip(out.gt_times, out.gt_positions, out.gt_rotations)
    ]
    dataset.write_dataset(args.out, out.imu, out.scans, gt)
    if args.world_out:
        dataset.write_point_map(args.world_out, out.world)
    print(
        f"simulated {len(out.imu)} IMU samples, {len(out.scans)} scans, "
        f"{out.world.shape[0]} world points"
    )
    return 0


def _cmd_run(args) -> int:
    cfg = load_config(args.config) if args.config else Config()
    if args.mode:
        cfg.mode = args.mode
        cfg.__post_init__()
    events = dataset.read_dataset(args.dataset)
    prior = dataset.read_point_map(args.prior_map) if args.prior_map else None
    result = run_pipeline(events, cfg, prior)
    dataset.write_trajectory(args.out, result.trajectory)
    if args.events:
        with open(args.events, "w") as f:
            f.write(f"# mode={cfg.mode}\n")
            for line in result.events:
                f.write(line + "\n")
    print(result.timing.format_table())
    if args.plot_dir:
        est = dataset.read_trajectory(args.out)
        gt_records = [g for kind, g in events if kind == "GT"]
        gt = None
        if gt_records:
            gt = (
                np.array([g.t for g in gt_records]),
                np.array([g.position for g in gt_records]),
                np.array([g.rotation for g in gt_records]),
            )
        plots.save_trajectory_figure(args.plot_dir, est, gt)
        if gt is not None and len(gt_records) >= 2:
            plots.save_error_figure(args.plot_dir, est, gt)
    return 0


def _cmd_eval(args) -> int:
    est = dataset.read_trajectory(args.est)
    gt = dataset.read_trajectory(args.gt)
    trans, rot = metrics.ape_rmse(est, gt, align=args.align)
    loop = metrics.loop_closure_error(est)
    rows = [
        ("ape_translation_rmse_m", trans),
        ("ape_rotation_rmse_deg", rot),
        ("loop_closure_error_m", loop),
    ]
    for name, value in rows:
        print(f"{name} = {value:.6f}")
    if args.csv:
        with open(args.csv, "w") as f:
            f.write("metric,value\n")
            for name, value in rows:
                f.write(f"{name},{value:.9f}\n")
    if args.plot_dir:
        plots.save_trajectory_figure(args.plot_dir, est, gt)
        plots.save_error_figure(args.plot_dir, est, gt)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="radarnav", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("simulate", help="generate a synthetic dataset")
    ps.add_argument("--scenario", required=True)
    ps.add_argument("--out", required=True, help="dataset output (.gz supported)")
    ps.add_argument("--world-out", help="write the world point set (prior-map format)")
    ps.set_defaults(func=_cmd_simulate)

    pr = sub.add_parser("run", help="run the navigation pipeline on a dataset")
    pr.add_argument("--dataset", required=True)
    pr.add_argument("--config")
    pr.add_argument("--prior-map")
    pr.add_argument("--mode", choices=["full", "doppler-only", "p2d-only", "p2p-only"])
    pr.add_argument("--out", required=True, help="estimated trajectory (TUM format)")
    pr.add_argument("--events", help="write the event log to this file")
    pr.add_argument("--plot-dir", help="render figures into this directory")
    pr.set_defaults(func=_cmd_run)

    pe = sub.add_parser("eval", help="evaluate a trajectory against ground truth")
    pe.add_argument("--est", required=True)
    pe.add_argument("--gt", required=True)
    pe.add_argument("--align", choices=["first", "none"], default="first")
    pe.add_argument("--csv", help="write metrics as CSV")
    pe.add_argument("--plot-dir", help="render figures into this directory")
    pe.set_defaults(func=_cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, dataset.DatasetError, metrics.EvaluationError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
