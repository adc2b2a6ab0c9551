"""Command-line entry point.

Subcommands: simulate, depth-eval, sysid, wind-eval, lqr-check,
dispersion-export. All take --config (key=value file), --seed and --out.
Exit codes: 0 success, 2 config error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import flight_control as fc
from . import harness
from . import planner as pl
from .config import ConfigError, load_config


def _add_common(p):
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default="out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forestnav",
                                     description="Monocular forest-flight stack")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run closed-loop episodes")
    _add_common(p)
    p.add_argument("--episodes", type=int, default=1,
                   help="number of episodes (seeds seed..seed+N-1)")
    p.add_argument("--dump-frames", action="store_true",
                   help="write PGM/PFM frames for the first episode")

    p = sub.add_parser("depth-eval", help="scripted-run depth accuracy (binned RMSE)")
    _add_common(p)

    p = sub.add_parser("sysid", help="system identification session")
    _add_common(p)
    p.add_argument("--log", default=None,
                   help="fit from an existing flight-log CSV instead of flying")

    p = sub.add_parser("wind-eval", help="wind estimation / correction report")
    _add_common(p)

    p = sub.add_parser("lqr-check", help="synthesize the LQR gain and verify it")
    _add_common(p)

    p = sub.add_parser("dispersion-export", help="export the budgeted trajectory library")
    _add_common(p)
    return parser


def _config_from(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def cmd_simulate(args) -> int:
    cfg = _config_from(args)
    os.makedirs(args.out, exist_ok=True)
    summary_rows = []
    for i in range(args.episodes):
        ep_cfg = load_config(args.config, {"seed": cfg.seed + i})
        log = harness.run_episode(ep_cfg)
        name = "episode.csv" if args.episodes == 1 else f"episode_{i:03d}.csv"
        log.save_csv(os.path.join(args.out, name))
        summary_rows.append((ep_cfg.seed, log.distance_flown, int(log.crashed),
                             int(log.reached_goal), log.trees_passed,
                             log.tracking_losses, log.end_reason))
        print(f"episode seed={ep_cfg.seed} distance={log.distance_flown:.2f} m "
              f"crashed={log.crashed} reason={log.end_reason}")
    if args.episodes > 1:
        import csv
        with open(os.path.join(args.out, "summary.csv"), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["seed", "distance", "crashed", "reached_goal",
                             "trees_passed", "losses", "reason"])
            for row in summary_rows:
                writer.writerow([f"{v:.9g}" if isinstance(v, float) else v
                                 for v in row])
    return 0


def cmd_depth_eval(args) -> int:
    cfg = _config_from(args)
    os.makedirs(args.out, exist_ok=True)
    table = harness.depth_eval(cfg, out_dir=args.out)
    table.save_csv(os.path.join(args.out, "rmse.csv"))
    for (lo, hi), r, c in zip(table.bins, table.rmse, table.counts):
        print(f"bin [{lo:g}, {hi:g}) m: rmse={r:.3f} m over {int(c)} px")
    return 0


def cmd_sysid(args) -> int:
    cfg = _config_from(args)
    os.makedirs(args.out, exist_ok=True)
    if args.log is not None:
        model = harness.fit_from_log(args.log, cfg.dt)
        report = {"transitions": "from-log",
                  "residual_rms": model.residual_rms.tolist()}
    else:
        model, report = harness.sysid_session(cfg, out_dir=args.out)
    harness.save_model_csv(os.path.join(args.out, "model.csv"), model)
    for key, val in report.items():
        print(f"{key}: {val}")
    return 0


def cmd_wind_eval(args) -> int:
    cfg = _config_from(args)
    if not cfg.gusts:
        cfg.gusts = "5:8:0.12:-0.08"
    os.makedirs(args.out, exist_ok=True)
    report = harness.wind_eval(cfg, out_dir=args.out)
    for key, val in report.items():
        print(f"{key}: {val}")
    return 0


def cmd_lqr_check(args) -> int:
    cfg = _config_from(args)
    os.makedirs(args.out, exist_ok=True)
    model, _ = harness.sysid_session(cfg)
    gain = fc.solve_lqr(model, np.diag(cfg.lqr_q_diag), np.diag(cfg.lqr_r_diag))
    A, B = model.A, model.B
    P = gain.P
    dare_residual = float(np.max(np.abs(
        A.T @ P @ A - P
        - A.T @ P @ B @ np.linalg.solve(np.diag(cfg.lqr_r_diag) + B.T @ P @ B,
                                        B.T @ P @ A)
        + np.diag(cfg.lqr_q_diag))))
    radius = float(np.max(np.abs(np.linalg.eigvals(A - B @ gain.K))))
    import csv
    with open(os.path.join(args.out, "lqr_gain.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["row"] + [f"k{j}" for j in range(5)])
        for i, row in enumerate(gain.K):
            writer.writerow([i] + [f"{v:.12g}" for v in row])
    print(f"dare_residual: {dare_residual:.3e}")
    print(f"closed_loop_spectral_radius: {radius:.6f}")
    return 0


def cmd_dispersion_export(args) -> int:
    cfg = _config_from(args)
    os.makedirs(args.out, exist_ok=True)
    library = pl.generate_library(cfg.library_size, cfg.traj_length)
    subset = pl.max_dispersion_subset(library, cfg.budget)
    pl.save_library_csv(os.path.join(args.out, "library.csv"),
                        [library.full[i] for i in subset])
    print(f"exported {len(subset)} of {len(library.full)} trajectories")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "depth-eval": cmd_depth_eval,
    "sysid": cmd_sysid,
    "wind-eval": cmd_wind_eval,
    "lqr-check": cmd_lqr_check,
    "dispersion-export": cmd_dispersion_export,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure surface
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
