"""Command-line entry points: simulate, skeleton, serve, report."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path



def _add_simulate(sub):
    p = sub.add_parser("simulate", help="run the simulation grid from a TOML config")
    p.add_argument("--config", required=True, type=Path, help="TOML configuration file")
    p.add_argument("--out", required=True, type=Path, help="output directory for report files")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--threads", type=int, default=None, help="worker processes (default from config)")


def _add_skeleton(sub):
    p = sub.add_parser("skeleton", help="print a calibrated skeleton and its dose labels")
    p.add_argument("--target", type=float, default=0.25)
    p.add_argument("--doses", type=int, default=6)
    p.add_argument("--nu", type=int, default=2, help="prior guess of the optimal dose")
    p.add_argument("--delta", type=float, default=0.08, help="indifference half-width")
    p.add_argument("--intercept", type=float, default=3.0)


def _add_serve(sub):
    p = sub.add_parser("serve", help="run the trial-conduct HTTP service")
    p.add_argument("--port", type=int, default=None, help="port (env PCRM_PORT, default 8351)")
    p.add_argument("--data-dir", type=Path, default=None, help="state directory (env PCRM_DATA_DIR)")


def _add_report(sub):
    p = sub.add_parser("report", help="render tables and figures from a dose-selection CSV")
    p.add_argument("--in", dest="input", required=True, type=Path, help="dose_selection.csv from simulate")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.add_argument("--figures-dir", type=Path, default=None, help="where to write figures (default: alongside input)")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pcrm", description="precision dose-finding toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_simulate(sub)
    _add_skeleton(sub)
    _add_serve(sub)
    _add_report(sub)
    args = parser.parse_args(argv)

    if args.command == "simulate":
        return _cmd_simulate(args)
    if args.command == "skeleton":
        return _cmd_skeleton(args)
    if args.command == "serve":
        return _cmd_serve(args)
    if args.command == "report":
        return _cmd_report(args)
    parser.error("unknown command")
    return 2


def _cmd_simulate(args) -> int:
    from dataclasses import replace

    from .config import ConfigError, load_sim_config
    from .reporting import write_report_files
    from .simulate import run_grid

    try:
        config = load_sim_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        config = replace(config, master_seed=args.seed)
    if args.threads is not None:
        config = replace(config, threads=max(1, args.threads))

    started = time.time()
    n_cells = len(config.scenarios) * len(config.prevalences) * len(config.n_max_grid) * len(config.designs)
    print(
        f"running {n_cells} cells x {config.replicates} replicates "
        f"(seed {config.master_seed}, {config.threads} worker(s))"
    )
    reports = run_grid(config)
    meta = {
        "master_seed": config.master_seed,
        "replicates": config.replicates,
        "elapsed_seconds": round(time.time() - started, 3),
        "config_file": str(args.config),
    }
    paths = write_report_files(reports, args.out, meta=meta)
    for name, path in paths.items():
        print(f"wrote {name}: {path}")
    return 0


def _cmd_skeleton(args) -> int:
    from .estimation import EstimationError, calibrate_skeleton, dose_labels

    try:
        skeleton = calibrate_skeleton(args.target, args.doses, args.nu, args.delta, intercept=args.intercept)
        labels = dose_labels(skeleton, intercept=args.intercept, prior_slope=1.0)
    except (ValueError, EstimationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"target={args.target:g} doses={args.doses} nu={args.nu} delta={args.delta:g}")
    print("dose  skeleton   label")
    for j, (p, x) in enumerate(zip(skeleton, labels), start=1):
        print(f"{j:>4}  {p:8.6f}  {x:+9.6f}")
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    port = args.port if args.port is not None else int(os.environ.get("PCRM_PORT", "8351"))
    data_dir = args.data_dir if args.data_dir is not None else Path(os.environ.get("PCRM_DATA_DIR", "./pcrm-data"))
    print(f"serving on 127.0.0.1:{port}, state in {data_dir}")
    serve(port, data_dir)
    return 0


def _cmd_report(args) -> int:
    from .reporting import read_dose_csv, render_figures, rows_to_table

    if not args.input.exists():
        print(f"error: input file not found: {args.input}", file=sys.stderr)
        return 2
    rows = read_dose_csv(args.input)
    if args.format == "table":
        print(rows_to_table(rows))
    elif args.format == "csv":
        import csv as _csv

        writer = _csv.DictWriter(sys.stdout, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    else:
        print(json.dumps(rows, indent=2))
    if not args.no_figures:
        figures_dir = args.figures_dir or args.input.parent / "figures"
        written = render_figures(rows, figures_dir)
        for path in written:
            print(f"wrote figure: {path}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
