"""Command-line entry point: ``cmplab run | summarize | curve``."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .harness import (equilibrium_curve, load_config, read_report_csv, run_replications, summarize,
                      write_outputs)


def parse_grid(spec: str) -> list[float]:
    """``"0:1:11"`` (start:stop:count, inclusive) or a comma list ``"0,0.25,1"``."""
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"bad grid {spec!r}; use start:stop:count")
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        return np.linspace(start, stop, count).tolist()
    try:
        return [float(p) for p in spec.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {spec!r}") from None


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.reps is not None:
        changes["replications"] = args.reps
    if changes:
        cfg = cfg.replace(**changes)
    out_dir = args.output or cfg.output_dir or f"out/{cfg.name}"
    report = run_replications(cfg, workers=args.workers)
    paths = write_outputs(report, out_dir)
    table = summarize(report)
    T = report.horizon
    print(f"{cfg.name}: R={report.replications} T={T} "
          f"({report.metadata['wall_clock_seconds']:.1f}s)")
    print(f"  ground truth at T: {table.ground_truth_mean[T]:.4f}")
    for name in table.estimators:
        print(f"  {name:8s} mean {table.mean[name][T]:.4f}  "
              f"95% [{table.lo95[name][T]:.4f}, {table.hi95[name][T]:.4f}]")
    for k, p in paths.items():
        print(f"  wrote {k}: {p}")
    return 0


def _cmd_summarize(args) -> int:
    table = summarize(read_report_csv(args.report))
    if args.output:
        table.to_csv(args.output)
    else:
        table.to_csv(sys.stdout)
    return 0


def _cmd_curve(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(master_seed=args.seed)
    curve = equilibrium_curve(cfg, args.grid, rep=args.rep)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            curve.to_csv(fh)
    else:
        curve.to_csv(sys.stdout)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cmplab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run replications and write report/summary CSVs")
    run.add_argument("config")
    run.add_argument("-o", "--output", help="output directory")
    run.add_argument("--seed", type=int, help="override master seed")
    run.add_argument("--reps", type=int, help="override replication count")
    run.add_argument("-j", "--workers", "--threads", dest="workers", type=int, default=1)
    run.set_defaults(func=_cmd_run)

    sm = sub.add_parser("summarize", help="summary CSV from a report CSV")
    sm.add_argument("report")
    sm.add_argument("-o", "--output")
    sm.set_defaults(func=_cmd_summarize)

    cv = sub.add_parser("curve", help="equilibrium mean versus treatment probability")
    cv.add_argument("config")
    cv.add_argument("--grid", type=parse_grid, default=parse_grid("0:1:11"))
    cv.add_argument("--rep", type=int, default=0)
    cv.add_argument("--seed", type=int)
    cv.add_argument("-o", "--output")
    cv.set_defaults(func=_cmd_curve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except BrokenPipeError:
        # stdout closed early (e.g. piped into head)
        sys.stderr.close()
        return 0
    except Exception as e:
        print(f"cmplab: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
