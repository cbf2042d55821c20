"""Command-line experiment runner.

Subcommands: ``run``, ``sweep``, ``conformance``, ``audit``.  Config values
come from the dataclass defaults, then ``--config``, then ``--seed`` and
``--out``.  ``DSPE_LOG`` sets the log level (default WARNING).

Exit codes: 0 success, 1 usage or config error, 2 conformance failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import conformance, reports
from .config import RunConfig
from .errors import ConfigError
from .tensorio import TensorFormatError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFORMANCE = 2

log = logging.getLogger("dspe")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _resolve(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    return cfg.override(**changes) if changes else cfg


def cmd_run(args) -> int:
    cfg = _resolve(args)
    exp = reports.run_experiment(cfg)
    report = reports.build_report(exp)
    reports.write_outputs(cfg.out_dir, reports.run_outputs(exp, report))
    print(reports.summarize(report))
    return EXIT_OK


def load_grid(path: str) -> dict[str, list]:
    try:
        grid = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"grid file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"grid file is not valid JSON: {exc}") from exc
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("grid must be a non-empty object of parameter -> list of values")
    for key, values in grid.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid entry {key!r} must be a non-empty list")
    return grid


def grid_points(base: RunConfig, grid: dict[str, list]) -> list[tuple[dict, RunConfig]]:
    keys = list(grid)
    points = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        values = dict(zip(keys, combo))
        points.append((values, base.override(**values)))
    return points


def _sweep_point(cfg: RunConfig) -> dict:
    return reports.build_report(reports.run_experiment(cfg))


def cmd_sweep(args) -> int:
    base = _resolve(args)
    grid = load_grid(args.grid)
    points = grid_points(base, grid)
    cfgs = [c for _, c in points]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_point, cfgs))
    else:
        results = [_sweep_point(c) for c in cfgs]
    keys = list(grid)
    header = ["point"] + keys + reports.metrics_header()
    rows = [[i] + [vals[k] for k in keys] + reports.metrics_row(r) for i, ((vals, _), r) in enumerate(zip(points, results))]
    files = {
        "sweep.csv": reports.csv_text(header, rows).encode(),
        "sweep.json": reports.dumps_report({"grid": grid, "points": results}).encode(),
    }
    reports.write_outputs(base.out_dir, files)
    for r in results:
        print(reports.summarize(r))
    return EXIT_OK


def cmd_conformance(args) -> int:
    out = Path(args.out or "out/conformance")
    posit = conformance.posit_sweep()
    bth = conformance.booth_sweep()
    files = {
        "posit_sweep.csv": reports.csv_text(conformance.POSIT_HEADER, posit.rows).encode(),
        "booth_sweep.csv": reports.csv_text(conformance.BOOTH_HEADER, bth.rows).encode(),
    }
    reports.write_outputs(out, files)
    failures = posit.failures + bth.failures
    print(f"posit multiply: {len(posit.rows)} pairs, {len(posit.failures)} mismatches")
    print(f"booth recombination: {len(bth.rows)} operands, {len(bth.failures)} mismatches")
    if failures:
        for line in failures[:10]:
            print(line, file=sys.stderr)
        return EXIT_CONFORMANCE
    return EXIT_OK


def cmd_audit(args) -> int:
    if not 0.0 < args.sample_rate <= 1.0:
        raise ConfigError(f"--sample-rate must be in (0, 1], got {args.sample_rate}")
    cfg = _resolve(args)
    if not cfg.features.mips:
        cfg = cfg.override(**{"features.mips": True})
    exp = reports.run_experiment(cfg)
    audit = reports.audit_experiment(exp, args.sample_rate)
    reports.write_outputs(cfg.out_dir, {"audit.json": reports.dumps_report(audit).encode()})
    print(f"audited {audit['sample_size']} of {audit['population']} decisions, agreement {audit['overall_agreement']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dspe", description="DSPE datapath simulator and cost model")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", metavar="PATH", help="JSON run config (or a report to re-run)")
        sp.add_argument("--seed", type=int, metavar="N", help="override the config seed")
        sp.add_argument("--out", metavar="DIR", help="output directory")

    sp = sub.add_parser("run", help="baseline and features-on run with metrics")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="cartesian sweep over config parameters")
    common(sp)
    sp.add_argument("--grid", metavar="PATH", required=True, help='JSON {"dotted.path": [values, ...]}')
    sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("conformance", help="exhaustive posit and Booth exactness sweeps")
    sp.add_argument("--out", metavar="DIR", help="where the CSV dumps go")
    sp.set_defaults(func=cmd_conformance)

    sp = sub.add_parser("audit", help="replay MIPS decisions against full root hashes")
    common(sp)
    sp.add_argument("--sample-rate", type=float, default=1.0, metavar="X", help="fraction audited, in (0, 1]")
    sp.set_defaults(func=cmd_audit)
    return p


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("DSPE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, TensorFormatError, OSError) as exc:
        print(f"dspe: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
