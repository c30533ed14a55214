"""Command-line entry point.

    openmarket simulate CONFIG   write simulated price paths
    openmarket run CONFIG        run an experiment, write CSVs and a report
    openmarket report RUN_DIR    render SVG figures from a finished run
    openmarket selftest          quick invariant suites on built-in fixtures

Exit codes: 0 success, 1 a check failed, 2 invalid config or missing
artifacts, 3 runtime failure during a simulation or portfolio computation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import BlowThroughError, ConfigError, OpenMarketError, SimulationError

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def _err(msg: str) -> None:
    print(f"openmarket: {msg}", file=sys.stderr)


def cmd_simulate(args) -> int:
    from .config import load_config
    from .market import simulate, write_paths
    from .ranks import rank_path, write_ranked, write_weights

    cfg = load_config(args.config)
    out = Path(cfg.output) / "paths"
    out.mkdir(parents=True, exist_ok=True)
    count = max(1, min(cfg.save_paths, cfg.paths))
    for i in range(count):
        path = simulate(cfg.model, cfg.grid, cfg.seed, i)
        write_paths(path, out / f"path_{i:04d}.csv")
        rv, tv = rank_path(path, cfg.n)
        write_ranked(path.t, rv, out / f"ranked_{i:04d}.csv")
        write_weights(path.t, tv.mu_tilde, out / f"mu_tilde_{i:04d}.csv")
    print(f"wrote {count} path(s) to {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    from .config import load_config
    from .experiments import run_experiment

    cfg = load_config(args.config)
    with np.errstate(over="raise", invalid="raise", divide="ignore"):
        report = run_experiment(cfg)
    print(report.to_text(), end="")
    return EXIT_OK if report.ok else EXIT_FAILED


def cmd_report(args) -> int:
    from .artifacts import RunReport
    from .plotting import FIGURES, expected_files, render

    run = Path(args.run_dir)
    rj = run / "report.json"
    if not rj.exists():
        listing = "; ".join(f"{k}: {', '.join(expected_files(k))}" for k in FIGURES)
        _err(f"{run}: no report.json. Expected files per experiment kind: {listing}")
        return EXIT_CONFIG
    try:
        report = RunReport.from_json(rj.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, TypeError) as exc:
        _err(f"{rj}: unreadable report ({exc})")
        return EXIT_CONFIG
    missing = [f for f in expected_files(report.kind) if not (run / f).exists()]
    if missing:
        _err(f"{run}: missing artifacts {', '.join(missing)}")
        return EXIT_CONFIG
    written = render(run, report.kind)
    print(report.to_text(), end="")
    for f in written:
        print(f"figure: {run / f}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return EXIT_OK if run_selftest() else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="openmarket", description="Open-market experiments: top-n of N stocks.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="simulate and save price paths")
    s.add_argument("config")
    s.set_defaults(fn=cmd_simulate)
    s = sub.add_parser("run", help="run an experiment")
    s.add_argument("config")
    s.set_defaults(fn=cmd_run)
    s = sub.add_parser("report", help="render figures for a finished run")
    s.add_argument("run_dir")
    s.set_defaults(fn=cmd_report)
    s = sub.add_parser("selftest", help="run quick invariant suites")
    s.set_defaults(fn=cmd_selftest)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        _err(f"invalid config: {exc}")
        return EXIT_CONFIG
    except (BlowThroughError, SimulationError) as exc:
        step = f" (step {exc.step})" if exc.step is not None else ""
        _err(f"runtime failure{step}: {exc}")
        return EXIT_RUNTIME
    except FloatingPointError as exc:
        _err(f"runtime failure: non-finite arithmetic ({exc})")
        return EXIT_RUNTIME
    except OpenMarketError as exc:
        _err(f"runtime failure: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
