"""Command-line entry point.

Exit codes: 0 success, 1 asserted test failed, 2 usage/validation error,
3 abort-rate breach.  Failures also print one JSON line with the reason on
stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .core import Mode, StatTestResult
from .ensemble import EnsembleAbortError, run_ensemble
from .io import (LogFormatError, cdf_rows, histogram_rows, read_event_log, read_snapshots,
                 write_csv, write_event_log, write_manifest, write_snapshots)
from .verify import SUITES, SuiteError, run_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_ABORT = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, code: int, kind: str, reason: str):
        super().__init__(reason)
        self.code, self.kind, self.reason = code, kind, reason


def _fail(kind: str, reason: str, code: int = EXIT_USAGE):
    raise CliError(code, kind, reason)


def _load(args):
    try:
        config = load_config(args.config)
        changes = {}
        if getattr(args, "mode", None):
            changes["mode"] = args.mode
        if getattr(args, "seed", None) is not None:
            changes["master_seed"] = args.seed
        if getattr(args, "n", None) is not None:
            changes["ensemble_n"] = args.n
        return config.replace(**changes) if changes else config
    except ConfigError as exc:
        _fail("validation", str(exc))
    except (OSError, json.JSONDecodeError) as exc:
        _fail("config", f"cannot read config: {exc}")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        _fail("usage", f"output directory {out} is not writable")
    return out


def cmd_simulate(args) -> int:
    config = _load(args)
    out = _out_dir(args)
    code = EXIT_OK
    try:
        result = run_ensemble(config, workers=args.workers)
    except EnsembleAbortError as exc:
        result, code = exc.result, EXIT_ABORT
    write_manifest(result, out / "manifest.json")
    write_event_log(result, out / "events.jsonl")
    write_snapshots(result, out / "snapshots.csv")
    if code == EXIT_ABORT:
        _fail("abort", f"abort rate {result.abort_fraction:.4f} exceeds 0.01", EXIT_ABORT)
    return code


def _report(results: list[StatTestResult], args) -> str:
    text = "".join(r.report_line() + "\n" for r in results)
    if args.out:
        (_out_dir(args) / "report.txt").write_text(text)
    return text


def cmd_verify(args) -> int:
    if args.suite not in SUITES:
        _fail("usage", f"unknown suite {args.suite!r}")
    config = _load(args)
    try:
        results = run_suite(args.suite, config, workers=args.workers)
    except SuiteError as exc:
        _fail("usage", str(exc))
    except EnsembleAbortError as exc:
        _fail("abort", str(exc), EXIT_ABORT)
    sys.stdout.write(_report(results, args))
    asserted = [r for r in results if r.asserted]
    if args.expect_fail:
        ok = bool(asserted) and not any(r.passed for r in asserted)
    else:
        ok = all(r.passed for r in asserted)
    return EXIT_OK if ok else EXIT_FAIL


def _read_log(path):
    try:
        return read_event_log(path)
    except LogFormatError as exc:
        _fail("log", f"{path}: {exc}")
    except OSError as exc:
        _fail("log", str(exc))


def _functional(records, functional: str, component: int):
    if functional == "centers":
        return np.array([r["X"][component] for r in records if r["k"] == 1])
    by_traj: dict[int, list[float]] = {}
    for r in records:
        by_traj.setdefault(r["traj"], []).append(r["t"])
    gaps = []
    for times in by_traj.values():
        gaps.extend(np.diff([0.0] + sorted(times)).tolist())
    return np.asarray(gaps)


def cmd_compare(args) -> int:
    from .stats import ks_two_sample

    a, b = _read_log(args.log_a), _read_log(args.log_b)
    if not a or not b:
        _fail("usage", "empty event log")
    da, db = len(a[0]["X"]), len(b[0]["X"])
    if da != db or any(len(r["X"]) != da for r in a) or any(len(r["X"]) != db for r in b):
        _fail("usage", f"logs have different d ({da} vs {db})")
    comps = range(da) if args.functional == "centers" else [0]
    results = []
    for c in comps:
        label = f"compare_{args.functional}" + (f"[X{c + 1}]" if args.functional == "centers" else "")
        try:
            results.append(ks_two_sample(_functional(a, args.functional, c),
                                         _functional(b, args.functional, c), label))
        except ValueError as exc:
            _fail("usage", str(exc))
    sys.stdout.write(_report(results, args))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def cmd_propagator_test(args) -> int:
    from .checks import propagator_checks

    results = propagator_checks()
    sys.stdout.write(_report(results, args))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def _plot_values(path: Path, args):
    text = path.read_text()
    if not text.strip():
        _fail("usage", "empty input")
    if text.lstrip().startswith("{"):
        try:
            records = read_event_log(path)
        except LogFormatError as exc:
            _fail("log", f"{path}: {exc}")
        field = args.field or "X"
        if field in ("t", "C"):
            return [r[field] for r in records], None
        if field == "i":
            return [float(r["i"]) for r in records], None
        return [r[field][args.component] for r in records], None
    try:
        snaps = read_snapshots(path)
    except (KeyError, ValueError) as exc:
        _fail("usage", f"{path}: cannot parse snapshot file ({exc})")
    if not snaps:
        _fail("usage", "empty input")
    return [s["q"][args.component] for s in snaps], snaps


def cmd_plot_data(args) -> int:
    values, snaps = _plot_values(Path(args.input), args)
    if not values:
        _fail("usage", "empty input")
    sink = open(args.out, "w") if args.out else sys.stdout
    try:
        if args.kind == "histogram":
            write_csv(histogram_rows(values, args.bins), ("bin_edge_low", "bin_edge_high", "count"),
                      sink)
        elif args.kind == "cdf":
            write_csv(cdf_rows(values), ("x", "F(x)"), sink)
        else:
            if snaps is None:
                _fail("usage", "trajectory plot data needs a snapshot file")
            traj = args.traj if args.traj is not None else snaps[0]["traj"]
            rows = sorted((s["t"], *s["q"]) for s in snaps if s["traj"] == traj)
            d = len(snaps[0]["q"])
            write_csv(rows, ("t",) + tuple(f"q{k + 1}" for k in range(d)), sink)
    finally:
        if sink is not sys.stdout:
            sink.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grwp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=False):
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", required=out_required)
        sp.add_argument("--mode", choices=[m.value for m in Mode])
        sp.add_argument("--seed", type=int)
        sp.add_argument("--n", type=int)
        sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("simulate", help="run an ensemble and write manifest, events, snapshots")
    common(sp, out_required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("verify", help="run verification suites")
    sp.add_argument("suite")
    common(sp)
    sp.add_argument("--expect-fail", action="store_true",
                    help="succeed only if every asserted test fails")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("compare", help="two-sample KS between two event logs")
    sp.add_argument("log_a")
    sp.add_argument("log_b")
    sp.add_argument("--functional", choices=("centers", "intervals"), default="centers")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("propagator-test", help="propagator accuracy and unitarity checks")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_propagator_test)

    sp = sub.add_parser("plot-data", help="CSV for histograms, CDFs or trajectories")
    sp.add_argument("input")
    sp.add_argument("--kind", choices=("histogram", "cdf", "trajectory"), default="histogram")
    sp.add_argument("--bins", type=int, default=64)
    sp.add_argument("--field", choices=("X", "Z", "Q", "t", "C", "i"))
    sp.add_argument("--component", type=int, default=0)
    sp.add_argument("--traj", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None) -> int:
    level = os.environ.get("GRWP_LOG_LEVEL", "warn").upper()
    logging.basicConfig(level={"WARN": "WARNING"}.get(level, level), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except CliError as exc:
        sys.stderr.write(json.dumps({"error": exc.kind, "reason": exc.reason}) + "\n")
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
