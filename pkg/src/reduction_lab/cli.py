"""Command-line runner.

    reduction-lab run CONFIG.json [--validate] [--seed N] [--out PREFIX]
                                  [--format csv|json] [--threads N]

Writes ``PREFIX.csv`` (or ``.json``) and ``PREFIX.manifest.json``.  Exit
codes: 0 success, 2 usage/config error, 3 runtime invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from datetime import datetime, timezone

from . import __version__
from .config import ConfigError, load, parse, validate
from .decoherence import InvariantViolation
from .experiments import Table, run_experiment
from .reduction import resolve_threads

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("reduction_lab")


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return v


def render(table: Table, fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(table.columns)
        for row in table.rows:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()
    records = [dict(zip(table.columns, row)) for row in table.rows]
    return json.dumps({"columns": table.columns, "rows": records}, indent=1) + "\n"


def write_atomic(path: str, text: str) -> None:
    """Write to a temp file in the target directory, then rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def manifest(cfg, table: Table, threads: int) -> dict:
    return {
        "tool": "reduction_lab",
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "summary": table.summary,
        "runtime": {
            "created": datetime.now(timezone.utc).isoformat(),
            "threads": threads,
        },
    }


def _error(kind: str, **payload) -> str:
    return json.dumps({"status": "error", "kind": kind, **payload}, default=str)


def _read_config(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def cmd_run(args) -> int:
    try:
        doc = _read_config(args.config)
    except (OSError, json.JSONDecodeError) as exc:
        print(_error("config", findings=[{"field": "", "message": str(exc)}]))
        return EXIT_USAGE
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.out is not None:
        doc["output"] = args.out
    if args.format is not None:
        doc["format"] = args.format

    if args.validate:
        cfg, findings = parse(doc)
        if cfg is not None:
            findings = validate(cfg)
        print(json.dumps({"status": "ok" if not findings else "invalid", "findings": findings}))
        return EXIT_OK if not findings else EXIT_USAGE

    try:
        cfg = load(doc)
        threads = resolve_threads(args.threads)
    except ConfigError as exc:
        print(_error("config", findings=exc.findings))
        return EXIT_USAGE
    except ValueError as exc:
        print(_error("config", findings=[{"field": "threads", "message": str(exc)}]))
        return EXIT_USAGE

    try:
        table = run_experiment(cfg, threads)
    except InvariantViolation as exc:
        print(_error("invariant", invariant=exc.invariant, message=str(exc)))
        return EXIT_RUNTIME

    ext = "csv" if cfg.format == "csv" else "json"
    results_path = f"{cfg.output}.{ext}"
    manifest_path = f"{cfg.output}.manifest.json"
    write_atomic(results_path, render(table, cfg.format))
    write_atomic(manifest_path, json.dumps(manifest(cfg, table, threads), indent=1, default=float) + "\n")
    log.info("wrote %s and %s", results_path, manifest_path)
    print(json.dumps({"status": "ok", "results": results_path, "manifest": manifest_path,
                      "summary": table.summary}, default=float))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reduction-lab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment from a JSON config")
    run.add_argument("config")
    run.add_argument("--validate", action="store_true", help="dry run: report findings only")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output path prefix")
    run.add_argument("--format", choices=("csv", "json"))
    run.add_argument("--threads", type=int, help="worker threads (default: $THREADS or 1)")
    run.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(message)s")
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
