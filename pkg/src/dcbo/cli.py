"""``dcbo`` command-line entry point.

Exit status: 0 success, 1 a check failed (replay mismatch), 2 invalid
configuration or usage, 3 any other module error.  On errors with an
output directory, ``error.json`` describes the failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from .config import FIELDS, TASKS, parse_config
from .exceptions import CBOError, ConfigError, UsageError
from .tasks import run_task, verify_replay, write_json


def _add_field_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("config overrides (win over --config values)")
    for key in FIELDS:
        if key == "task":
            continue
        names = {f"--{key}", f"--{key.replace('_', '-')}"}
        group.add_argument(*sorted(names), dest=f"field_{key}", metavar="VALUE", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcbo",
                                     description="Discrete consensus-based optimization experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for task in TASKS:
        p = sub.add_parser(task, help=f"run the {task} task")
        p.add_argument("--config", help="flat key = value config file")
        _add_field_flags(p)
        if task == "run":
            p.add_argument("--verify-replay", action="store_true",
                           help="record noise and check the pairwise-difference product identity")
    p = sub.add_parser("verify-replay", help="check a recorded run directory")
    p.add_argument("--out", required=True, help="directory written by `dcbo run`")
    return parser


def _error_payload(exc: Exception) -> dict:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("field", "line", "particle", "replica", "step"):
        value = getattr(exc, attr, None)
        if value is not None:
            payload[attr] = value
    return payload


def _report_replay(report: dict) -> int:
    print(f"max_abs_error={report['max_abs_error']!r} tolerance={report['tolerance']!r}")
    return 0 if report["passed"] else 1


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = None
    try:
        if args.command == "verify-replay":
            out_dir = args.out
            return _report_replay(verify_replay(args.out))
        overrides = {key: getattr(args, f"field_{key}") for key in FIELDS if key != "task"}
        overrides = {k: v for k, v in overrides.items() if v is not None}
        overrides["task"] = args.command
        if getattr(args, "verify_replay", False):
            overrides["record_noise"] = "true"
        out_dir = overrides.get("out")
        cfg = parse_config(args.config, overrides)
        out_dir = cfg.out
        for note in cfg.warnings:
            print(f"warning: {note}", file=sys.stderr)
        status = run_task(cfg)
        if status == 0 and getattr(args, "verify_replay", False):
            status = _report_replay(verify_replay(cfg.out))
        return status
    except CBOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if out_dir is not None:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            write_json(Path(out_dir) / "error.json", _error_payload(exc))
        return 2 if isinstance(exc, (ConfigError, UsageError)) else 3


if __name__ == "__main__":
    sys.exit(main())
