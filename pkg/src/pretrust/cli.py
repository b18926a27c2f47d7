"""Command-line entry point: run scenarios, list them, audit snapshots."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from . import audit
from .params import ConfigError
from .scenarios import builtin_config, config_from_json, scenario_names
from .simulator import InvariantViolation, run_scenario

LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "trace": logging.DEBUG}


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pretrust", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write metrics as JSON lines")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="scenario config JSON file")
    src.add_argument("--scenario", help="built-in scenario name")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--out", default="-", help="metrics file, '-' for stdout (default)")
    run.add_argument("--snapshot", help="also write the final state for 'audit'")
    run.add_argument("--figures", metavar="DIR", help="render latency and roster figures into DIR")

    sub.add_parser("scenarios", help="list built-in scenarios")

    aud = sub.add_parser("audit", help="re-check conservation and chain integrity of a snapshot")
    aud.add_argument("--state", required=True, help="snapshot written by 'run --snapshot'")
    return p


def _load_config(args):
    if args.scenario is not None:
        cfg = builtin_config(args.scenario)
    else:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except OSError as e:
            raise UsageError(f"cannot read config: {e}") from e
        except json.JSONDecodeError as e:
            raise UsageError(f"config is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise UsageError("config must be a JSON object")
        cfg = config_from_json(data)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _write(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        with open(path, "w") as fh:
            fh.write(text)


def cmd_run(args) -> int:
    cfg = _load_config(args)
    try:
        result = run_scenario(cfg)
    except InvariantViolation as e:
        print(f"invariant violation: {e.invariant} at event {e.event_index}", file=sys.stderr)
        return 1
    _write(args.out, result.lines())
    if args.snapshot:
        with open(args.snapshot, "w") as fh:
            json.dump(audit.export_snapshot(result.world), fh, sort_keys=True, indent=1)
    if args.figures:
        from .report import render

        for path in render(result.records, args.figures):
            logging.getLogger(__name__).info("wrote %s", path)
    return 0


def cmd_audit(args) -> int:
    try:
        snap = audit.load_snapshot(args.state)
    except OSError as e:
        raise UsageError(f"cannot read snapshot: {e}") from e
    except json.JSONDecodeError as e:
        print(f"FAIL snapshot_format: {e}")
        return 1
    violations = audit.audit_snapshot(snap)
    for v in violations:
        print(f"FAIL {v}")
    if violations:
        return 1
    print("PASS")
    return 0


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("PRETRUST_LOG", "quiet")
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        if args.command == "scenarios":
            print("\n".join(scenario_names()))
            return 0
        if args.command == "audit":
            return cmd_audit(args)
        return cmd_run(args)
    except (UsageError, ConfigError) as e:
        print(f"pretrust: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
