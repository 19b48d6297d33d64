"""``lpsv run <config>`` and ``lpsv validate <config>``.

Exit codes: 0 ok, 1 validation error, 2 runtime error. Errors are printed to
stderr as a single JSON object.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import load_scenario
from .io import PartialOutputError, emit_outputs
from .model import ValidationError
from .runner import preflight, run_scenario
from .smoothing import ResolutionError
from .spde import ConfigurationError

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


def _error(kind: str, exc: BaseException, **extra) -> None:
    payload = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ValidationError):
        payload["invariant"] = exc.invariant
    payload.update(extra)
    print(json.dumps(payload, sort_keys=True, ensure_ascii=False), file=sys.stderr)


def _threads(arg) -> int:
    if arg is not None:
        value = arg
    else:
        env = os.environ.get("LPSV_THREADS")
        if env is None or env == "":
            return 1
        try:
            value = int(env)
        except ValueError:
            raise ValidationError("LPSV_THREADS is a positive integer", f"got {env!r}")
    if value < 1:
        raise ValidationError("threads ≥ 1", f"got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lpsv", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario and write artifacts")
    run.add_argument("config")
    run.add_argument("--out", default=None, help="output directory (default: config output.dir "
                                                 "or ./lpsv_out)")
    run.add_argument("--threads", type=int, default=None,
                     help="worker threads (fallback: LPSV_THREADS, then 1)")
    run.add_argument("--seed-override", type=int, default=None, dest="seed_override")
    val = sub.add_parser("validate", help="parse and check a scenario without running it")
    val.add_argument("config")
    return p


_CONFIG_ERRORS = (ValidationError, ConfigurationError, ResolutionError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scenario = load_scenario(args.config)
        if args.command == "validate":
            info = preflight(scenario)
            print(json.dumps({"valid": True, **info}, sort_keys=True))
            return EXIT_OK
        threads = _threads(args.threads)
        if args.seed_override is not None:
            if args.seed_override < 0:
                raise ValidationError("seed ≥ 0", f"got {args.seed_override}")
            scenario = scenario.with_seed(args.seed_override)
        preflight(scenario)
    except FileNotFoundError as exc:
        _error("validation", exc)
        return EXIT_VALIDATION
    except _CONFIG_ERRORS as exc:
        _error("validation", exc)
        return EXIT_VALIDATION

    out = Path(args.out or scenario.output or "lpsv_out")
    try:
        results = run_scenario(scenario, threads=threads)
        results.manifest["seed_override"] = args.seed_override
        results.manifest["config_path"] = str(args.config)
        files = emit_outputs(results, out)
    except _CONFIG_ERRORS as exc:
        _error("validation", exc)
        return EXIT_VALIDATION
    except PartialOutputError as exc:
        _error("runtime", exc, completed=exc.completed)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - reported as machine-readable JSON
        _error("runtime", exc)
        return EXIT_RUNTIME
    print(json.dumps({"out": str(out), "files": files}, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
