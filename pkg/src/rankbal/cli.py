"""Command-line entry point: ``rankbal {run,derive,validate}``.

Exit statuses: 0 success, 1 runtime failure, 2 config parse error,
3 validation error (the message names the offending field).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigParseError, load
from .model import ValidationError, diffusion_params

EXIT_RUNTIME = 1
EXIT_PARSE = 2
EXIT_VALIDATION = 3


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rankbal", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (
        ("run", "run the experiment named in the config"),
        ("derive", "print the diffusion data implied by the queue model"),
        ("validate", "check a config and print it with all defaults filled in"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("config_path", nargs="?", help="config file (YAML or JSON, or a manifest)")
        p.add_argument("--config", dest="config_flag", help="config file (alternative to the positional)")
        p.add_argument("--seed", type=int, help="master seed, overrides the config")
        if name == "run":
            p.add_argument("--out", help="output directory (default: config 'output' or ./rankbal-out)")
            p.add_argument("--jobs", type=int, default=1, help="worker processes for replications")
    return ap


def _print_entries(report: dict):
    for e in report["entries"]:
        tag = ("PASS" if e["pass"] else "FAIL") if e.get("gating", True) else "info"
        thr = "" if e["threshold"] is None else f" (threshold {e['threshold']})"
        print(f"{tag} {e['statistic']}: {e['value']}{thr}")
    print("overall:", "PASS" if report["pass"] else "FAIL")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    path = args.config_flag or args.config_path
    if path is None:
        print("error: a config file is required", file=sys.stderr)
        return EXIT_PARSE
    if args.config_flag and args.config_path and args.config_flag != args.config_path:
        print("error: give the config once", file=sys.stderr)
        return EXIT_PARSE
    try:
        cfg = load(path, seed_override=args.seed)
        if args.command == "derive" and cfg.model is None:
            raise ValidationError("model", "derive needs a model section")
    except ConfigParseError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"validation error: seed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    try:
        if args.command == "validate":
            print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        elif args.command == "derive":
            dp = diffusion_params(cfg.model_params(1))
            doc = {k: v for k, v in dp.to_dict().items() if k != "x0"}
            print(json.dumps({k: [float(x) for x in v] for k, v in doc.items()}, indent=2, sort_keys=True))
        else:
            from .experiments import run

            out = Path(args.out or cfg.output or "rankbal-out")
            report = run(cfg, out, args.jobs)
            _print_entries(report)
            print(f"artifacts in {out}")
    except Exception as exc:  # noqa: BLE001 - any failure past validation is a runtime error
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
