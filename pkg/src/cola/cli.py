"""``cola`` command-line entry point.

Exit codes: 0 success, 2 config or schema error, 3 backend failure, 4 partial run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from pydantic import ValidationError

from cola import __version__
from cola.config import config_schema, load_config
from cola.executors import ConnectionFailed
from cola.harness import (
    HarnessError,
    analyze_run,
    bruteforce_run,
    combine_reports,
    generate_dataset,
    run_experiment,
)

log = logging.getLogger("cola")

EXIT_OK, EXIT_CONFIG, EXIT_BACKEND, EXIT_PARTIAL = 0, 2, 3, 4

# flag dest -> dotted config key
_OVERRIDES = {
    "seed": "seed",
    "out": "out",
    "backend": "backend",
    "server": "server",
    "dataset": "dataset",
    "dataset_name": "dataset_name",
    "workers": "workers",
    "sample_size": "sample_size",
    "simulations": "search.simulations",
    "modes": "modes",
}


def _config_flags(p: argparse.ArgumentParser, *, count: bool = False) -> None:
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--backend", choices=("synth", "toy", "external"))
    p.add_argument("--server", help="evaluator command line or host:port")
    p.add_argument("--dataset", help="dataset JSONL")
    p.add_argument("--dataset-name", help="label used for report columns")
    p.add_argument("--mode", dest="modes", action="append",
                   choices=("joint", "skip", "recur", "original"),
                   help="repeatable; defaults to the config's modes")
    p.add_argument("--workers", type=int)
    p.add_argument("--sample-size", type=int)
    p.add_argument("--simulations", type=int)
    if count:
        p.add_argument("--count", type=int, help="instances to generate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cola", description="Layer skip/repeat path search.")
    parser.add_argument("--version", action="version", version=f"cola {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _config_flags(sub.add_parser("generate", help="write a synthetic or toy dataset"), count=True)
    _config_flags(sub.add_parser("search", help="run path search over a dataset"))
    _config_flags(sub.add_parser("bruteforce", help="exhaustive optimum per instance"))
    p = sub.add_parser("analyze", help="corpus statistics for one run directory")
    p.add_argument("run_dir")
    p = sub.add_parser("report", help="merge several analyzed runs")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", required=True)
    sub.add_parser("schema", help="print the config JSON schema")
    return parser


def _load(args: argparse.Namespace):
    overrides = {key: getattr(args, dest, None) for dest, key in _OVERRIDES.items()}
    config = load_config(args.config, overrides)
    if getattr(args, "count", None) is not None:
        config = load_config(args.config, {**overrides, f"{config.backend}.count": args.count})
    return config


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "schema":
        print(json.dumps(config_schema(), indent=2, sort_keys=True))
        return EXIT_OK
    if args.command == "analyze":
        report, out = analyze_run(args.run_dir)
        for problem in report["errors"]:
            print(f"excluded {problem['file']}: {problem['error']}", file=sys.stderr)
        print(f"report written to {out} ({report['excluded']} excluded)")
        return EXIT_OK
    if args.command == "report":
        print(f"merged report written to {combine_reports(args.run_dirs, args.out)}")
        return EXIT_OK

    config = _load(args)
    if args.command == "generate":
        print(generate_dataset(config))
        return EXIT_OK
    if args.command == "search":
        summary = run_experiment(config)
        print(f"{summary.completed} results, {summary.failed_instances} failed instances, "
              f"{summary.evaluator_failures} failed evaluations; manifest {summary.manifest_path}")
        return summary.exit_code
    if args.command == "bruteforce":
        for mode, path in bruteforce_run(config).items():
            print(f"{mode}: {path}")
        return EXIT_OK
    raise AssertionError(args.command)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (ValidationError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConnectionFailed as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except HarnessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if exc.filename else EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
