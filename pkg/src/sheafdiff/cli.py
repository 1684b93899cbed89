"""``sheafdiff`` command line: generate, train, verify, inspect.

Exit codes: 0 success, 1 verification failure, 2 config error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def _parser():
    p = argparse.ArgumentParser(prog="sheafdiff", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("generate", help="write one dataset per sweep point and seed")
    g.add_argument("--config", required=True)
    t = sub.add_parser("train", help="train every model on every generated dataset")
    t.add_argument("--config", required=True)
    t.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    v = sub.add_parser("verify", help="run the property suites")
    v.add_argument("--suite", action="append", help="suite name; repeat to select several (default all)")
    v.add_argument("--scale", choices=("quick", "full"), default="full")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--report", help="also write the JSON report to this path")
    i = sub.add_parser("inspect", help="print statistics of a .sheafds file")
    i.add_argument("path")
    return p


def _err(msg):
    print(f"sheafdiff: {msg}", file=sys.stderr)


def cmd_generate(args) -> int:
    from .bench import generate, load_config

    cfg = load_config(args.config)
    manifest = generate(cfg)
    print(json.dumps({"output_dir": str(cfg.output_dir), "datasets": len(manifest["datasets"])}))
    return EXIT_OK


def cmd_train(args) -> int:
    from .bench import load_config, train_sweep

    if args.jobs < 1:
        raise ValueError("--jobs must be at least 1")
    cfg = load_config(args.config)
    rows, summary = train_sweep(cfg, args.jobs)
    failed = sum(r["status"] != "ok" for r in rows)
    print(json.dumps({"output_dir": str(cfg.output_dir), "rows": len(rows), "failed": failed,
                      "summary_rows": len(summary)}))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import SUITES, run_all

    names = args.suite or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ValueError(f"unknown suite(s) {unknown}; choose from {sorted(SUITES)}")
    report = run_all(names, args.scale, args.seed)
    text = report.to_json(indent=2)
    print(text)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text)
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_inspect(args) -> int:
    from .bench import inspect_dataset

    print(json.dumps(inspect_dataset(args.path), indent=2))
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "verify": cmd_verify, "inspect": cmd_inspect}


def main(argv=None) -> int:
    from .bench import ConfigError
    from .synth import DatasetFormatError

    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    except (OSError, DatasetFormatError) as exc:
        _err(f"I/O error: {exc}")
        return EXIT_IO
    except ValueError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
