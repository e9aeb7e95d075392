"""Command line interface.

``emstad run CONFIG`` executes one experiment config; ``emstad presets``
lists the bundled presets (optionally writing them out as editable config
files). Exit codes: 0 success, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import ConfigError, default_workers, list_presets, run_experiment
from .presets import preset_config


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emstad",
        description="Monte Carlo experiments for the EM-based multi-target radar detector",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment config")
    run.add_argument("config", help="path to a JSON config file")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument(
        "--workers",
        type=int,
        default=None,
        help="worker processes (default: EMSTAD_WORKERS or 1)",
    )
    run.add_argument(
        "--fast", action="store_true", help="divide trial budgets by 10 (CI tier)"
    )
    run.add_argument(
        "--recalibrate",
        action="store_true",
        help="ignore the threshold cache and recalibrate",
    )

    presets = sub.add_parser("presets", help="list bundled presets")
    presets.add_argument(
        "--write-to",
        default=None,
        metavar="DIR",
        help="also write each preset as an editable JSON config file",
    )
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "presets":
            for name, description in list_presets():
                print(f"{name:28s} {description}")
            if args.write_to:
                target = Path(args.write_to)
                target.mkdir(parents=True, exist_ok=True)
                for name, _ in list_presets():
                    with open(target / f"{name}.json", "w", encoding="utf-8") as fh:
                        json.dump(preset_config(name), fh, indent=2, sort_keys=True)
                print(f"wrote {len(list_presets())} configs to {target}")
            return 0

        out = run_experiment(
            args.config,
            out_dir=args.out,
            workers=args.workers if args.workers is not None else default_workers(),
            fast=args.fast,
            recalibrate=args.recalibrate,
        )
        print(f"artifacts written to {out}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
