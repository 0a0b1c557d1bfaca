"""Command line entry point.

Exit codes: 0 when every assertion passes, 1 when any fails, 2 on a
configuration error.
"""
from __future__ import annotations

import argparse
import sys

from .harness import SUITES, ConfigError, load_config, run

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multitime-ft", description="Quantum fluctuation theorem suites.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="execute the suites named in a JSON config")
    p.add_argument("config", help="path to the JSON config")
    p.add_argument("--out", default=None, help="output directory (default: config output.dir or ./out)")
    p.add_argument("--seed", type=int, default=None, help="override every run seed")
    p.add_argument("--suite", choices=SUITES, default=None, help="run only this suite")
    p.add_argument("--assert-tol", type=float, default=None, help="override equality tolerances")
    p.add_argument("--quiet", action="store_true", help="suppress the per-assertion summary")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        report = run(config, args.out, args.seed, args.suite, args.assert_tol)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not args.quiet:
        for run_name, suites in report.results.items():
            for suite_name, res in suites.items():
                status = "PASS" if res.ok else "FAIL"
                print(f"{status} {run_name}/{suite_name} ({res.seconds:.3f}s)")
                if res.error:
                    print(f"    error: {res.error}")
                for a in res.assertions:
                    if not a.ok:
                        print(f"    {a.name}: margin {a.margin:.3e} vs {a.tol:.1e}")
    return EXIT_OK if report.ok else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
