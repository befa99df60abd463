"""Command line entry point: ``kpzlab <command> --config FILE [--check] [--seed S] [--out DIR]``.

Exit codes: 0 success, 1 internal error, 2 blow-up, 3 rejected config,
4 a ``--check`` acceptance test failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time

from .dynamics import ConfigError
from .experiments import (
    COMMANDS,
    EXIT_BLOWUP,
    EXIT_CHECK,
    EXIT_CONFIG,
    EXIT_INTERNAL,
    EXIT_OK,
    RUNNERS,
    load_config,
    write_outputs,
)

log = logging.getLogger("kpzlab")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kpzlab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON configuration file")
    p.add_argument("--check", action="store_true",
                   help="exit nonzero if any acceptance test in the report fails")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default="kpzlab_out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("seed must be nonnegative")
        cfg = load_config(args.config, args.command, args.seed)
        started = time.time()
        t0 = time.perf_counter()
        report = RUNNERS[args.command](cfg)
        elapsed = time.perf_counter() - t0
        paths = write_outputs(report, args.out, started, elapsed)
    except ConfigError as e:
        print(f"kpzlab: config rejected: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001
        log.exception("internal error")
        print(f"kpzlab: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL

    summary = {"command": args.command, "passed": report["passed"],
               "checks": report["checks"], "files": [str(p) for p in paths]}
    if args.command == "constants":
        r = report["results"]
        summary.update({k: r[k] for k in ("c", "c_eps_continuum", "c_eps_lattice",
                                          "vertex_table", "zero_chaos_table", "cancellation")})
    print(json.dumps(summary, indent=2, default=str))
    if report["blown_up"]:
        print("kpzlab: blow-up detected", file=sys.stderr)
        return EXIT_BLOWUP
    if args.check and not report["passed"]:
        failed = [k for k, v in report["checks"].items() if not v]
        print(f"kpzlab: acceptance check failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
