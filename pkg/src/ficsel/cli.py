"""Command-line entry point.

    ficsel --config run.json [--data data.csv] [--seed N] [--reps N]
           [--out report.json] [--threads N]

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .commands import run
from .config import parse_config, validate
from .errors import NumericalError, ValidationError

log = logging.getLogger("ficsel")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ficsel", description="Focused subset selection and model averaging.")
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--data", help="CSV data file (overrides data_path in the config)")
    ap.add_argument("--seed", type=int, help="64-bit seed")
    ap.add_argument("--reps", type=int, help="Monte Carlo replicates")
    ap.add_argument("--out", help="write the JSON report here instead of stdout")
    ap.add_argument("--threads", type=int, help="worker threads for Monte Carlo blocks")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
        overrides = {k: v for k, v in (("data_path", args.data), ("seed", args.seed), ("reps", args.reps),
                                        ("out_path", args.out), ("threads", args.threads)) if v is not None}
        cfg = validate(replace(cfg, **overrides))
        log.info("running %s (seed=%d, reps=%d, threads=%d)", cfg.command, cfg.seed, cfg.reps, cfg.threads)
        report = run(cfg)
        text = report.to_json()
    except (ValidationError, FileNotFoundError) as e:
        print(f"ficsel: error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, ArithmeticError) as e:
        print(f"ficsel: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    if cfg.out_path:
        with open(cfg.out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    for w in report.warnings:
        log.warning(w)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
