"""Command-line entry points: run, simulate, report.

Exit codes: 0 success, 1 input/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .errors import InputError, VolrouteError
from .pipeline import EXIT_INPUT, EXIT_OK, EXIT_RUNTIME, report_from_dir, run_pipeline, simulate_to_dir

log = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="volroute",
        description="Walk-forward volatility forecasting with risk-sensitive specialist routing",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the walk-forward pipeline over configured assets")
    run_p.add_argument("--config", required=True, help="flat key=value config file")
    run_p.add_argument("--assets", help="comma-separated subset of configured assets")
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--seed", type=int, help="override config seed")

    sim_p = sub.add_parser("simulate", help="generate a synthetic multi-asset market")
    sim_p.add_argument("--config", help="optional config file for sim.* overrides")
    sim_p.add_argument("--seed", type=int, help="override config seed")
    sim_p.add_argument("--days", type=int, help="override sim.days")
    sim_p.add_argument("--out", required=True, help="output directory")

    rep_p = sub.add_parser("report", help="re-aggregate report tables from record files")
    rep_p.add_argument("--in", dest="indir", required=True, help="record directory from a run")
    rep_p.add_argument("--config", help="config file (defaults to the run's config echo)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "run":
            overrides = {}
            if args.seed is not None:
                overrides["seed"] = str(args.seed)
            cfg = load_config(args.config, overrides)
            assets = [a.strip() for a in args.assets.split(",")] if args.assets else None
            code, _ = run_pipeline(cfg, args.out, assets)
            return code
        if args.command == "simulate":
            overrides = {}
            if args.seed is not None:
                overrides["seed"] = str(args.seed)
            if args.days is not None:
                overrides["sim.days"] = str(args.days)
            cfg = load_config(args.config, overrides)
            assets = simulate_to_dir(cfg, args.out)
            log.info("wrote synthetic panel for %s to %s", ",".join(assets), args.out)
            return EXIT_OK
        if args.command == "report":
            report_from_dir(args.indir, args.config)
            return EXIT_OK
    except InputError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except VolrouteError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.error("unexpected failure: %s", exc)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
