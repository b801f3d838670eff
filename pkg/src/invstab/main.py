"""Main entry point for the invstab command line."""

import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import Optional

from .config import get_config
from .errors import ConfigError
from .observability import logger
from .runner import EXIT_CONFIG, RunOptions, batch_exit_code, run_scenarios
from .scenario import parse_batch, with_pre_roll


def run_file(
    path: Path,
    out_dir: Optional[Path] = None,
    pre_roll: Optional[float] = None,
    seedless: bool = False,
    guess: Optional[Path] = None,
) -> int:
    """
    Parse a scenario file and run every scenario it lists.

    Args:
        path: Scenario document
        out_dir: Output root (defaults to INVSTAB_OUT)
        pre_roll: Override for the simulated time before the first event
        seedless: Leave wall-clock fields out of the manifest
        guess: Equilibrium CSV row used as the initial guess

    Returns:
        Process exit code
    """
    config = get_config()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read scenario file {path}: {e}") from None

    scenarios = parse_batch(text, config)
    if pre_roll is not None:
        scenarios = [with_pre_roll(s, pre_roll) for s in scenarios]

    options = RunOptions(
        out_dir=Path(out_dir or config.out_dir),
        seedless=seedless,
        guess=guess,
    )
    outcomes = asyncio.run(run_scenarios(scenarios, options, config))

    for outcome in outcomes:
        if outcome.success:
            print(f"✅ {outcome.scenario}: {len(outcome.artifacts)} files in {outcome.out_dir}")
        else:
            print(f"❌ {outcome.scenario}: {outcome.error}", file=sys.stderr)
    return batch_exit_code(outcomes)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="invstab",
        description="Small-signal and time-domain stability analysis of grid-tied inverter controls",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser("run", help="Run a scenario file")
    run.add_argument("scenario", type=Path, help="Scenario document")
    run.add_argument(
        "--out",
        type=Path,
        default=None,
        help="Output directory (default: INVSTAB_OUT or ./out)"
    )
    run.add_argument(
        "--pre-roll",
        type=float,
        default=None,
        help="Simulated seconds before the first event"
    )
    run.add_argument(
        "--seedless",
        action="store_true",
        help="Omit run id, timestamp and wall time from the manifest"
    )
    run.add_argument(
        "--guess",
        type=Path,
        default=None,
        help="Equilibrium CSV whose row seeds the Newton solve"
    )
    run.add_argument(
        "--debug",
        action="store_true",
        help="Enable debug logging"
    )
    return parser


def cli(argv: Optional[list[str]] = None):
    """CLI entry point."""
    args = build_parser().parse_args(argv)

    try:
        config = get_config()
        logging.getLogger("invstab").setLevel(logging.DEBUG if args.debug else config.log_level)
        code = run_file(
            args.scenario,
            out_dir=args.out,
            pre_roll=args.pre_roll,
            seedless=args.seedless,
            guess=args.guess,
        )
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        print(f"❌ {e}", file=sys.stderr)
        code = EXIT_CONFIG

    sys.exit(code)


if __name__ == "__main__":
    cli()
