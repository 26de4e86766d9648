"""Command-line entry point for the Langevin CLT experiment runner."""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from core.config import parse_config
from core.errors import ConfigError
from core.experiments import EXIT_ERROR, EXIT_OK, EXIT_VALIDATION, run_experiment
from core.registry import Registry, list_registry
from utils.logging_setup import get_logger, setup_logging
from utils.paths import generate_output_dir
from utils.validators import validate_system_requirements


def check_system_requirements(output_dir: Path) -> bool:
    """Check and validate system requirements."""
    logger = get_logger("startup")

    logger.info("Checking system requirements...")
    results = validate_system_requirements(output_dir)

    issues: List[str] = []
    critical_issues: List[str] = []

    for component, result in results.items():
        if not result.is_valid:
            if component in ("numeric_backend", "output_dir"):
                critical_issues.append(result.message)
                critical_issues.extend(result.suggestions)
            else:
                issues.append(result.message)
                issues.extend(result.suggestions)

    if critical_issues:
        logger.error("Critical system requirements not met")
        for issue in critical_issues:
            logger.error(f"  {issue}")
        return False

    if issues:
        logger.warning("Some optional checks failed")
        for issue in issues:
            logger.warning(f"  {issue}")

    # Reruns are byte-identical only on the same platform and BLAS build
    logger.debug("Results are reproducible for identical config, seed and platform")
    logger.info("System requirements check completed")
    return True


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser."""
    parser = argparse.ArgumentParser(
        prog="langevin-clt",
        description="Randomized-midpoint Langevin samplers: CLT, bias and regime experiments"
    )

    parser.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        default="INFO",
        help="Set logging level (default: INFO)"
    )

    parser.add_argument(
        "--log-dir",
        type=Path,
        default=Path("logs"),
        help="Directory for log files (default: logs/)"
    )

    parser.add_argument(
        "--no-log-file",
        action="store_true",
        help="Log to the console only"
    )

    subparsers = parser.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser("run", help="Run the experiment described by a config file")
    run.add_argument("config", type=Path, help="Path to the experiment config")
    run.add_argument("--seed", type=int, default=None, help="Master seed (overrides the config)")
    run.add_argument(
        "--workers",
        type=int,
        default=None,
        help="Replicate worker processes (default: the config value, else available cores)"
    )
    run.add_argument("--out", type=Path, default=None, help="Output directory (overrides the config)")
    run.add_argument("--format", choices=["csv", "json"], default=None, help="Format of the results file")
    run.add_argument(
        "--no-system-check",
        action="store_true",
        help="Skip system requirements check (not recommended)"
    )

    listing = subparsers.add_parser("list", help="List registered potentials, test functions, schedules and samplers")
    listing.add_argument("--json", action="store_true", help="Print the registry as JSON")

    return parser


def run_command(args: argparse.Namespace, registry: Optional[Registry] = None) -> int:
    """Execute the 'run' subcommand."""
    logger = get_logger("main")
    try:
        text = args.config.read_text(encoding="utf-8")
    except OSError as e:
        logger.error(f"Cannot read config {args.config}: {e}")
        return EXIT_VALIDATION

    try:
        cfg = parse_config(text, seed=args.seed, registry=registry)
    except ConfigError as e:
        logger.error(f"Invalid config {args.config}: {e}")
        return EXIT_VALIDATION

    cfg = cfg.with_overrides(workers=args.workers, output_format=args.format)
    if args.out is not None:
        output_dir = args.out
    else:
        output_dir = generate_output_dir(Path(cfg.output_dir), cfg.kind.value, cfg.name, cfg.seed)
    cfg = cfg.with_overrides(output_dir=str(output_dir))

    if not args.no_system_check:
        if not check_system_requirements(Path(output_dir)):
            logger.error("System requirements check failed, exiting")
            return EXIT_ERROR
    else:
        logger.warning("Skipping system requirements check")

    result = run_experiment(cfg, Path(output_dir), registry)
    for path in result.files:
        logger.info(f"Wrote {path}")
    return result.exit_code


def main(argv: Optional[Sequence[str]] = None, registry: Optional[Registry] = None) -> int:
    """Main application entry point."""
    try:
        args = build_parser().parse_args(argv)

        log_level = getattr(logging, args.log_level)
        logger = setup_logging(
            log_dir=None if args.no_log_file else args.log_dir,
            log_level=log_level
        )
        logger.debug(f"Command line arguments: {vars(args)}")

        if args.command == "list":
            print(list_registry(registry, as_json=args.json))
            return EXIT_OK
        return run_command(args, registry)

    except SystemExit as e:
        # argparse exits 0 for --help and 2 for usage errors; 2 is reserved for divergence
        return EXIT_OK if not e.code else EXIT_VALIDATION
    except Exception as e:
        # Fallback error handling
        try:
            logger = get_logger("main")
            logger.critical(f"Fatal error in main: {e}", exc_info=True)
        except Exception:
            print(f"Fatal error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
