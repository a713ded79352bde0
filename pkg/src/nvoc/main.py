"""
Main entry point for the NV optical control simulator.

This module parses the command line and dispatches each subcommand to `nvoc.cli`.
"""

import argparse
import sys
from pathlib import Path
from typing import NoReturn

from nvoc.cli import constants_lines, load_config, run, write_error
from nvoc.config import TOOL_VERSION, load_constants, settings
from nvoc.errors import ConfigurationError, NVOCError
from nvoc.logger import set_level, setup_logging
from nvoc.schemas import RECIPES

# %%
logger = setup_logging(__name__, settings.log_level)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


# %%
class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors go through `exit_with_error`."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        exit_with_error(message, EXIT_USAGE)


def _add_run_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="JSON configuration file")
    parser.add_argument("--out", required=True, help="Result directory")
    parser.add_argument(
        "--dry-run",
        action="store_true",
        help="Validate the configuration and print the plan without computing",
    )
    parser.add_argument(
        "--workers",
        type=int,
        default=None,
        help=f"Worker processes (default: {settings.workers})",
    )


def parse_arguments(argv: list[str] | None = None) -> argparse.Namespace:
    """Parse command line arguments."""
    parser = _Parser(prog="nvoc", description="NV optical control simulator")
    parser.add_argument(
        "--log-level",
        default=None,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help=f"Logging level (default: {settings.log_level})",
    )
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    helps = {
        "ple": "Photoluminescence excitation scan",
        "pump": "Two-step optical pumping into a ground-state target",
        "rabi-mw": "Microwave Rabi oscillation with A2 and Ex readouts",
        "rabi-2photon": "Two-photon Rabi oscillation against drive power",
        "darkmap": "Double-dark-resonance map",
        "simulate": "Run a pulse-sequence file and export the trajectory",
    }
    for name in RECIPES:
        _add_run_arguments(subparsers.add_parser(name, help=helps[name]))

    constants = subparsers.add_parser("constants", help="Physical-constants table")
    constants.add_argument("action", choices=["show"])
    constants.add_argument("--constants", default=None, help="Constants file to show")
    subparsers.add_parser("version", help="Print tool and constants versions")

    args = parser.parse_args(argv)
    if getattr(args, "workers", None) is not None and args.workers < 1:
        parser.error("--workers must be at least 1")
    return args


# %%
def exit_with_error(message: str, exit_code: int = EXIT_FAILURE) -> NoReturn:
    """
    Print error message and exit the program with the specified exit code.

    Args:
        message: Error message to display.
        exit_code: Exit code to return to the OS.
    """
    logger.error(message)
    print(f"Error: {message}", file=sys.stderr)
    sys.exit(exit_code)


# %%
def main(argv: list[str] | None = None) -> int:
    """
    Main entry point for the application.

    Returns:
        int: Exit code (0 for success, 1 for failed runs, 2 for argument errors).
    """
    args = parse_arguments(argv)
    if args.log_level:
        set_level(args.log_level)

    try:
        if args.command == "version":
            print(f"nvoc {TOOL_VERSION} (constants {load_constants().version})")
            return EXIT_OK
        if args.command == "constants":
            for line in constants_lines(args.constants):
                print(line)
            return EXIT_OK
    except NVOCError as e:
        return exit_with_error(e.message)

    try:
        config = load_config(args.config, args.command)
    except ConfigurationError as e:
        if not args.dry_run:
            write_error(Path(args.out), e)
        return exit_with_error(e.message)

    try:
        status = run(args.command, config, args.out, args.workers, args.dry_run)
    except NVOCError as e:
        return exit_with_error(e.message)
    except KeyboardInterrupt:
        logger.info("Program terminated by user")
        return EXIT_FAILURE
    if status != EXIT_OK:
        print(f"Error: {args.command} failed; see {args.out}/error.json", file=sys.stderr)
    return status


# %%
if __name__ == "__main__":
    sys.exit(main())
