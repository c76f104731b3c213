import os
import sys
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))
import argparse
from typing import List, Optional

from filelock import Timeout
from pydantic import ValidationError

from config.settings import get_settings
from config.logging_config import setup_logger
from src import __version__
from app.commands.generate import add_generate_parser
from app.commands.train import add_train_parser
from app.commands.evaluate import add_evaluate_parsers

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_INTERNAL_ERROR = 2

USER_ERRORS = (ValueError, ValidationError, FileNotFoundError, IndexError, KeyError, Timeout)


class CliArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with the user-error code instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> CliArgumentParser:
    parser = CliArgumentParser(prog="dicon", description="Concept learning through disentangled representations")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    #Include commands
    add_generate_parser(subparsers)
    add_train_parser(subparsers)
    add_evaluate_parsers(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USER_ERROR

    logger = setup_logger("CLI", get_settings().log.subdirectories["cli"])
    logger.info(f"Running '{args.command}' with {vars(args)}")
    try:
        return args.handler(args)
    except USER_ERRORS as e:
        logger.error(f"'{args.command}' failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER_ERROR
    except Exception as e:
        logger.exception(f"'{args.command}' crashed: {e}")
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
