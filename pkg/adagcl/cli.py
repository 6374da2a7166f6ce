"""
Command-line entry point: prepare, train, eval, experiment, export and runs.
"""

import argparse
import logging
from typing import Any, Dict, List, Optional

from adagcl import __version__
from adagcl.exceptions import AdaGCLError, UsageError
from adagcl.models.schemas import TrainConfig, parse_scalar
from adagcl.routes import data_routes, eval_routes, experiment_routes, train_routes

# Configure logging
logger = logging.getLogger(__name__)

EXIT_INTERRUPTED = 130


class CommandParser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting."""

    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        raise UsageError(message)


def build_parser() -> CommandParser:
    parser = CommandParser(prog="adagcl", description="Adaptive graph-contrastive recommendation experiments")
    parser.add_argument("--version", action="version", version=f"adagcl {__version__}")
    parser.add_argument("--log-level", default=None, help="Overrides ADAGCL_LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", parser_class=CommandParser)
    subparsers.required = True
    for routes in (data_routes, train_routes, eval_routes, experiment_routes):
        routes.register(subparsers)
    return parser


def parse_overrides(tokens: List[str]) -> Dict[str, Any]:
    """
    Turn ``--key value`` / ``--key=value`` tokens into TrainConfig overrides.

    Raises:
        UsageError: on a dangling token or a key TrainConfig does not define
    """
    overrides: Dict[str, Any] = {}
    index = 0
    while index < len(tokens):
        token = tokens[index]
        if not token.startswith("--"):
            raise UsageError(f"unexpected argument {token!r}")
        key, _, value = token[2:].partition("=")
        if not value:
            if index + 1 >= len(tokens) or tokens[index + 1].startswith("--"):
                raise UsageError(f"missing value for --{key}")
            index += 1
            value = tokens[index]
        key = key.replace("-", "_")
        if key not in TrainConfig.model_fields:
            raise UsageError(f"unknown option --{key.replace('_', '-')}")
        overrides[key] = parse_scalar(value)
        index += 1
    return overrides


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if extra and not getattr(args, "accepts_overrides", False):
        raise UsageError(f"unrecognized arguments: {' '.join(extra)}")
    args.overrides = parse_overrides(extra)
    return args


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one command and map failures to exit codes.

    Returns:
        0 on success, 1 usage error, 2 data error, 3 numerical failure, 130 when interrupted
    """
    try:
        args = parse_args(argv)
        if args.log_level:
            logging.getLogger().setLevel(args.log_level.upper())
        return args.handler(args)
    except KeyboardInterrupt:
        logger.error("Interrupted")
        return EXIT_INTERRUPTED
    except AdaGCLError as e:
        logger.error(f"{type(e).__name__}: {str(e)}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error: {str(e)}")
        return 1
