"""Command-line frontend: parser, dispatch and exit codes."""

import argparse
import os
import sys

import appdirs

from .. import __version__
from ..core.exceptions import CtwarpError
from ..utils.console_utils import close_log_file, error_message, initialize_log_file
from . import UsageError, _1_register_cmd, _2_tools_cmd, _3_phantom_cmd, _4_ablate_cmd

APP_NAME = "ctwarp"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

COMMAND_MODULES = (_1_register_cmd, _2_tools_cmd, _3_phantom_cmd, _4_ablate_cmd)


class CtwarpArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting on bad arguments."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    parser = CtwarpArgumentParser(
        prog=APP_NAME,
        description="CT-guided deformable registration of cross-tracer PET volumes.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--quiet", action="store_true", help="Suppress console output")
    parser.add_argument(
        "--log-dir", default=None,
        help="Directory for the session log (default: the output directory, else the user data directory)",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True
    for module in COMMAND_MODULES:
        module.add_parsers(subparsers)
    return parser


def _log_dir(args):
    if args.log_dir:
        return args.log_dir
    out = getattr(args, "out", None)
    if out and getattr(args, "out_is_dir", False):
        return out
    return appdirs.user_data_dir(APP_NAME)


def cli_main(argv=None):
    """Run one subcommand; returns 0 on success, 1 on usage errors, 2 on data errors."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        sys.stderr.write(parser.format_usage())
        sys.stderr.write(f"{e}\n")
        return EXIT_USAGE
    except SystemExit as e:
        # --help and --version
        return int(e.code or 0)

    console = None if args.quiet else sys.stdout
    try:
        os.makedirs(_log_dir(args), exist_ok=True)
        initialize_log_file(_log_dir(args))
    except OSError:
        pass

    try:
        args.handler(args, console)
        return EXIT_OK
    except UsageError as e:
        error_message(sys.stderr, str(e))
        return EXIT_USAGE
    except FileNotFoundError as e:
        error_message(sys.stderr, f"File not found: {e.filename or e}")
        return EXIT_DATA
    except OSError as e:
        error_message(sys.stderr, f"I/O error: {e}")
        return EXIT_DATA
    except CtwarpError as e:
        key = getattr(e, "key", None)
        error_message(sys.stderr, f"{type(e).__name__}: {e}" + (f" (key: {key})" if key else ""))
        return EXIT_DATA
    finally:
        close_log_file()
