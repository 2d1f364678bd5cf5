"""Entry point for the ctwarp command line."""

import sys

from .cli.main_cli import cli_main


def main():
    """Run the ctwarp command line."""
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
