"""Command-line frontend for ctwarp."""


class UsageError(Exception):
    """Bad command-line arguments."""
