"""Utilities for ctwarp: console and log output, progress, parameter files and I/O."""

from .console_utils import (
    section_header, success_message, error_message,
    warning_message, info_message, progress_message,
    summary_statistics, initialize_log_file, close_log_file
)
from .progress_utils import ConsoleProgress, NullProgress
