"""Console output utilities for ctwarp."""

import datetime
import os
import sys

from tabulate import tabulate

# Global log file handle
log_file = None


def initialize_log_file(work_dir):
    """Initialize the log file for the current session."""
    global log_file

    close_log_file()
    timestamp = datetime.datetime.now().strftime("%Y%m%d_%H%M%S")
    log_dir = os.path.join(work_dir, "LOG")
    os.makedirs(log_dir, exist_ok=True)

    log_filename = f"ctwarp_{timestamp}.log"
    log_path = os.path.join(log_dir, log_filename)

    try:
        log_file = open(log_path, 'w', encoding='utf-8')
        log_file.write(f"ctwarp log - session started at {datetime.datetime.now().strftime('%Y-%m-%d %H:%M:%S')}\n")
        log_file.write(f"Working directory: {work_dir}\n\n")
        log_file.flush()
        return log_path
    except OSError as e:
        print(f"Error initializing log file: {e}", file=sys.stderr)
        log_file = None
        return None


def close_log_file():
    """Close the log file properly."""
    global log_file
    if log_file and not log_file.closed:
        log_file.write(f"\nSession ended at {datetime.datetime.now().strftime('%Y-%m-%d %H:%M:%S')}\n")
        log_file.close()
    log_file = None


def _write_to_log(message):
    """Write a message to the log file."""
    if log_file and not log_file.closed:
        try:
            log_file.write(f"{message}\n")
            log_file.flush()
        except OSError as e:
            print(f"Error writing to log file: {e}", file=sys.stderr)


def _write_to_console(console, text):
    if console is None:
        return
    console.write(text + "\n")
    console.flush()


def timestamp():
    """Return current timestamp for console messages."""
    return datetime.datetime.now().strftime("[%H:%M:%S]")


def section_header(console, title):
    """Print a section header (upper-case title between blank lines)."""
    _write_to_console(console, f"\n{title.upper()}\n{'=' * len(title)}")
    _write_to_log(f"\n\n{timestamp()} {title.upper()} ")


def success_message(console, message):
    """Print a success message."""
    _write_to_console(console, f"✓ {message}")
    _write_to_log(f"{timestamp()} ✓{message}")


def error_message(console, message):
    """Print an error message."""
    _write_to_console(console, f"ERROR: {message}")
    _write_to_log(f"{timestamp()} ERROR: {message}")


def warning_message(console, message):
    """Print a warning message."""
    _write_to_console(console, f"WARNING: {message}")
    _write_to_log(f"{timestamp()} WARNING: {message}")


def info_message(console, message):
    """Print an info message."""
    _write_to_console(console, message)
    _write_to_log(f"{timestamp()} {message}")


def progress_message(console, step, total, message):
    """Print a progress message with step count."""
    text = f"[{step}/{total}] {message}" if total else message
    _write_to_console(console, text)
    _write_to_log(f"{timestamp()} {text}")


def summary_statistics(console, stats_dict, title="SUMMARY STATISTICS"):
    """Print summary statistics as a two-column table."""
    table = tabulate(
        [(key, value) for key, value in stats_dict.items()],
        tablefmt="simple", disable_numparse=True,
    )
    _write_to_console(console, f"\n{title}\n{table}\n")
    _write_to_log(f"\n{title}\n{table}\n")
