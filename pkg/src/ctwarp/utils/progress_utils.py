"""Terminal progress reporting for long-running loops."""

import sys
import time


class ConsoleProgress:
    """Text progress line with the start/update/finish protocol of the engine.

    Redraws at most every ``min_interval`` seconds so tight optimization
    loops are not slowed down by terminal output.
    """

    def __init__(self, stream=None, min_interval=0.5, width=30):
        self.stream = stream if stream is not None else sys.stderr
        self.min_interval = min_interval
        self.width = width
        self.title = ""
        self.maximum = 0
        self._last_draw = 0.0

    def start(self, title, maximum):
        self.title = title
        self.maximum = max(int(maximum), 1)
        self._last_draw = 0.0
        self._draw(0, None, force=True)

    def update(self, value, message=None):
        self._draw(value, message)

    def finish(self):
        self._draw(self.maximum, None, force=True)
        self.stream.write("\n")
        self.stream.flush()

    def _draw(self, value, message, force=False):
        now = time.monotonic()
        if not force and now - self._last_draw < self.min_interval:
            return
        self._last_draw = now
        filled = int(self.width * min(value, self.maximum) / self.maximum)
        bar = "#" * filled + "-" * (self.width - filled)
        line = f"\r{self.title} [{bar}] {value}/{self.maximum}"
        if message:
            line += f" {message}"
        self.stream.write(line)
        self.stream.flush()


class NullProgress:
    """Progress sink for library calls without a terminal."""

    def start(self, title, maximum):
        pass

    def update(self, value, message=None):
        pass

    def finish(self):
        pass
