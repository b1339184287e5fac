"""Time sources shared by every component: nanoseconds since the scenario epoch."""

import threading
import time

NS_PER_SUBFRAME = 1_000_000


class LogicalClock:
    """Manually advanced clock for deterministic in-process runs."""

    def __init__(self, start_ns=0):
        self._now = int(start_ns)
        self._lock = threading.Lock()

    def now_ns(self):
        with self._lock:
            return self._now

    def set_ns(self, value):
        with self._lock:
            if value < self._now:
                raise ValueError(f"Clock cannot go back from {self._now} to {value}")
            self._now = int(value)

    def advance_ns(self, delta):
        self.set_ns(self.now_ns() + int(delta))

    def subframe_start_ns(self, subframe):
        return subframe * NS_PER_SUBFRAME


class MonotonicClock:
    """Wall clock relative to an epoch taken from time.monotonic_ns(), which is shared by all local processes."""

    def __init__(self, epoch_ns=None):
        self.epoch_ns = time.monotonic_ns() if epoch_ns is None else int(epoch_ns)

    def now_ns(self):
        return time.monotonic_ns() - self.epoch_ns

    def subframe_start_ns(self, subframe):
        return subframe * NS_PER_SUBFRAME

    def current_subframe(self):
        return self.now_ns() // NS_PER_SUBFRAME

    def sleep_until_ns(self, target_ns):
        delay = (target_ns - self.now_ns()) / 1e9
        if delay > 0:
            time.sleep(delay)
