"""
Circular IQ buffer addressed by absolute sample index.

Sample n of the stream is stored at slot n % capacity. The write head is
the absolute index of the next sample to be written, so the time of any
retained sample is base_timestamp + n / sample_rate.
"""

import logging
import threading

import numpy as np

from cellfence.errors import InvalidParameterError, RetryLaterError, StaleRangeError

logger = logging.getLogger("RingBuffer")


class CircularIqBuffer:
    """
    Args:
        capacity (int): Number of complex samples retained.
        sample_rate (float): Samples per second.
        base_timestamp (float): Time of absolute sample 0 in seconds.
    """

    def __init__(self, capacity, sample_rate, base_timestamp=0.0):
        if capacity <= 0:
            raise InvalidParameterError(f"Ring capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.sample_rate = float(sample_rate)
        self.base_timestamp = float(base_timestamp)
        self.write_head = 0
        self.overwritten = 0
        self._data = np.zeros(self.capacity, dtype=np.complex128)
        self.lock = threading.Lock()

    @classmethod
    def for_duration(cls, duration_ms, sample_rate, base_timestamp=0.0):
        return cls(int(round(duration_ms * 1e-3 * sample_rate)), sample_rate, base_timestamp)

    @property
    def oldest_index(self):
        return max(0, self.write_head - self.capacity)

    def write(self, samples):
        """Append samples in time order, overwriting the oldest ones when full."""
        samples = np.asarray(samples, dtype=np.complex128)
        n = len(samples)
        if n == 0:
            return self.write_head
        with self.lock:
            evicted_before = self.oldest_index
            if n > self.capacity:
                # Only the newest capacity samples can survive anyway
                skipped = n - self.capacity
                self.write_head += skipped
                samples = samples[skipped:]
                n = self.capacity
            start = self.write_head % self.capacity
            first = min(n, self.capacity - start)
            self._data[start:start + first] = samples[:first]
            if first < n:
                self._data[:n - first] = samples[first:]
            self.write_head += n
            self.overwritten += self.oldest_index - evicted_before
            return self.write_head

    def read(self, start, stop):
        """
        Copy absolute samples [start, stop).

        Raises:
            StaleRangeError: Part of the range was already overwritten.
            RetryLaterError: Part of the range was not written yet.
        """
        if stop < start:
            raise InvalidParameterError(f"Invalid range [{start}, {stop})")
        with self.lock:
            if start < self.oldest_index:
                raise StaleRangeError(f"Samples [{start}, {stop}) older than retained [{self.oldest_index}, ...)")
            if stop > self.write_head:
                raise RetryLaterError(f"Samples up to {stop} requested, only {self.write_head} ingested")
            idx = np.arange(start, stop, dtype=np.int64) % self.capacity
            return self._data[idx].copy()

    def contains(self, start, stop):
        with self.lock:
            return self.oldest_index <= start and stop <= self.write_head

    def timestamp_of(self, index):
        return self.base_timestamp + index / self.sample_rate

    def head_timestamp(self):
        """Time just after the newest sample."""
        return self.timestamp_of(self.write_head)

    def index_at(self, timestamp):
        return int(round((timestamp - self.base_timestamp) * self.sample_rate))
