"""Allocations waiting for their subframe to be fully ingested."""

import heapq
import logging
import threading
from collections import OrderedDict

logger = logging.getLogger("EventQueue")

SEEN_CAPACITY = 65536


class AllocationEventQueue:
    """
    One producer (bus listener) pushes, one consumer (port worker) pops.

    An allocation is handed out at most once: re-pushing a message_id that
    was already queued or processed is ignored. Allocations whose subframe
    has left the ring buffer are returned as stale and counted as lost.
    """

    def __init__(self):
        self._heap = []
        self._order = 0
        self._seen = OrderedDict()
        self._cond = threading.Condition()
        self.pushed = 0
        self.duplicates = 0
        self.stale = 0
        self.processed = 0

    def push(self, allocation):
        """Queue an allocation; returns False for a message_id seen before."""
        key = allocation.message_id
        with self._cond:
            if key in self._seen:
                self.duplicates += 1
                return False
            self._seen[key] = True
            if len(self._seen) > SEEN_CAPACITY:
                self._seen.popitem(last=False)
            heapq.heappush(self._heap, (allocation.subframe_index, self._order, allocation))
            self._order += 1
            self.pushed += 1
            self._cond.notify()
            return True

    def pop_ready(self, available_subframe, oldest_subframe=0):
        """
        Take every allocation whose subframe is complete.

        Args:
            available_subframe (int): Last subframe fully present in the buffer.
            oldest_subframe (int): First subframe still fully retained.

        Returns:
            tuple: (ready, stale) lists of allocations in subframe order.
        """
        ready, stale = [], []
        with self._cond:
            while self._heap and self._heap[0][0] <= available_subframe:
                subframe, _, allocation = heapq.heappop(self._heap)
                if subframe < oldest_subframe:
                    stale.append(allocation)
                else:
                    ready.append(allocation)
            self.stale += len(stale)
            self.processed += len(ready)
        if stale:
            logger.warning(f"{len(stale)} allocations arrived after their subframe was evicted")
        return ready, stale

    def drop_before(self, oldest_subframe):
        """Discard queued allocations that can no longer be served; returns them."""
        dropped = []
        with self._cond:
            while self._heap and self._heap[0][0] < oldest_subframe:
                dropped.append(heapq.heappop(self._heap)[2])
            self.stale += len(dropped)
        return dropped

    def wait(self, timeout):
        """Block until something is queued or timeout seconds pass."""
        with self._cond:
            if not self._heap:
                self._cond.wait(timeout)
            return bool(self._heap)

    def wake(self):
        with self._cond:
            self._cond.notify_all()

    def __len__(self):
        with self._cond:
            return len(self._heap)

    def next_subframe(self):
        with self._cond:
            return self._heap[0][0] if self._heap else None
