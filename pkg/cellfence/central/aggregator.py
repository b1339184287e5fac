"""
Collects the reports of all receivers about one uplink message.

A slot opens with the first report of a message and closes when every
expected receiver has reported or when its deadline (first arrival plus
the aggregation timeout) passes, whichever comes first. Each slot is
emitted exactly once; reports arriving afterwards are counted as late.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple

from cellfence.config import AGGREGATION_TIMEOUT_MS

logger = logging.getLogger("Aggregator")

CLOSED_MEMORY = 65536


class SlotStatus(Enum):
    OPEN = "open"
    CLOSED = "closed"


@dataclass
class AggregationSlot:
    message_id: Tuple[int, int, int, int, int]
    opened_ns: int
    deadline_ns: int
    reports: Dict[int, object] = field(default_factory=dict)
    arrivals: Dict[int, int] = field(default_factory=dict)
    status: SlotStatus = SlotStatus.OPEN
    closed_ns: Optional[int] = None
    timed_out: bool = False

    @property
    def msg_type(self):
        return self.message_id[3]

    @property
    def connection_id(self):
        return self.message_id[:3]


class Aggregator:
    """
    Args:
        receiver_ids (iterable): Receivers expected to report every message.
        on_close: Callable(slot) invoked once per closed slot.
        timeout_ms (float): Time from first report to forced close.
    """

    def __init__(self, receiver_ids, on_close, timeout_ms=AGGREGATION_TIMEOUT_MS):
        self.receiver_ids = frozenset(receiver_ids)
        self.on_close = on_close
        self.timeout_ns = int(round(timeout_ms * 1e6))
        self._open = OrderedDict()
        self._closed = OrderedDict()
        self.opened = 0
        self.closed_complete = 0
        self.closed_timeout = 0
        self.duplicates = 0
        self.late = 0
        self.unknown_receiver = 0
        self.reports_accepted = 0

    def add_report(self, report, now_ns):
        """
        Accept one report.

        Returns:
            list: Slots closed by this call (its own slot if complete, plus any expired).
        """
        closed = self.expire(now_ns)
        key = tuple(report.message_id)
        if report.receiver_id not in self.receiver_ids:
            self.unknown_receiver += 1
            logger.debug(f"Report from unknown receiver {report.receiver_id} rejected")
            return closed
        if key in self._closed:
            self.late += 1
            return closed

        slot = self._open.get(key)
        if slot is None:
            slot = AggregationSlot(key, now_ns, now_ns + self.timeout_ns)
            self._open[key] = slot
            self.opened += 1
        elif report.receiver_id in slot.reports:
            self.duplicates += 1
            return closed

        slot.reports[report.receiver_id] = report
        slot.arrivals[report.receiver_id] = now_ns
        self.reports_accepted += 1
        if len(slot.reports) == len(self.receiver_ids):
            self._close(slot, now_ns, timed_out=False)
            closed.append(slot)
        return closed

    def expire(self, now_ns):
        """Close every slot whose deadline has passed; slots are kept in deadline order."""
        closed = []
        while self._open:
            slot = next(iter(self._open.values()))
            if slot.deadline_ns > now_ns:
                break
            self._close(slot, now_ns, timed_out=True)
            closed.append(slot)
        return closed

    def flush(self, now_ns):
        """Close all open slots regardless of deadline."""
        closed = []
        for slot in list(self._open.values()):
            self._close(slot, now_ns, timed_out=True)
            closed.append(slot)
        return closed

    def _close(self, slot, now_ns, timed_out):
        del self._open[slot.message_id]
        slot.status = SlotStatus.CLOSED
        slot.closed_ns = now_ns
        slot.timed_out = timed_out
        self._closed[slot.message_id] = True
        if len(self._closed) > CLOSED_MEMORY:
            self._closed.popitem(last=False)
        if timed_out:
            self.closed_timeout += 1
        else:
            self.closed_complete += 1
        try:
            self.on_close(slot)
        except Exception as e:
            logger.error(f"Slot handler failed for {slot.message_id}: {str(e)}")

    @property
    def open_slots(self):
        return len(self._open)

    def get_status(self):
        expected = (self.closed_complete + self.closed_timeout) * len(self.receiver_ids)
        return {
            "opened": self.opened,
            "closed_complete": self.closed_complete,
            "closed_timeout": self.closed_timeout,
            "open": self.open_slots,
            "duplicates": self.duplicates,
            "late": self.late,
            "unknown_receiver": self.unknown_receiver,
            "reports_accepted": self.reports_accepted,
            "missing_reports": max(0, expected - self.reports_accepted + sum(len(s.reports) for s in self._open.values())),
        }
