"""
Per-UE connection establishment state machine.

Idle -> PrachSent -> RarSent -> Msg3Sent -> SetupSent -> Complete. The RRC
Setup may be split into two PDSCH transmissions; every PDSCH is acknowledged
on PUCCH exactly 4 subframes later. Nothing after the acknowledgements is
tracked: the next uplink message would carry the request to the core network.
"""

from dataclasses import dataclass, field
from enum import IntEnum
from typing import List, Tuple

from cellfence.errors import IllegalTransitionError

MSG3_DELAY = 6
HARQ_DELAY = 4
MAX_PDSCH = 2


class ConnectionState(IntEnum):
    IDLE = 0
    PRACH_SENT = 1
    RAR_SENT = 2
    MSG3_SENT = 3
    SETUP_SENT = 4
    COMPLETE = 5


# event -> (required state, next state)
_TRANSITIONS = {
    "prach": (ConnectionState.IDLE, ConnectionState.PRACH_SENT),
    "rar": (ConnectionState.PRACH_SENT, ConnectionState.RAR_SENT),
    "msg3": (ConnectionState.RAR_SENT, ConnectionState.MSG3_SENT),
    "pdsch": (ConnectionState.MSG3_SENT, ConnectionState.SETUP_SENT),
    "complete": (ConnectionState.SETUP_SENT, ConnectionState.COMPLETE),
}


@dataclass
class ConnectionStateMachine:
    rnti: int
    cell: Tuple[int, int]
    state: ConnectionState = ConnectionState.IDLE
    timeline: List[Tuple[int, str]] = field(default_factory=list)

    def _last(self, event):
        for subframe, name in reversed(self.timeline):
            if name == event:
                return subframe
        return None

    def _count(self, event):
        return sum(1 for _, name in self.timeline if name == event)

    def _fail(self, event, subframe, reason):
        raise IllegalTransitionError(
            f"RNTI {self.rnti:#06x}: '{event}' at subframe {subframe} in state {self.state.name}: {reason}"
        )

    def record(self, event, subframe):
        """Apply one event; raises IllegalTransitionError on any out-of-order or mistimed event."""
        if self.timeline and subframe < self.timeline[-1][0]:
            self._fail(event, subframe, "events must be recorded in time order")

        if event == "pdsch" and self.state == ConnectionState.SETUP_SENT:
            # Second part of a split RRC Setup
            if self._count("pdsch") >= MAX_PDSCH:
                self._fail(event, subframe, "RRC Setup split into more than two PDSCH")
            self.timeline.append((subframe, event))
            return self.state

        if event == "pucch":
            if self.state != ConnectionState.SETUP_SENT:
                self._fail(event, subframe, "PUCCH before RRC Setup")
            acked = self._count("pucch")
            pdsch = [s for s, name in self.timeline if name == "pdsch"]
            if acked >= len(pdsch):
                self._fail(event, subframe, "no PDSCH left to acknowledge")
            if subframe != pdsch[acked] + HARQ_DELAY:
                self._fail(event, subframe, f"PUCCH must follow its PDSCH by {HARQ_DELAY} subframes")
            self.timeline.append((subframe, event))
            return self.state

        if event not in _TRANSITIONS:
            self._fail(event, subframe, "unknown event")
        required, target = _TRANSITIONS[event]
        if self.state != required:
            self._fail(event, subframe, f"expected state {required.name}")

        if event == "msg3" and subframe != self._last("rar") + MSG3_DELAY:
            self._fail(event, subframe, f"Msg3 must follow the RAR by {MSG3_DELAY} subframes")
        if event == "complete" and self._count("pucch") != self._count("pdsch"):
            self._fail(event, subframe, "unacknowledged PDSCH")

        self.state = target
        self.timeline.append((subframe, event))
        return self.state

    @property
    def n_pucch(self):
        return self._count("pucch")

    @property
    def complete(self):
        return self.state == ConnectionState.COMPLETE
