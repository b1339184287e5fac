"""
Simulated eNodeB uplink scheduler for one cell.

Plans every connection's uplink timeline up front (PRACH, RAR, Msg3,
RRC Setup PDSCH, PUCCH acknowledgements), validates it against the
connection state machine and releases the resulting events subframe by
subframe through step().
"""

import heapq
import itertools
import logging
from dataclasses import dataclass
from typing import Any, Optional, Tuple

from cellfence.config import PUCCH_SPLIT_PROBABILITY, RAR_DELAY_MAX, RAR_DELAY_MIN
from cellfence.downlink.allocation import PdschNotice, UplinkAllocation
from cellfence.downlink.state_machine import HARQ_DELAY, MSG3_DELAY, ConnectionStateMachine
from cellfence.errors import InvalidAllocationError
from cellfence.phy.resource_grid import N_PREAMBLES, PRACH_N_PRB, UplinkMessageSpec

logger = logging.getLogger("Scheduler")

FIRST_RNTI = 0x003D
LAST_RNTI = 0xFFF3
SUBFRAMES_PER_FRAME = 10
MAX_MSG3_PRB = 6
PDSCH_DELAY = (4, 8)
SPLIT_GAP = (1, 2)
BACKOFF = (1, 10)

# Transmissions of a subframe come before the downlink events of the same subframe
_KIND_ORDER = {"prach_tx": 0, "msg3_tx": 1, "pucch_tx": 2, "rar": 3, "pdsch": 4, "end": 5}


@dataclass(frozen=True)
class SchedulerEvent:
    """
    One step of a connection timeline.

    kind is one of prach_tx, msg3_tx, pucch_tx (the UE transmits `spec`),
    rar (`allocations` holds the retrospective PRACH and the Msg3 grant),
    pdsch and end (`notice`).
    """
    subframe: int
    kind: str
    rnti: int
    cell_id: Tuple[int, int]
    ue: Any = None
    spec: Optional[UplinkMessageSpec] = None
    allocations: Tuple[UplinkAllocation, ...] = ()
    notice: Optional[PdschNotice] = None


class UplinkResourceMap:
    """PRBs already granted per subframe; PUCCH sits on the band edges, PUSCH in between."""

    def __init__(self, cell):
        self.cell = cell
        self._pusch = {}
        self._pucch = {}

    def is_prach_subframe(self, subframe):
        return subframe % SUBFRAMES_PER_FRAME in self.cell.prach_subframes

    def pusch_candidates(self, subframe, n_prb):
        busy = set(self._pusch.get(subframe, ()))
        if self.is_prach_subframe(subframe):
            busy.update(range(self.cell.prach_prb_offset, self.cell.prach_prb_offset + PRACH_N_PRB))
        last = self.cell.n_prb_ul - 1
        return [o for o in range(1, last - n_prb + 1) if busy.isdisjoint(range(o, o + n_prb))]

    def reserve_pusch(self, subframe, n_prb, rng):
        candidates = self.pusch_candidates(subframe, n_prb)
        if not candidates:
            return None
        offset = int(candidates[rng.integers(len(candidates))])
        self._pusch.setdefault(subframe, set()).update(range(offset, offset + n_prb))
        return offset

    def reserve_pucch(self, subframe):
        used = self._pucch.setdefault(subframe, set())
        for offset in (0, self.cell.n_prb_ul - 1):
            if offset not in used:
                used.add(offset)
                return offset
        return None

    def forget_before(self, subframe):
        for table in (self._pusch, self._pucch):
            for key in [k for k in table if k < subframe]:
                del table[key]


def next_prach_opportunity(cell, subframe):
    while subframe % SUBFRAMES_PER_FRAME not in cell.prach_subframes:
        subframe += 1
    return subframe


def run_connection(ue, cell, start_subframe, rng, rnti, preamble_index=None, resources=None,
                   split_probability=PUCCH_SPLIT_PROBABILITY, rar_delay=(RAR_DELAY_MIN, RAR_DELAY_MAX)):
    """
    Plan one connection establishment.

    Args:
        ue: Opaque UE descriptor carried on transmission events.
        cell (CellConfig): Serving cell.
        start_subframe (int): PRACH subframe (moved to the next PRACH opportunity if needed).
        rng (numpy.random.Generator): Source of all random timing choices.
        rnti (int): C-RNTI handed out in the RAR.
        preamble_index (int, optional): Preamble; drawn at random if None.
        resources (UplinkResourceMap, optional): Shared grant table of the cell.

    Returns:
        tuple: (ConnectionStateMachine, list of SchedulerEvent in time order)
    """
    resources = resources or UplinkResourceMap(cell)
    if preamble_index is None:
        preamble_index = int(rng.integers(N_PREAMBLES))
    sm = ConnectionStateMachine(rnti, cell.cell_id)
    events = []

    prach_sf = next_prach_opportunity(cell, start_subframe)
    prach_spec = UplinkMessageSpec.prach(preamble_index, cell.prach_prb_offset, rnti)
    sm.record("prach", prach_sf)
    events.append(SchedulerEvent(prach_sf, "prach_tx", rnti, cell.cell_id, ue, prach_spec))

    # RAR window: move the RAR later until the Msg3 grant fits
    msg3_prb = int(rng.integers(1, MAX_MSG3_PRB + 1))
    rar_sf = msg3_offset = None
    for delay in range(int(rng.integers(rar_delay[0], rar_delay[1] + 1)), rar_delay[1] + 1):
        msg3_offset = resources.reserve_pusch(prach_sf + delay + MSG3_DELAY, msg3_prb, rng)
        if msg3_offset is not None:
            rar_sf = prach_sf + delay
            break
    if rar_sf is None:
        raise InvalidAllocationError(f"No room for a {msg3_prb}-PRB Msg3 after PRACH at subframe {prach_sf}")

    msg3_sf = rar_sf + MSG3_DELAY
    msg3_spec = UplinkMessageSpec.pusch(msg3_prb, msg3_offset, rnti)
    prach_alloc = UplinkAllocation.from_spec(cell, prach_spec, prach_sf, retrospective=True)
    msg3_alloc = UplinkAllocation.from_spec(cell, msg3_spec, msg3_sf)
    sm.record("rar", rar_sf)
    events.append(SchedulerEvent(rar_sf, "rar", rnti, cell.cell_id, ue, allocations=(prach_alloc, msg3_alloc)))
    sm.record("msg3", msg3_sf)
    events.append(SchedulerEvent(msg3_sf, "msg3_tx", rnti, cell.cell_id, ue, msg3_spec))

    n_pdsch = 2 if rng.random() < split_probability else 1
    pdsch_sf = msg3_sf + int(rng.integers(PDSCH_DELAY[0], PDSCH_DELAY[1] + 1))
    pucch_plan = []
    for part in range(n_pdsch):
        if part:
            pdsch_sf += int(rng.integers(SPLIT_GAP[0], SPLIT_GAP[1] + 1))
        offset = resources.reserve_pucch(pdsch_sf + HARQ_DELAY)
        while offset is None:
            pdsch_sf += 1
            offset = resources.reserve_pucch(pdsch_sf + HARQ_DELAY)
        pucch_plan.append((pdsch_sf, offset))

    setup_events = []
    for pdsch, offset in pucch_plan:
        pucch_spec = UplinkMessageSpec.pucch(rnti, cell.pucch_hopping, offset)
        pucch_sf = pdsch + HARQ_DELAY
        notice = PdschNotice(cell.earfcn, cell.pci, rnti, pdsch,
                             pucch=UplinkAllocation.from_spec(cell, pucch_spec, pucch_sf))
        setup_events.append(SchedulerEvent(pdsch, "pdsch", rnti, cell.cell_id, ue, notice=notice))
        setup_events.append(SchedulerEvent(pucch_sf, "pucch_tx", rnti, cell.cell_id, ue, pucch_spec))

    # The second PDSCH usually precedes the first PUCCH; the machine sees them in time order
    setup_events.sort(key=lambda e: e.subframe)
    for event in setup_events:
        sm.record("pdsch" if event.kind == "pdsch" else "pucch", event.subframe)
    events.extend(setup_events)

    end_sf = max(e.subframe for e in setup_events) + 1
    expected = 2 + n_pdsch
    sm.record("complete", end_sf)
    events.append(SchedulerEvent(end_sf, "end", rnti, cell.cell_id, ue,
                                 notice=PdschNotice(cell.earfcn, cell.pci, rnti, end_sf,
                                                    end_of_connection=True, expected_messages=expected)))
    events.sort(key=lambda e: (e.subframe, _KIND_ORDER[e.kind]))
    return sm, events


class CellScheduler:
    """Owns every connection of one cell: RNTI allocation, PRACH collisions and grant bookkeeping."""

    def __init__(self, cell, rng, split_probability=PUCCH_SPLIT_PROBABILITY):
        self.cell = cell
        self.rng = rng
        self.split_probability = split_probability
        self.resources = UplinkResourceMap(cell)
        self.connections = {}
        self.collisions = 0
        self._next_rnti = FIRST_RNTI
        self._prach_taken = set()
        self._queue = []
        self._seq = itertools.count()

    def _allocate_rnti(self):
        rnti = self._next_rnti
        self._next_rnti = FIRST_RNTI if rnti >= LAST_RNTI else rnti + 1
        return rnti

    def request(self, ue, start_subframe):
        """Schedule a UE that wants to connect from start_subframe on; returns its state machine."""
        subframe = next_prach_opportunity(self.cell, start_subframe)
        preamble = int(self.rng.integers(N_PREAMBLES))
        while (subframe, preamble) in self._prach_taken:
            self.collisions += 1
            backoff = int(self.rng.integers(BACKOFF[0], BACKOFF[1] + 1))
            logger.debug(f"Preamble {preamble} collision on {self.cell.cell_id} at {subframe}, backing off {backoff}")
            subframe = next_prach_opportunity(self.cell, subframe + backoff)
        self._prach_taken.add((subframe, preamble))

        rnti = self._allocate_rnti()
        sm, events = run_connection(ue, self.cell, subframe, self.rng, rnti, preamble, self.resources,
                                    self.split_probability)
        self.connections[rnti] = sm
        for event in events:
            heapq.heappush(self._queue, (event.subframe, _KIND_ORDER[event.kind], next(self._seq), event))
        return sm

    def step(self, subframe):
        """Pop every event due at or before subframe, in time order."""
        due = []
        while self._queue and self._queue[0][0] <= subframe:
            due.append(heapq.heappop(self._queue)[3])
        if subframe % 100 == 0:
            self.resources.forget_before(subframe)
            self._prach_taken = {k for k in self._prach_taken if k[0] >= subframe}
            for rnti in [r for r, sm in self.connections.items() if sm.complete and sm.timeline[-1][0] < subframe]:
                del self.connections[rnti]
        return due

    @property
    def pending(self):
        return len(self._queue)
