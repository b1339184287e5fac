"""Scheduler output forwarded to the uplink receivers."""

from dataclasses import dataclass, replace
from typing import Optional

from cellfence.errors import InvalidAllocationError
from cellfence.phy.resource_grid import PRACH_N_PRB, MsgType, UplinkMessageSpec

NO_PREAMBLE = -1


@dataclass(frozen=True)
class UplinkAllocation:
    """
    Where and when one uplink message appears.

    message_id is (earfcn, pci, rnti, msg_type, subframe_index): the same for
    every receiver, so reports about one message can be matched centrally.
    """
    earfcn: int
    pci: int
    rnti: int
    msg_type: MsgType
    subframe_index: int
    prb_offset: int
    n_prb: int
    preamble_index: int = NO_PREAMBLE
    hopping: bool = False
    published_ns: int = 0
    retrospective: bool = False

    @property
    def message_id(self):
        return (self.earfcn, self.pci, self.rnti, int(self.msg_type), self.subframe_index)

    @property
    def cell_id(self):
        return (self.earfcn, self.pci)

    def to_spec(self):
        if self.msg_type == MsgType.PRACH:
            return UplinkMessageSpec.prach(self.preamble_index, self.prb_offset, self.rnti)
        if self.msg_type == MsgType.PUSCH:
            return UplinkMessageSpec.pusch(self.n_prb, self.prb_offset, self.rnti)
        return UplinkMessageSpec.pucch(self.rnti, self.hopping, self.prb_offset)

    def stamped(self, published_ns):
        return replace(self, published_ns=int(published_ns))

    @classmethod
    def from_spec(cls, cell, spec, subframe_index, retrospective=False):
        if spec.msg_type == MsgType.PRACH and spec.n_prb != PRACH_N_PRB:
            raise InvalidAllocationError("PRACH allocation must span 6 PRBs")
        preamble = spec.preamble_index if spec.preamble_index is not None else NO_PREAMBLE
        return cls(cell.earfcn, cell.pci, spec.rnti, MsgType(spec.msg_type), int(subframe_index),
                   spec.prb_offset, spec.n_prb, preamble, spec.hopping, 0, retrospective)


@dataclass(frozen=True)
class PdschNotice:
    """
    A downlink transmission seen by the downlink receiver.

    Either announces the PUCCH acknowledgement that follows a PDSCH, or,
    with end_of_connection set, closes a connection and states how many
    uplink messages it produced.
    """
    earfcn: int
    pci: int
    rnti: int
    subframe_index: int
    pucch: Optional[UplinkAllocation] = None
    end_of_connection: bool = False
    expected_messages: int = 0
    published_ns: int = 0

    @property
    def connection_id(self):
        return (self.earfcn, self.pci, self.rnti)

    def stamped(self, published_ns):
        pucch = self.pucch.stamped(published_ns) if self.pucch is not None else None
        return replace(self, pucch=pucch, published_ns=int(published_ns))
