"""
Binary frames exchanged on the bus.

Every frame is [u8 version][u8 kind][u32 payload length][payload], all
integers little-endian, timestamps u64 nanoseconds since the scenario epoch.

Payloads:
    Allocation (1):         u16 count, then count allocation records
    allocation record:      u32 earfcn, u16 pci, u16 rnti, u8 msg_type, u32 subframe,
                            u16 prb_offset, u16 n_prb, i16 preamble (-1 none), u8 hopping,
                            u64 published_ns, u8 retrospective
    PdschNotice (2):        u32 earfcn, u16 pci, u16 rnti, u32 subframe, u8 end_of_connection,
                            u8 has_pucch, u16 expected_messages, u64 published_ns,
                            [allocation record if has_pucch]
    MeasurementReport (3):  message id (u32, u16, u16, u8, u32), u16 receiver_id,
                            u64 origin, alloc_rx, measure_start, measured_at, published,
                            2 x (u8 valid, f64 x 5 features)
    Decision (4):           message id, u8 final, u8 inside, u16 n_reports, f64 score,
                            f64 probability, u64 decided_ns, i64 latency_ns
"""

import struct

from cellfence.central.records import Decision
from cellfence.downlink.allocation import PdschNotice, UplinkAllocation
from cellfence.errors import WireFormatError
from cellfence.phy.resource_grid import MsgType
from cellfence.uplink.report import MeasurementReport, PortFeatures

WIRE_VERSION = 1

KIND_ALLOCATION = 1
KIND_PDSCH_NOTICE = 2
KIND_REPORT = 3
KIND_DECISION = 4

TOPIC_DOWNLINK = "downlink"
TOPIC_REPORTS = "reports"
TOPIC_DECISIONS = "decisions"

_HEADER = struct.Struct("<BBI")
_COUNT = struct.Struct("<H")
_ALLOCATION = struct.Struct("<IHHBIHHhBQB")
_NOTICE = struct.Struct("<IHHIBBHQ")
_MESSAGE_ID = struct.Struct("<IHHBI")
_REPORT_HEAD = struct.Struct("<H5Q")
_PORT = struct.Struct("<B5d")
_DECISION_TAIL = struct.Struct("<BBHddQq")


def _frame(kind, payload):
    return _HEADER.pack(WIRE_VERSION, kind, len(payload)) + payload


def _pack_allocation(a):
    return _ALLOCATION.pack(a.earfcn, a.pci, a.rnti, int(a.msg_type), a.subframe_index, a.prb_offset,
                            a.n_prb, a.preamble_index, int(a.hopping), a.published_ns, int(a.retrospective))


def _unpack_allocation(buf, offset):
    (earfcn, pci, rnti, msg_type, subframe, prb_offset, n_prb, preamble, hopping,
     published, retro) = _ALLOCATION.unpack_from(buf, offset)
    alloc = UplinkAllocation(earfcn, pci, rnti, MsgType(msg_type), subframe, prb_offset, n_prb,
                             preamble, bool(hopping), published, bool(retro))
    return alloc, offset + _ALLOCATION.size


def encode_allocations(allocations):
    """One Allocation frame carrying every given allocation (a RAR carries two)."""
    payload = _COUNT.pack(len(allocations)) + b"".join(_pack_allocation(a) for a in allocations)
    return _frame(KIND_ALLOCATION, payload)


def encode_pdsch_notice(notice):
    has_pucch = notice.pucch is not None
    payload = _NOTICE.pack(notice.earfcn, notice.pci, notice.rnti, notice.subframe_index,
                           int(notice.end_of_connection), int(has_pucch), notice.expected_messages,
                           notice.published_ns)
    if has_pucch:
        payload += _pack_allocation(notice.pucch)
    return _frame(KIND_PDSCH_NOTICE, payload)


def encode_report(report):
    parts = [
        _MESSAGE_ID.pack(*report.message_id),
        _REPORT_HEAD.pack(report.receiver_id, report.origin_ns, report.alloc_rx_ns,
                          report.measure_start_ns, report.measured_at_ns, report.published_ns),
    ]
    for port in report.ports:
        parts.append(_PORT.pack(int(port.valid), *port.values()))
    return _frame(KIND_REPORT, b"".join(parts))


def encode_decision(decision):
    payload = _MESSAGE_ID.pack(*decision.message_id) + _DECISION_TAIL.pack(
        int(decision.final), int(decision.inside), decision.n_reports, decision.score,
        decision.probability, decision.decided_ns, decision.latency_ns)
    return _frame(KIND_DECISION, payload)


def _decode_allocations(payload):
    (count,) = _COUNT.unpack_from(payload, 0)
    offset = _COUNT.size
    allocations = []
    for _ in range(count):
        alloc, offset = _unpack_allocation(payload, offset)
        allocations.append(alloc)
    return allocations


def _decode_notice(payload):
    earfcn, pci, rnti, subframe, end, has_pucch, expected, published = _NOTICE.unpack_from(payload, 0)
    pucch = _unpack_allocation(payload, _NOTICE.size)[0] if has_pucch else None
    return PdschNotice(earfcn, pci, rnti, subframe, pucch, bool(end), expected, published)


def _decode_report(payload):
    message_id = _MESSAGE_ID.unpack_from(payload, 0)
    receiver_id, origin, alloc_rx, start, measured, published = _REPORT_HEAD.unpack_from(payload, _MESSAGE_ID.size)
    offset = _MESSAGE_ID.size + _REPORT_HEAD.size
    ports = []
    for _ in range(2):
        valid, *values = _PORT.unpack_from(payload, offset)
        ports.append(PortFeatures(bool(valid), *values))
        offset += _PORT.size
    return MeasurementReport(message_id, receiver_id, tuple(ports), origin, alloc_rx, start, measured, published)


def _decode_decision(payload):
    message_id = _MESSAGE_ID.unpack_from(payload, 0)
    final, inside, n_reports, score, probability, decided, latency = _DECISION_TAIL.unpack_from(
        payload, _MESSAGE_ID.size)
    return Decision(message_id, score, bool(final), probability, bool(inside), n_reports, decided, latency)


_DECODERS = {
    KIND_ALLOCATION: _decode_allocations,
    KIND_PDSCH_NOTICE: _decode_notice,
    KIND_REPORT: _decode_report,
    KIND_DECISION: _decode_decision,
}


def decode_frame(data):
    """
    Decode one frame.

    Returns:
        tuple: (kind, object); Allocation frames decode to a list of UplinkAllocation.
    """
    if len(data) < _HEADER.size:
        raise WireFormatError(f"Frame of {len(data)} bytes is shorter than its header")
    version, kind, length = _HEADER.unpack_from(data, 0)
    if version != WIRE_VERSION:
        raise WireFormatError(f"Unsupported wire version {version}")
    if kind not in _DECODERS:
        raise WireFormatError(f"Unknown frame kind {kind}")
    payload = bytes(data[_HEADER.size:])
    if len(payload) != length:
        raise WireFormatError(f"Frame announces {length} payload bytes, got {len(payload)}")
    try:
        return kind, _DECODERS[kind](payload)
    except (struct.error, ValueError) as e:
        raise WireFormatError(f"Malformed kind {kind} payload: {e}")
