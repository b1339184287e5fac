import struct
import threading

import pytest

from cellfence.bus.bench import report_sized_payload, round_trip_bench
from cellfence.bus.inproc import InProcessBus
from cellfence.bus.socket_bus import SocketPublisher, SocketSubscriber, topic_url
from cellfence.bus.wire import (
    KIND_ALLOCATION,
    KIND_DECISION,
    KIND_PDSCH_NOTICE,
    KIND_REPORT,
    WIRE_VERSION,
    decode_frame,
    encode_allocations,
    encode_decision,
    encode_pdsch_notice,
    encode_report,
)
from cellfence.central.records import Decision
from cellfence.downlink.allocation import PdschNotice, UplinkAllocation
from cellfence.errors import WireFormatError
from cellfence.phy.resource_grid import MsgType
from cellfence.uplink.report import MeasurementReport, PortFeatures

SOCKET_PORT = 18765


@pytest.fixture
def allocation():
    return UplinkAllocation(19575, 101, 0x3D, MsgType.PUSCH, 1234, 7, 3, published_ns=987654321)


def test_rar_frame_keeps_both_allocations(allocation):
    prach = UplinkAllocation(19575, 101, 0x3D, MsgType.PRACH, 1222, 4, 6, preamble_index=17, retrospective=True)
    kind, decoded = decode_frame(encode_allocations([prach, allocation]))
    assert kind == KIND_ALLOCATION
    assert decoded == [prach, allocation]


def test_notice_with_and_without_pucch(allocation):
    pucch = UplinkAllocation(19575, 101, 0x3D, MsgType.PUCCH, 1250, 0, 1, hopping=True)
    ack = PdschNotice(19575, 101, 0x3D, 1246, pucch=pucch, published_ns=5)
    end = PdschNotice(19575, 101, 0x3D, 1251, end_of_connection=True, expected_messages=4)
    assert decode_frame(encode_pdsch_notice(ack)) == (KIND_PDSCH_NOTICE, ack)
    assert decode_frame(encode_pdsch_notice(end)) == (KIND_PDSCH_NOTICE, end)


def test_report_and_decision_frames():
    port = PortFeatures(True, -41.25, -40.5, 18.0, 16.5, 2.5e-7)
    report = MeasurementReport((19575, 101, 0x3D, 2, 99), 3, (port, PortFeatures.absent()), 1, 2, 3, 4, 5)
    assert decode_frame(encode_report(report)) == (KIND_REPORT, report)

    decision = Decision((19575, 101, 0x3D, 255, 99), 0.25, True, 0.875, True, 4, 123, -7)
    assert decode_frame(encode_decision(decision)) == (KIND_DECISION, decision)


def test_report_frame_size_is_fixed():
    assert len(report_sized_payload()) == 6 + 13 + 42 + 2 * 41


def test_short_frame_is_rejected():
    with pytest.raises(WireFormatError, match="shorter"):
        decode_frame(b"\x01\x02")


def test_bad_version_is_rejected(allocation):
    frame = bytearray(encode_allocations([allocation]))
    frame[0] = WIRE_VERSION + 1
    with pytest.raises(WireFormatError, match="version"):
        decode_frame(bytes(frame))


def test_unknown_kind_is_rejected():
    with pytest.raises(WireFormatError, match="kind"):
        decode_frame(struct.pack("<BBI", WIRE_VERSION, 9, 0))


def test_length_mismatch_is_rejected(allocation):
    frame = encode_allocations([allocation])
    with pytest.raises(WireFormatError, match="payload bytes"):
        decode_frame(frame[:-1])


def test_truncated_payload_is_rejected(allocation):
    frame = encode_allocations([allocation])
    # Header announces two records but only one follows
    payload = struct.pack("<H", 2) + frame[8:]
    with pytest.raises(WireFormatError, match="Malformed"):
        decode_frame(struct.pack("<BBI", WIRE_VERSION, KIND_ALLOCATION, len(payload)) + payload)


def test_inproc_delivers_in_publication_order():
    bus = InProcessBus(strict=True)
    seen = []

    def first(topic, payload):
        seen.append(("first", payload))
        if payload == b"a":
            bus.publish("t", b"nested")

    bus.subscribe("t", first)
    bus.subscribe("t", lambda topic, payload: seen.append(("second", payload)))
    assert bus.publish("t", b"a") == 2
    assert seen == [("first", b"a"), ("second", b"a"), ("first", b"nested"), ("second", b"nested")]


def test_inproc_without_subscribers_reports_zero():
    bus = InProcessBus()
    assert bus.publish("nobody", b"x") == 0
    assert bus.get_status()["published"] == 1


def test_inproc_unsubscribe():
    bus = InProcessBus()
    seen = []
    callback = bus.subscribe("t", lambda topic, payload: seen.append(payload))
    bus.publish("t", b"1")
    bus.unsubscribe("t", callback)
    bus.publish("t", b"2")
    assert seen == [b"1"]


def test_inproc_loss_is_seeded():
    def run():
        bus = InProcessBus(loss_rate=0.3, seed=7)
        seen = []
        bus.subscribe("t", lambda topic, payload: seen.append(payload))
        for i in range(1000):
            bus.publish("t", bytes([i % 256]))
        return seen, bus.get_status()

    first, status = run()
    second, _ = run()
    assert first == second
    assert status["dropped"] + status["delivered"] == 1000
    assert 0.25 < status["dropped"] / 1000 < 0.35


def test_inproc_subscriber_errors():
    lenient = InProcessBus()
    lenient.subscribe("t", lambda topic, payload: 1 / 0)
    lenient.publish("t", b"x")
    assert lenient.get_status()["delivered"] == 0

    strict = InProcessBus(strict=True)
    strict.subscribe("t", lambda topic, payload: 1 / 0)
    with pytest.raises(ZeroDivisionError):
        strict.publish("t", b"x")


def test_topic_url():
    assert topic_url("127.0.0.1", 9000, "reports") == "ws://127.0.0.1:9000/bus/reports"


def test_socket_publish_reaches_subscriber():
    publisher = SocketPublisher("127.0.0.1", SOCKET_PORT, name="test-pub")
    received = []
    done = threading.Event()

    def on_frame(topic, payload):
        received.append((topic, payload))
        if len(received) == 3:
            done.set()

    subscriber = SocketSubscriber([("127.0.0.1", SOCKET_PORT, "reports")], on_frame, name="test-sub")
    assert publisher.start()
    subscriber.start()
    try:
        assert subscriber.wait_connected(5.0)
        assert publisher.wait_for_subscribers("reports", 1, 5.0)
        for payload in (b"one", b"two", b"three"):
            publisher.publish("reports", payload)
        publisher.publish("other", b"ignored")
        assert done.wait(5.0)
    finally:
        subscriber.stop()
        publisher.stop()
    assert received == [("reports", b"one"), ("reports", b"two"), ("reports", b"three")]


def test_publish_before_start_is_dropped():
    publisher = SocketPublisher("127.0.0.1", SOCKET_PORT + 1, name="idle")
    publisher.publish("reports", b"x")
    assert publisher.dropped == 1


def test_round_trip_bench():
    stats = round_trip_bench(20, host="127.0.0.1", port=SOCKET_PORT + 2)
    assert 0 < stats.count <= 20
    assert stats.min > 0
    assert stats.p50 <= stats.p99
