"""
Message round-trip benchmark: ping-pong between two processes over the socket bus.
"""

import logging
import multiprocessing
import struct
import threading
import time

from cellfence.bus.socket_bus import SocketPublisher, SocketSubscriber
from cellfence.bus.wire import encode_report
from cellfence.config import BUS_BASE_PORT, BUS_HOST
from cellfence.errors import CellfenceError, EmptyStatisticsError
from cellfence.uplink.report import MeasurementReport, PortFeatures
from cellfence.utils.stats import LatencyStats

logger = logging.getLogger("BusBench")

_SEQ = struct.Struct("<I")


def report_sized_payload():
    """A frame with the exact size of one measurement report."""
    port = PortFeatures(True, -40.0, -39.5, 12.0, 11.0, 1e-7)
    return encode_report(MeasurementReport((19575, 101, 0x3D, 0, 1), 0, (port, port)))


def _echo_main(host, ping_port, pong_port, stop_event):
    publisher = SocketPublisher(host, pong_port, name="echo")
    if not publisher.start():
        return
    subscriber = SocketSubscriber([(host, ping_port, "ping")], lambda topic, payload: publisher.publish("pong", payload),
                                  name="echo")
    subscriber.start()
    stop_event.wait()
    subscriber.stop()
    publisher.stop()


def round_trip_bench(n, payload_size=None, host=BUS_HOST, port=BUS_BASE_PORT, timeout=10.0):
    """
    Time n sequential ping-pong exchanges against an echo process.

    Args:
        n (int): Number of round trips.
        payload_size (int, optional): Bytes per message; defaults to a measurement report frame.
        host (str): Interface for both servers.
        port (int): Ping server port; the echo process answers on port + 1.

    Returns:
        LatencyStats: Round-trip statistics in microseconds.
    """
    if n <= 0:
        raise EmptyStatisticsError("Round-trip benchmark needs at least one exchange")

    template = report_sized_payload()
    if payload_size is not None:
        template = (template * (payload_size // len(template) + 1))[:max(payload_size, _SEQ.size)]

    ctx = multiprocessing.get_context("spawn")
    stop_event = ctx.Event()
    echo = ctx.Process(target=_echo_main, args=(host, port, port + 1, stop_event), name="bus-echo", daemon=True)

    publisher = SocketPublisher(host, port, name="ping")
    if not publisher.start():
        raise CellfenceError(f"Cannot listen on {host}:{port}")

    reply = threading.Event()
    expected = [None]

    def on_pong(topic, payload):
        if _SEQ.unpack_from(payload, 0)[0] == expected[0]:
            reply.set()

    subscriber = SocketSubscriber([(host, port + 1, "pong")], on_pong, name="ping")
    echo.start()
    subscriber.start()
    samples = []
    try:
        if not publisher.wait_for_subscribers("ping", 1, timeout) or not subscriber.wait_connected(timeout):
            raise CellfenceError("Echo process did not connect")

        def exchange(seq):
            expected[0] = seq
            reply.clear()
            payload = _SEQ.pack(seq) + template[_SEQ.size:]
            start = time.perf_counter_ns()
            publisher.publish("ping", payload)
            if not reply.wait(1.0):
                return None
            return time.perf_counter_ns() - start

        # Warm up until the echo path is complete in both directions
        deadline = time.monotonic() + timeout
        seq = 0
        while exchange(seq) is None:
            seq += 1
            if time.monotonic() > deadline:
                raise CellfenceError("No echo received during warm-up")

        lost = 0
        for i in range(n):
            elapsed = exchange(seq + 1 + i)
            if elapsed is None:
                lost += 1
            else:
                samples.append(elapsed)
        if lost:
            logger.warning(f"{lost} of {n} round trips timed out")
    finally:
        stop_event.set()
        subscriber.stop()
        publisher.stop()
        echo.join(timeout=5.0)
        if echo.is_alive():
            echo.terminate()

    stats = LatencyStats.from_samples_ns(samples)
    logger.info(f"Round trip over {stats.count} exchanges of {len(template)} B: "
                f"mean {stats.mean:.1f} µs, stddev {stats.std:.1f} µs, p99 {stats.p99:.1f} µs")
    return stats
