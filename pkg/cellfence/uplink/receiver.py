"""
Uplink receiver: measures every allocation forwarded by the downlink
controller on both antenna ports and publishes one report per message.

Each port has its own PortWorker with its own allocation queue; the two
workers share nothing but the ReportAssembler that joins their results.
"""

import logging
import threading
import time

from cellfence.bus.wire import (
    KIND_ALLOCATION,
    KIND_PDSCH_NOTICE,
    TOPIC_REPORTS,
    decode_frame,
    encode_report,
)
from cellfence.channel.propagation import frequency_shift
from cellfence.channel.radio import allocation_mask
from cellfence.config import DETECTION_THRESHOLD_DB, RING_CAPACITY_MS, UPSAMPLE_FACTOR, WIDEBAND_FFT_SIZE
from cellfence.errors import CellfenceError, RetryLaterError, StaleRangeError
from cellfence.phy.ofdm import ofdm_demodulate, prach_demodulate, sample_rate_for
from cellfence.phy.resource_grid import MsgType, PrachGrid, SubframeGrid
from cellfence.uplink.event_queue import AllocationEventQueue
from cellfence.uplink.features import measure_features
from cellfence.uplink.report import MeasurementReport, PortFeatures
from cellfence.uplink.ring_buffer import CircularIqBuffer
from cellfence.utils.clock import NS_PER_SUBFRAME

logger = logging.getLogger("UplinkReceiver")

N_PORTS = 2


def _masked(grid, spec, cell):
    """Keep only the allocated bins of a demodulated grid."""
    mask = allocation_mask(spec, cell)
    if isinstance(grid, PrachGrid):
        return grid
    return SubframeGrid(grid.cells * mask, grid.subframe_index, grid.sample_rate)


class RingBufferFrontEnd:
    """
    Wideband IQ path: one CircularIqBuffer per (band, port), sample 0 at the
    start of subframe 0, each band centered on its nominal uplink frequency.

    Args:
        buffers (dict): (BandId, port) -> CircularIqBuffer.
        fft_size (int): Demodulation FFT size; 8192 at 122.88 Msps.
    """

    def __init__(self, buffers, fft_size=WIDEBAND_FFT_SIZE):
        self.buffers = buffers
        self.fft_size = fft_size
        self.sample_rate = sample_rate_for(fft_size)
        self.samples_per_subframe = int(round(self.sample_rate * 1e-3))

    @classmethod
    def for_bands(cls, bands, fft_size=WIDEBAND_FFT_SIZE, capacity_ms=RING_CAPACITY_MS):
        rate = sample_rate_for(fft_size)
        buffers = {(band, port): CircularIqBuffer.for_duration(capacity_ms, rate)
                   for band in bands for port in range(N_PORTS)}
        return cls(buffers, fft_size)

    def ingest(self, band_id, port, samples):
        return self.buffers[(band_id, port)].write(samples)

    def _port_buffers(self, port):
        return [b for (_, p), b in self.buffers.items() if p == port]

    def available_subframe(self, port):
        heads = [b.write_head for b in self._port_buffers(port)]
        return (min(heads) // self.samples_per_subframe) - 1 if heads else -1

    def oldest_subframe(self, port):
        oldest = [b.oldest_index for b in self._port_buffers(port)]
        if not oldest:
            return 0
        return -(-max(oldest) // self.samples_per_subframe)

    def extract_allocation(self, allocation, cell, port):
        """
        Demodulate the allocated bins of one subframe.

        Raises:
            StaleRangeError: The subframe was overwritten.
            RetryLaterError: The subframe is not fully ingested.
        """
        buffer = self.buffers[(cell.band_id, port)]
        start = allocation.subframe_index * self.samples_per_subframe
        samples = buffer.read(start, start + self.samples_per_subframe)
        # Absolute indices keep the mixer phase continuous across subframes
        centered = frequency_shift(samples, -cell.center_offset_hz, self.sample_rate, start)
        spec = allocation.to_spec()
        if spec.msg_type == MsgType.PRACH:
            return prach_demodulate(centered, spec.prb_offset, cell.n_prb_ul, self.fft_size, allocation.subframe_index)
        grid = ofdm_demodulate(centered, cell.n_subcarriers, self.fft_size, allocation.subframe_index)
        return _masked(grid, spec, cell)


class SyntheticFrontEnd:
    """
    Resource-element path backed by a SyntheticRadio.

    Args:
        radio (SyntheticRadio): Radio of this receiver site.
        lookup: Callable message_id -> Transmission or None (nothing sent there).
        clock: Optional clock with current_subframe(); without it the driver calls advance().
        retention_subframes (int): Subframes that stay measurable, like the ring buffer.
    """

    def __init__(self, radio, lookup, clock=None, retention_subframes=RING_CAPACITY_MS):
        self.radio = radio
        self.lookup = lookup
        self.clock = clock
        self.retention_subframes = retention_subframes
        self._available = -1

    def advance(self, subframe):
        self._available = max(self._available, int(subframe))

    def available_subframe(self, port=0):
        if self.clock is not None:
            return self.clock.current_subframe() - 1
        return self._available

    def oldest_subframe(self, port=0):
        return self.available_subframe(port) - self.retention_subframes + 1

    def extract_allocation(self, allocation, cell, port):
        if allocation.subframe_index > self.available_subframe(port):
            raise RetryLaterError(f"Subframe {allocation.subframe_index} not received yet")
        if allocation.subframe_index < self.oldest_subframe(port):
            raise StaleRangeError(f"Subframe {allocation.subframe_index} no longer retained")
        return self.radio.observe(allocation.to_spec(), cell, allocation.subframe_index,
                                  allocation.message_id, self.lookup(allocation.message_id), port)


class ReportAssembler:
    """Joins the results of both port workers into one report per message."""

    def __init__(self, receiver_id, publish, clock):
        self.receiver_id = receiver_id
        self.publish = publish
        self.clock = clock
        self._partial = {}
        self._lock = threading.Lock()

    def add(self, allocation, port, features, alloc_rx_ns, measure_start_ns):
        key = allocation.message_id
        with self._lock:
            entry = self._partial.setdefault(key, {"ports": {}, "start": measure_start_ns})
            entry["ports"][port] = features
            entry["start"] = min(entry["start"], measure_start_ns)
            if len(entry["ports"]) < N_PORTS:
                return None
            del self._partial[key]

        subframe_end_ns = (allocation.subframe_index + 1) * NS_PER_SUBFRAME
        report = MeasurementReport(
            message_id=key,
            receiver_id=self.receiver_id,
            ports=(entry["ports"][0], entry["ports"][1]),
            origin_ns=max(allocation.published_ns, subframe_end_ns),
            alloc_rx_ns=alloc_rx_ns,
            measure_start_ns=entry["start"],
            measured_at_ns=self.clock.now_ns(),
        )
        self.publish(report)
        return report

    def discard(self, message_id):
        with self._lock:
            return self._partial.pop(message_id, None) is not None

    @property
    def incomplete(self):
        with self._lock:
            return len(self._partial)


class PortWorker:
    """Measures queued allocations for one antenna port."""

    def __init__(self, port, front_end, cells, assembler, clock, rx_times,
                 upsample=UPSAMPLE_FACTOR, threshold_db=DETECTION_THRESHOLD_DB, name="rx"):
        self.port = port
        self.front_end = front_end
        self.cells = cells
        self.assembler = assembler
        self.clock = clock
        self.rx_times = rx_times
        self.upsample = upsample
        self.threshold_db = threshold_db
        self.name = f"{name}-port{port}"
        self.queue = AllocationEventQueue()
        self.measured = 0
        self.lost = 0
        self.running = False
        self.thread = None

    def process_ready(self):
        """Measure every allocation whose subframe is available; returns the number measured."""
        available = self.front_end.available_subframe(self.port)
        ready, stale = self.queue.pop_ready(available, self.front_end.oldest_subframe(self.port))
        for allocation in stale:
            self.lost += 1
            self.assembler.discard(allocation.message_id)
        for allocation in ready:
            self._measure(allocation)
        return len(ready)

    def _measure(self, allocation):
        cell = self.cells[allocation.cell_id]
        start_ns = self.clock.now_ns()
        try:
            grid = self.front_end.extract_allocation(allocation, cell, self.port)
            features = measure_features(grid, allocation.to_spec(), cell, self.upsample, self.threshold_db)
        except RetryLaterError:
            # Popped too early; requeueing would break at-most-once, so report it absent
            logger.warning(f"{self.name}: subframe {allocation.subframe_index} incomplete at measurement")
            features = PortFeatures.absent()
        except StaleRangeError as e:
            self.lost += 1
            self.assembler.discard(allocation.message_id)
            logger.warning(f"{self.name}: measurement lost: {str(e)}")
            return
        except CellfenceError as e:
            logger.error(f"{self.name}: cannot measure {allocation.message_id}: {str(e)}")
            features = PortFeatures.absent()
        self.measured += 1
        self.assembler.add(allocation, self.port, features, self.rx_times.get(allocation.message_id, 0), start_ns)

    def start(self):
        if self.thread and self.thread.is_alive():
            logger.warning(f"{self.name} already running")
            return
        self.running = True
        self.thread = threading.Thread(target=self._run, name=self.name, daemon=True)
        self.thread.start()
        logger.info(f"{self.name} worker started")

    def _run(self):
        while self.running:
            try:
                self.queue.wait(0.0005)
                if self.process_ready() == 0:
                    time.sleep(0.0001)
            except Exception as e:
                logger.error(f"{self.name} worker error: {str(e)}")
                time.sleep(0.001)

    def stop(self):
        self.running = False
        self.queue.wake()
        if self.thread:
            self.thread.join(timeout=2.0)
            self.thread = None


class UplinkReceiver:
    """
    Args:
        site (ReceiverSite): Where this receiver is and how its ports point.
        cells (list): CellConfig of every monitored cell.
        front_end: RingBufferFrontEnd or SyntheticFrontEnd.
        bus: Object with publish(topic, payload); None drops every report.
        clock: Object with now_ns().
    """

    def __init__(self, site, cells, front_end, bus, clock,
                 upsample=UPSAMPLE_FACTOR, threshold_db=DETECTION_THRESHOLD_DB):
        self.site = site
        self.receiver_id = site.receiver_id
        self.cells = {cell.cell_id: cell for cell in cells}
        self.front_end = front_end
        self.bus = bus
        self.clock = clock
        self.rx_times = {}
        self.assembler = ReportAssembler(self.receiver_id, self.publish_report, clock)
        self.workers = [
            PortWorker(port, front_end, self.cells, self.assembler, clock, self.rx_times,
                       upsample, threshold_db, name=f"rx{self.receiver_id}")
            for port in range(N_PORTS)
        ]
        self.allocations_received = 0
        self.unknown_cell = 0
        self.malformed = 0
        self.reports_published = 0
        self.lost_publications = 0

    def on_downlink(self, topic, payload):
        """Bus callback for the downlink topic."""
        now = self.clock.now_ns()
        try:
            kind, obj = decode_frame(payload)
        except CellfenceError as e:
            self.malformed += 1
            logger.warning(f"Receiver {self.receiver_id} dropped a frame: {str(e)}")
            return
        if kind == KIND_ALLOCATION:
            allocations = obj
        elif kind == KIND_PDSCH_NOTICE and obj.pucch is not None:
            allocations = [obj.pucch]
        else:
            return
        for allocation in allocations:
            self.accept(allocation, now)

    def accept(self, allocation, rx_ns=None):
        if allocation.cell_id not in self.cells:
            self.unknown_cell += 1
            return False
        self.allocations_received += 1
        self.rx_times.setdefault(allocation.message_id, self.clock.now_ns() if rx_ns is None else rx_ns)
        if len(self.rx_times) > 65536:
            # Oldest entries go first; dicts keep insertion order
            for key in list(self.rx_times)[:16384]:
                del self.rx_times[key]
        for worker in self.workers:
            worker.queue.push(allocation)
        return True

    def poll(self, available_subframe=None):
        """Synchronous processing for in-process runs; returns the number of measurements."""
        if available_subframe is not None and hasattr(self.front_end, "advance"):
            self.front_end.advance(available_subframe)
        return sum(worker.process_ready() for worker in self.workers)

    def publish_report(self, report):
        stamped = MeasurementReport(report.message_id, report.receiver_id, report.ports, report.origin_ns,
                                    report.alloc_rx_ns, report.measure_start_ns, report.measured_at_ns,
                                    self.clock.now_ns())
        if self.bus is None:
            self.lost_publications += 1
            return False
        try:
            receivers = self.bus.publish(TOPIC_REPORTS, encode_report(stamped))
        except Exception as e:
            self.lost_publications += 1
            logger.warning(f"Receiver {self.receiver_id} lost a report: {str(e)}")
            return False
        if receivers == 0:
            self.lost_publications += 1
            return False
        self.reports_published += 1
        return True

    def start(self):
        for worker in self.workers:
            worker.start()

    def stop(self):
        for worker in self.workers:
            worker.stop()

    def get_status(self):
        return {
            "receiver_id": self.receiver_id,
            "allocations_received": self.allocations_received,
            "unknown_cell": self.unknown_cell,
            "malformed": self.malformed,
            "measured": [w.measured for w in self.workers],
            "lost_measurements": sum(w.lost for w in self.workers),
            "stale_allocations": sum(w.queue.stale for w in self.workers),
            "duplicate_allocations": sum(w.queue.duplicates for w in self.workers),
            "incomplete_reports": self.assembler.incomplete,
            "reports_published": self.reports_published,
            "lost_publications": self.lost_publications,
            "queued": [len(w.queue) for w in self.workers],
        }
