import math

import numpy as np
import pytest

from cellfence.bus.inproc import InProcessBus
from cellfence.bus.wire import KIND_REPORT, TOPIC_REPORTS, decode_frame, encode_allocations
from cellfence.channel.radio import SyntheticRadio, Transmission, WidebandRadio
from cellfence.downlink.allocation import UplinkAllocation
from cellfence.errors import InvalidParameterError, RetryLaterError, StaleRangeError
from cellfence.phy.resource_grid import MsgType, SubframeGrid, UplinkMessageSpec, build_uplink_message
from cellfence.uplink.event_queue import AllocationEventQueue
from cellfence.uplink.features import (
    EULER_GAMMA,
    detection_floor_db,
    estimate_features,
    is_detected,
    measure_ports,
    peak_to_average_snr,
    upsampled_correlation,
)
from cellfence.uplink.receiver import RingBufferFrontEnd, SyntheticFrontEnd, UplinkReceiver
from cellfence.uplink.ring_buffer import CircularIqBuffer
from cellfence.utils.clock import LogicalClock

# Receiver 2 sits on the east edge; its port 1 looks back into the area
SITE_ID = 2
UE_POINT = (180.0, 100.0)


def _allocation(cell, spec, subframe):
    return UplinkAllocation.from_spec(cell, spec, subframe)


class TestRingBuffer:
    def test_read_back_across_wrap(self):
        buffer = CircularIqBuffer(10, 1000.0)
        buffer.write(np.arange(8))
        buffer.write(np.arange(8, 15))
        np.testing.assert_array_equal(buffer.read(5, 15), np.arange(5, 15))
        assert buffer.oldest_index == 5
        assert buffer.overwritten == 5

    def test_stale_and_future_ranges(self):
        buffer = CircularIqBuffer(4, 1000.0)
        buffer.write(np.ones(6))
        with pytest.raises(StaleRangeError):
            buffer.read(1, 3)
        with pytest.raises(RetryLaterError):
            buffer.read(4, 7)
        with pytest.raises(InvalidParameterError):
            buffer.read(5, 4)
        assert buffer.contains(2, 6)
        assert not buffer.contains(1, 6)

    def test_oversized_write_keeps_newest(self):
        buffer = CircularIqBuffer(4, 1000.0)
        assert buffer.write(np.arange(10)) == 10
        np.testing.assert_array_equal(buffer.read(6, 10), np.arange(6, 10))
        assert buffer.overwritten == 6

    def test_timestamps(self):
        buffer = CircularIqBuffer.for_duration(2, 1e6, base_timestamp=5.0)
        assert buffer.capacity == 2000
        buffer.write(np.zeros(1500))
        assert buffer.head_timestamp() == pytest.approx(5.0015)
        assert buffer.index_at(5.001) == 1000
        assert buffer.timestamp_of(250) == pytest.approx(5.00025)

    def test_zero_capacity(self):
        with pytest.raises(InvalidParameterError):
            CircularIqBuffer(0, 1000.0)


class TestEventQueue:
    def test_pops_in_subframe_order_when_ready(self, cell):
        queue = AllocationEventQueue()
        late = _allocation(cell, UplinkMessageSpec.pusch(2, 10, 0x41), 30)
        early = _allocation(cell, UplinkMessageSpec.pusch(2, 10, 0x40), 20)
        queue.push(late)
        queue.push(early)
        assert queue.next_subframe() == 20
        assert queue.pop_ready(19) == ([], [])
        ready, stale = queue.pop_ready(40)
        assert ready == [early, late] and stale == []
        assert queue.processed == 2

    def test_message_is_handed_out_once(self, cell):
        queue = AllocationEventQueue()
        alloc = _allocation(cell, UplinkMessageSpec.pusch(2, 10, 0x40), 20)
        assert queue.push(alloc)
        assert not queue.push(alloc)
        queue.pop_ready(20)
        assert not queue.push(alloc.stamped(99))
        assert queue.duplicates == 2
        assert len(queue) == 0

    def test_evicted_subframes_are_stale(self, cell):
        queue = AllocationEventQueue()
        old = _allocation(cell, UplinkMessageSpec.pusch(2, 10, 0x40), 5)
        fresh = _allocation(cell, UplinkMessageSpec.pusch(2, 10, 0x41), 50)
        queue.push(old)
        queue.push(fresh)
        ready, stale = queue.pop_ready(60, oldest_subframe=10)
        assert ready == [fresh] and stale == [old]
        assert queue.stale == 1

    def test_drop_before(self, cell):
        queue = AllocationEventQueue()
        for sf in (3, 4, 12):
            queue.push(_allocation(cell, UplinkMessageSpec.pusch(1, 10, 0x40 + sf), sf))
        assert [a.subframe_index for a in queue.drop_before(10)] == [3, 4]
        assert len(queue) == 1


class TestFeatures:
    @staticmethod
    def _pusch_grid(cell, amplitude=1.0, delay_s=0.0, noise_var=0.0, seed=0, payload_seed=3):
        spec = UplinkMessageSpec.pusch(6, 10, 0x40)
        grid = build_uplink_message(spec, payload_seed, cell)
        ramp = np.exp(-2j * np.pi * np.arange(grid.n_subcarriers) * 15e3 * delay_s)
        cells = grid.cells * ramp * amplitude
        if noise_var:
            rng = np.random.default_rng(seed)
            cells = cells + (rng.standard_normal(cells.shape) + 1j * rng.standard_normal(cells.shape)) * math.sqrt(
                noise_var / 2)
        return SubframeGrid(cells), spec

    def test_clean_peak_equals_element_power(self, cell):
        grid, spec = self._pusch_grid(cell, amplitude=0.1)
        est = estimate_features(grid, spec, cell)
        assert est.detected
        assert est.corr_peak_power_db == pytest.approx(-20.0, abs=1e-6)
        assert est.rms2_power_db == pytest.approx(-20.0, abs=1e-6)
        assert est.toa_offset_s == pytest.approx(0.0, abs=1e-12)
        # Noise-free: peak over mean equals the reference length
        assert est.peak_to_avg_db == pytest.approx(10 * math.log10(72), abs=1e-6)

    def test_delay_moves_the_peak(self, cell):
        grid, spec = self._pusch_grid(cell, delay_s=1e-6)
        est = estimate_features(grid, spec, cell)
        assert est.toa_offset_s == pytest.approx(1e-6, abs=20e-9)

    def test_snr_estimates(self, cell):
        grid, spec = self._pusch_grid(cell, noise_var=0.1, seed=5)
        est = estimate_features(grid, spec, cell)
        assert est.detected
        assert est.peak_to_avg_snr_db == pytest.approx(10.0, abs=1.5)
        assert est.smoothed_snr_db == pytest.approx(10.0, abs=2.5)

    def test_noise_only_is_rarely_detected(self, cell):
        spec = UplinkMessageSpec.pusch(6, 10, 0x40)
        detections = 0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            cells = rng.standard_normal((14, cell.n_subcarriers)) + 1j * rng.standard_normal((14, cell.n_subcarriers))
            est = estimate_features(SubframeGrid(cells), spec, cell)
            detections += est.detected
            # noise-only peaks sit above 3 dB
            assert est.peak_to_avg_db > 3.0
        assert detections <= 5

    def test_detection_floor(self):
        assert detection_floor_db(72, 3.0) == pytest.approx(10 * math.log10(math.log(72) + EULER_GAMMA) + 3.0)
        assert detection_floor_db(144, 0.0) > detection_floor_db(72, 0.0)

    @pytest.mark.parametrize("length", [12, 72, 300, 839])
    def test_detection_boundary(self, length):
        floor = detection_floor_db(length, 3.0)
        assert is_detected(10 ** ((floor + 0.01) / 10), length, 3.0)
        assert not is_detected(10 ** ((floor - 0.01) / 10), length, 3.0)

    def test_prach_floor(self):
        assert detection_floor_db(839, 3.0) == pytest.approx(11.64, abs=0.01)
        assert not is_detected(10 ** 0.6, 839, 3.0)
        assert is_detected(10 ** 0.6, 12, 0.0)

    def test_features_ignore_the_payload(self, cell):
        first = estimate_features(*self._pusch_grid(cell, noise_var=0.1, seed=4, payload_seed=3), cell)
        second = estimate_features(*self._pusch_grid(cell, noise_var=0.1, seed=4, payload_seed=9), cell)
        for name in ("corr_peak_power_db", "peak_to_avg_snr_db", "smoothed_snr_db", "toa_offset_s"):
            assert getattr(first, name) == pytest.approx(getattr(second, name), abs=1e-9)
        assert first.rms2_power_db == pytest.approx(second.rms2_power_db, abs=0.5)

    def test_peak_to_average_snr_inverts_the_profile(self):
        length, signal, noise = 100, 2.0, 1.0
        par = (signal + noise / length) / ((signal + noise) / length)
        assert peak_to_average_snr(par, length) == pytest.approx(2.0)
        assert peak_to_average_snr(par, length, n_coherent=2) == pytest.approx(1.0)
        assert peak_to_average_snr(length, length) == pytest.approx(1e6)
        assert peak_to_average_snr(0.5, length) == pytest.approx(1e-6)

    def test_upsampled_correlation_keeps_energy(self):
        h = np.exp(2j * np.pi * np.random.default_rng(2).random(24))
        corr = upsampled_correlation(h, 8)
        assert len(corr) == 192
        assert np.sum(np.abs(corr) ** 2) == pytest.approx(8 / len(h) * np.sum(np.abs(h) ** 2))
        with pytest.raises(InvalidParameterError):
            upsampled_correlation(h, 0)

    def test_measure_ports_needs_two_grids(self, cell):
        grid, spec = self._pusch_grid(cell)
        with pytest.raises(InvalidParameterError):
            measure_ports([grid], spec, cell)
        first, second = measure_ports([grid, grid], spec, cell)
        assert first == second and first.valid


@pytest.fixture
def receiver_setup(scenario):
    cell = scenario.cells[0]
    site = scenario.receiver(SITE_ID)
    ue = scenario.ue_at(UE_POINT, tx_power_dbm=10.0)
    spec = UplinkMessageSpec.pusch(4, 12, 0x40)
    alloc = _allocation(cell, spec, 25)
    tx = Transmission(alloc.message_id, spec, cell, ue, 9, 25)
    bus = InProcessBus(strict=True)
    reports = []
    bus.subscribe(TOPIC_REPORTS, lambda topic, payload: reports.append(decode_frame(payload)))
    return cell, site, alloc, tx, bus, reports


def test_synthetic_receiver_reports_once(scenario, receiver_setup):
    cell, site, alloc, tx, bus, reports = receiver_setup
    radio = SyntheticRadio(scenario, site, run_seed=1, interference_probability=0.0)
    front_end = SyntheticFrontEnd(radio, lambda key: tx if key == alloc.message_id else None)
    clock = LogicalClock(24_000_000)
    receiver = UplinkReceiver(site, scenario.cells, front_end, bus, clock)

    receiver.on_downlink("downlink", encode_allocations([alloc]))
    receiver.on_downlink("downlink", encode_allocations([alloc]))
    assert receiver.poll(24) == 0
    assert receiver.poll(25) == 2
    assert receiver.poll(26) == 0

    assert len(reports) == 1
    kind, report = reports[0]
    assert kind == KIND_REPORT
    assert report.message_id == alloc.message_id
    assert report.receiver_id == SITE_ID
    inward = report.ports[1]
    assert inward.valid
    assert inward.peak_to_avg_snr_db > 10.0
    status = receiver.get_status()
    assert status["duplicate_allocations"] == 2
    assert status["reports_published"] == 1
    assert status["incomplete_reports"] == 0


def test_empty_allocation_reports_absent_ports(scenario, receiver_setup):
    cell, site, alloc, tx, bus, reports = receiver_setup
    radio = SyntheticRadio(scenario, site, run_seed=1, interference_probability=0.0)
    receiver = UplinkReceiver(site, scenario.cells, SyntheticFrontEnd(radio, lambda key: None), bus, LogicalClock())
    receiver.accept(alloc)
    receiver.poll(30)
    _, report = reports[0]
    assert not report.ports[0].valid and not report.ports[1].valid


def test_unknown_cell_and_bad_frames_are_counted(scenario, receiver_setup):
    cell, site, alloc, tx, bus, reports = receiver_setup
    radio = SyntheticRadio(scenario, site, run_seed=1)
    receiver = UplinkReceiver(site, scenario.cells[1:], SyntheticFrontEnd(radio, lambda key: None), bus, LogicalClock())
    assert not receiver.accept(alloc)
    receiver.on_downlink("downlink", b"\x07\x01")
    status = receiver.get_status()
    assert status["unknown_cell"] == 1
    assert status["malformed"] == 1


def test_evicted_subframe_is_lost(scenario, receiver_setup):
    cell, site, alloc, tx, bus, reports = receiver_setup
    radio = SyntheticRadio(scenario, site, run_seed=1)
    front_end = SyntheticFrontEnd(radio, lambda key: tx, retention_subframes=8)
    receiver = UplinkReceiver(site, scenario.cells, front_end, bus, LogicalClock())
    receiver.accept(alloc)
    receiver.poll(100)
    assert reports == []
    assert receiver.get_status()["lost_measurements"] == 2


def test_missing_bus_counts_lost_reports(scenario, receiver_setup):
    cell, site, alloc, tx, bus, reports = receiver_setup
    radio = SyntheticRadio(scenario, site, run_seed=1)
    receiver = UplinkReceiver(site, scenario.cells, SyntheticFrontEnd(radio, lambda key: tx), None, LogicalClock())
    receiver.accept(alloc)
    receiver.poll(25)
    assert receiver.get_status()["lost_publications"] == 1


def test_wideband_ring_buffer_path(scenario, receiver_setup):
    cell, site, alloc, tx, bus, reports = receiver_setup
    front_end = RingBufferFrontEnd.for_bands([cell.band_id], capacity_ms=4)
    radios = [WidebandRadio(scenario, site, port, run_seed=1) for port in range(2)]
    receiver = UplinkReceiver(site, scenario.cells, front_end, bus, LogicalClock())
    receiver.accept(alloc)

    for subframe in range(23, 26):
        for port, radio in enumerate(radios):
            if subframe == 23:
                # Buffers start at absolute sample 0
                front_end.ingest(cell.band_id, port, np.zeros(23 * front_end.samples_per_subframe))
            front_end.ingest(cell.band_id, port, radio.render_subframe(subframe, [tx]))
        receiver.poll()

    assert front_end.available_subframe(0) == 25
    assert len(reports) == 1
    _, report = reports[0]
    assert report.ports[1].valid
    assert report.ports[1].toa_offset_s == pytest.approx(18.0 / 299792458.0, abs=60e-9)
