import numpy as np
import pandas as pd
import pytest

from cellfence.bus.wire import encode_pdsch_notice, encode_report
from cellfence.central.aggregator import Aggregator, SlotStatus
from cellfence.central.latency import (
    AGGREGATION_WAIT,
    DL_PUBLISH,
    INFERENCE,
    REPORT_HOP,
    LatencyRecorder,
    e2e_stage,
)
from cellfence.central.records import CONNECTION_MSG_TYPE, ConnectionRecord
from cellfence.central.relative_features import (
    build_features,
    feature_groups,
    feature_names,
    mask_receivers,
    n_features,
)
from cellfence.central.unit import DECISION_COLUMNS, CentralUnit
from cellfence.downlink.allocation import PdschNotice
from cellfence.errors import EmptyStatisticsError, ModelDimensionError
from cellfence.model.mlp import MlpModel
from cellfence.phy.resource_grid import MsgType
from cellfence.uplink.report import MeasurementReport, PortFeatures
from cellfence.utils.clock import LogicalClock
from cellfence.utils.stats import LatencyStats, format_table

CONNECTION = (19575, 101, 0x40)
MS = 1_000_000


def _report(receiver_id, msg_type=MsgType.PUSCH, subframe=20, powers=(-40.0, -50.0), snrs=(20.0, 10.0),
            connection=CONNECTION, origin_ns=0, published_ns=0):
    ports = tuple(PortFeatures(True, p, p, s, s, 0.0) if p is not None else PortFeatures.absent()
                  for p, s in zip(powers, snrs))
    return MeasurementReport((*connection, int(msg_type), subframe), receiver_id, ports,
                             origin_ns=origin_ns, published_ns=published_ns)


class TestAggregator:
    def test_closes_when_everyone_reported(self):
        closed = []
        agg = Aggregator([0, 1, 2], closed.append, timeout_ms=2.0)
        for rid in (0, 1):
            assert agg.add_report(_report(rid), rid * 100) == []
        done = agg.add_report(_report(2), 300)
        assert len(done) == 1 and closed == done
        slot = closed[0]
        assert slot.status == SlotStatus.CLOSED and not slot.timed_out
        assert slot.opened_ns == 0 and slot.closed_ns == 300
        assert sorted(slot.reports) == [0, 1, 2]

    def test_deadline_closes_partial_slot(self):
        closed = []
        agg = Aggregator([0, 1, 2], closed.append, timeout_ms=2.0)
        agg.add_report(_report(0), 0)
        assert agg.expire(2 * MS - 1) == []
        assert len(agg.expire(2 * MS)) == 1
        assert closed[0].timed_out and list(closed[0].reports) == [0]
        agg.add_report(_report(1), 3 * MS)
        status = agg.get_status()
        assert status["late"] == 1
        assert status["closed_timeout"] == 1
        assert status["missing_reports"] == 2

    def test_duplicates_and_unknown_receivers(self):
        agg = Aggregator([0, 1], lambda slot: None)
        agg.add_report(_report(0), 0)
        agg.add_report(_report(0), 1)
        agg.add_report(_report(7), 2)
        status = agg.get_status()
        assert status["duplicates"] == 1
        assert status["unknown_receiver"] == 1
        assert status["open"] == 1

    def test_each_message_closes_once_under_random_delays(self):
        rng = np.random.default_rng(11)
        receivers = list(range(6))
        closed = []
        agg = Aggregator(receivers, closed.append, timeout_ms=2.0)
        arrivals = []
        for sf in range(300):
            for rid in receivers:
                if rng.random() < 0.1:
                    continue
                arrivals.append((sf * MS + int(rng.exponential(0.8 * MS)), sf, rid))
        arrivals.sort()
        reported = {sf for _, sf, _ in arrivals}
        for t, sf, rid in arrivals:
            agg.add_report(_report(rid, subframe=sf), t)
            # Bus redelivery of the same report must not reopen anything
            if rng.random() < 0.05:
                agg.add_report(_report(rid, subframe=sf), t + 1)
        agg.flush(arrivals[-1][0] + 10 * MS)

        ids = [slot.message_id[4] for slot in closed]
        assert len(ids) == len(set(ids))
        assert set(ids) == reported
        assert all(len(slot.reports) <= 6 for slot in closed)
        for slot in closed:
            if not slot.timed_out:
                assert slot.closed_ns - slot.opened_ns < 2 * MS

    def test_handler_errors_do_not_leak(self):
        def broken(slot):
            raise RuntimeError("boom")

        agg = Aggregator([0], broken)
        assert len(agg.add_report(_report(0), 0)) == 1


class TestRelativeFeatures:
    def test_dimension(self):
        assert n_features(6) == 141
        assert len(feature_names(list(range(6)))) == 141
        assert n_features(2) == 17

    def test_common_offset_cancels(self):
        reports = {rid: _report(rid, powers=(-40.0 - rid, -52.0 + rid)) for rid in range(3)}
        shifted = {rid: MeasurementReport(r.message_id, rid, tuple(p.shifted(13.5) for p in r.ports))
                   for rid, r in reports.items()}
        a = build_features(reports, [0, 1, 2], MsgType.PUSCH)
        b = build_features(shifted, [0, 1, 2], MsgType.PUSCH)
        np.testing.assert_allclose(a.values, b.values)
        np.testing.assert_array_equal(a.mask, b.mask)

    def test_pairs_are_antisymmetric(self):
        reports = {rid: _report(rid, powers=(-40.0 - 3 * rid, -55.0)) for rid in range(2)}
        vector = build_features(reports, [0, 1], MsgType.PRACH)
        assert vector.pair("corr_peak_power_db", 0, 2) == pytest.approx(3.0)
        assert vector.pair("corr_peak_power_db", 2, 0) == pytest.approx(-3.0)
        assert vector.pair("peak_to_avg_snr_db", 1, 1) == 0.0
        assert list(vector.values[-3:]) == [1.0, 0.0, 0.0]

    def test_missing_receiver_is_masked(self):
        reports = {0: _report(0), 2: _report(2, powers=(-45.0, None))}
        vector = build_features(reports, [0, 1, 2], MsgType.PUCCH)
        assert vector.n_valid_ports == 3
        assert vector.usable
        assert vector.pair("corr_peak_power_db", 0, 2) is None
        assert vector.pair("corr_peak_power_db", 0, 4) == pytest.approx(5.0)
        assert np.all(vector.values[~vector.mask] == 0.0)

    def test_single_port_is_unusable(self):
        vector = build_features({1: _report(1, powers=(None, -40.0))}, [0, 1], MsgType.PUSCH)
        assert vector.n_valid_ports == 1
        assert not vector.usable

    def test_receiver_groups_cover_its_features(self):
        reports = {rid: _report(rid) for rid in range(3)}
        vector = build_features(reports, [0, 1, 2], MsgType.PUSCH)
        values, masks = mask_receivers(vector.values[None, :], vector.mask[None, :], [1], 3)
        without = build_features({0: reports[0], 2: reports[2]}, [0, 1, 2], MsgType.PUSCH)
        np.testing.assert_array_equal(masks[0], without.mask)
        np.testing.assert_allclose(values[0], without.values)
        groups = feature_groups(3)
        assert len(groups) == 3
        assert all(len(g) == 2 * 9 + 1 for g in groups)


def _unit(receiver_ids=(0, 1), **kwargs):
    clock = LogicalClock()
    return CentralUnit(list(receiver_ids), clock=clock, **kwargs), clock


def _feed_connection(unit, clock, subframes=((MsgType.PRACH, 10), (MsgType.PUSCH, 20), (MsgType.PUCCH, 30))):
    for msg_type, sf in subframes:
        clock.set_ns((sf + 1) * MS + 200_000)
        for rid in unit.receiver_ids:
            unit.on_report("reports", encode_report(_report(rid, msg_type, sf, origin_ns=(sf + 1) * MS)))


class TestCentralUnit:
    def test_connection_decided_when_all_messages_scored(self):
        unit, clock = _unit()
        _feed_connection(unit, clock)
        assert len(unit.decisions) == 3
        assert not any(d.final for d in unit.decisions)

        clock.set_ns(32 * MS)
        notice = PdschNotice(*CONNECTION, 31, end_of_connection=True, expected_messages=3)
        unit.on_downlink("downlink", encode_pdsch_notice(notice))
        final = unit.decisions[-1]
        assert final.final
        assert final.message_id == (*CONNECTION, CONNECTION_MSG_TYPE, 31)
        assert final.probability == pytest.approx(0.5)
        assert final.n_reports == 3
        assert unit.get_status()["connections_decided"] == 1
        assert unit.get_status()["open_connections"] == 0

    def test_message_latency_starts_at_subframe_end(self):
        unit, clock = _unit()
        _feed_connection(unit, clock, ((MsgType.PUSCH, 20),))
        assert unit.decisions[0].latency_ns == 200_000
        assert unit.latency.count(e2e_stage(MsgType.PUSCH)) == 1
        assert unit.latency.count(AGGREGATION_WAIT) == 1
        assert unit.latency.count(INFERENCE) == 1

    def test_grace_period_finalizes_incomplete_connection(self):
        unit, clock = _unit(grace_ms=6.0)
        _feed_connection(unit, clock, ((MsgType.PRACH, 10),))
        unit.handle_end_notice(PdschNotice(*CONNECTION, 25, end_of_connection=True, expected_messages=3), 26 * MS)
        unit.tick(26 * MS + 5 * MS)
        assert not unit.decisions[-1].final
        unit.tick(26 * MS + 6 * MS)
        assert unit.decisions[-1].final
        assert unit.decisions[-1].n_reports == 1

    def test_messages_after_the_decision_are_late(self):
        unit, clock = _unit()
        _feed_connection(unit, clock, ((MsgType.PRACH, 10),))
        unit.handle_end_notice(PdschNotice(*CONNECTION, 12, end_of_connection=True, expected_messages=1), 13 * MS)
        _feed_connection(unit, clock, ((MsgType.PUSCH, 20),))
        status = unit.get_status()
        assert status["late_messages"] == 1
        assert status["connections_decided"] == 1

    def test_partial_slot_times_out(self):
        unit, clock = _unit(receiver_ids=(0, 1, 2), timeout_ms=2.0)
        clock.set_ns(5 * MS)
        unit.handle_report(_report(0, subframe=4), 5 * MS)
        unit.tick(6 * MS)
        assert unit.decisions == []
        unit.tick(7 * MS)
        assert len(unit.decisions) == 1
        assert unit.decisions[0].n_reports == 1
        assert unit.get_status()["unusable_messages"] == 0

    def test_unusable_message_scores_neutral(self):
        unit, clock = _unit()
        unit.handle_report(_report(0, powers=(-40.0, None)), 0)
        unit.handle_report(_report(1, powers=(None, None)), 0)
        assert unit.decisions[0].score == 0.5
        assert unit.get_status()["unusable_messages"] == 1

    def test_model_size_must_match_receivers(self):
        with pytest.raises(ModelDimensionError):
            CentralUnit([0, 1], model=MlpModel(10), clock=LogicalClock())

    def test_model_scores_messages(self):
        model = MlpModel(n_features(2), 8, 4, rng=np.random.default_rng(3))
        unit, clock = _unit(model=model)
        _feed_connection(unit, clock, ((MsgType.PUSCH, 20),))
        reports = {rid: _report(rid, MsgType.PUSCH, 20) for rid in (0, 1)}
        vector = build_features(reports, [0, 1], MsgType.PUSCH)
        assert unit.decisions[0].score == pytest.approx(model.predict_one(vector.values, vector.mask))

    def test_malformed_frames_are_counted(self):
        unit, _ = _unit()
        unit.on_report("reports", b"\x01\x03\x00")
        assert unit.get_status()["malformed"] == 1

    def test_decision_log(self, tmp_path):
        path = tmp_path / "decisions.csv"
        unit, clock = _unit(decision_log=str(path))
        _feed_connection(unit, clock)
        unit.flush(40 * MS)
        unit.close()
        frame = pd.read_csv(path)
        assert list(frame.columns) == DECISION_COLUMNS
        assert len(frame) == 4
        assert frame["final"].tolist() == [0, 0, 0, 1]

    def test_threaded_worker_drains_on_stop(self):
        unit, clock = _unit()
        unit.start()
        try:
            _feed_connection(unit, clock)
        finally:
            unit.stop()
        assert [d.final for d in unit.decisions] == [False, False, False, True]


def test_connection_record_type_means():
    record = ConnectionRecord(*CONNECTION)
    record.add_score(MsgType.PUSCH, 0.9)
    record.add_score(MsgType.PUSCH, 0.7)
    np.testing.assert_allclose(record.type_means(), [0.5, 0.8, 0.5])
    with pytest.raises(ValueError):
        record.add_score(MsgType.PRACH, 1.5)


class TestLatency:
    def test_summary_follows_stage_order(self):
        recorder = LatencyRecorder()
        recorder.record(INFERENCE, 5_000)
        recorder.record(DL_PUBLISH, 1_000)
        recorder.record(DL_PUBLISH, 3_000)
        recorder.record("custom", 2_000)
        summary = recorder.summary()
        assert list(summary) == [DL_PUBLISH, INFERENCE, "custom"]
        assert summary[DL_PUBLISH].mean == pytest.approx(2.0)
        assert summary[DL_PUBLISH].count == 2

        other = LatencyRecorder()
        other.record(REPORT_HOP, 7_000)
        recorder.merge(other)
        assert recorder.count(REPORT_HOP) == 1
        assert len(recorder.to_frame()) == 5
        assert list(recorder.summary_table().columns) == ["Operation", "Mean", "StdDev", "Count"]

    def test_stats(self):
        stats = LatencyStats.from_samples_ns([10_000])
        assert stats.std == 0.0 and stats.p99 == 10.0
        with pytest.raises(EmptyStatisticsError):
            LatencyStats.from_samples_ns([])
        assert "10µs" in format_table({"Hop": stats})

    def test_empty_recorder_formats(self):
        assert LatencyRecorder().format() == "(no latency samples)"
