import numpy as np
import pytest

from cellfence.bus.inproc import InProcessBus
from cellfence.bus.wire import KIND_ALLOCATION, KIND_PDSCH_NOTICE, TOPIC_DOWNLINK, decode_frame
from cellfence.central.latency import DL_PUBLISH, LatencyRecorder
from cellfence.downlink.allocation import UplinkAllocation
from cellfence.downlink.controller import DownlinkController
from cellfence.downlink.scheduler import FIRST_RNTI, CellScheduler, UplinkResourceMap, run_connection
from cellfence.downlink.state_machine import ConnectionState, ConnectionStateMachine
from cellfence.errors import IllegalTransitionError
from cellfence.phy.resource_grid import MsgType, UplinkMessageSpec
from cellfence.utils.clock import LogicalClock


def test_state_machine_happy_path():
    sm = ConnectionStateMachine(0x3D, (19575, 101))
    sm.record("prach", 1)
    sm.record("rar", 5)
    sm.record("msg3", 11)
    sm.record("pdsch", 16)
    sm.record("pdsch", 17)
    sm.record("pucch", 20)
    sm.record("pucch", 21)
    sm.record("complete", 22)
    assert sm.complete
    assert sm.n_pucch == 2


@pytest.mark.parametrize("events", [
    [("rar", 5)],
    [("prach", 1), ("rar", 5), ("msg3", 10)],
    [("prach", 1), ("rar", 5), ("msg3", 11), ("pucch", 15)],
    [("prach", 1), ("rar", 5), ("msg3", 11), ("pdsch", 16), ("pucch", 21)],
    [("prach", 1), ("rar", 5), ("msg3", 11), ("pdsch", 16), ("complete", 17)],
    [("prach", 1), ("rar", 5), ("msg3", 11), ("pdsch", 16), ("pdsch", 17), ("pdsch", 18)],
    [("prach", 5), ("rar", 3)],
])
def test_state_machine_rejects_illegal_sequences(events):
    sm = ConnectionStateMachine(0x3D, (19575, 101))
    with pytest.raises(IllegalTransitionError):
        for name, subframe in events:
            sm.record(name, subframe)


def test_connection_timeline(cell):
    rng = np.random.default_rng(4)
    sm, events = run_connection("ue", cell, 0, rng, 0x3D)
    kinds = [e.kind for e in events]
    assert kinds[0] == "prach_tx"
    assert kinds[-1] == "end"
    assert sm.state == ConnectionState.COMPLETE

    prach = events[0]
    assert prach.subframe % 10 in cell.prach_subframes
    rar = next(e for e in events if e.kind == "rar")
    assert 3 <= rar.subframe - prach.subframe <= 13
    retro, grant = rar.allocations
    assert retro.retrospective and retro.msg_type == MsgType.PRACH and retro.subframe_index == prach.subframe
    assert grant.msg_type == MsgType.PUSCH and grant.subframe_index == rar.subframe + 6
    assert 1 <= grant.n_prb <= 6

    pdsch = [e for e in events if e.kind == "pdsch"]
    pucch = [e for e in events if e.kind == "pucch_tx"]
    assert len(pdsch) == len(pucch) in (1, 2)
    for notice_event, tx in zip(pdsch, sorted(pucch, key=lambda e: e.subframe)):
        assert tx.subframe == notice_event.subframe + 4
        assert notice_event.notice.pucch.subframe_index == tx.subframe

    end = events[-1].notice
    assert end.end_of_connection
    assert end.expected_messages == 2 + len(pdsch)
    assert [e.subframe for e in events] == sorted(e.subframe for e in events)


def test_split_setup_is_acknowledged_twice(cell):
    rng = np.random.default_rng(0)
    sm, events = run_connection("ue", cell, 0, rng, 0x3D, split_probability=1.0)
    assert sum(e.kind == "pucch_tx" for e in events) == 2
    assert sm.n_pucch == 2


def test_pusch_grants_do_not_overlap(cell):
    resources = UplinkResourceMap(cell)
    rng = np.random.default_rng(1)
    taken = set()
    for _ in range(4):
        offset = resources.reserve_pusch(17, 3, rng)
        assert offset is not None
        prbs = set(range(offset, offset + 3))
        assert taken.isdisjoint(prbs)
        assert 0 not in prbs and cell.n_prb_ul - 1 not in prbs
        taken |= prbs


def test_pucch_uses_both_edges_then_runs_out(cell):
    resources = UplinkResourceMap(cell)
    assert resources.reserve_pucch(20) == 0
    assert resources.reserve_pucch(20) == cell.n_prb_ul - 1
    assert resources.reserve_pucch(20) is None


def test_rntis_are_handed_out_in_order(cell):
    scheduler = CellScheduler(cell, np.random.default_rng(2))
    rntis = [scheduler.request(f"ue{i}", 0).rnti for i in range(5)]
    assert rntis == list(range(FIRST_RNTI, FIRST_RNTI + 5))


def test_colliding_preambles_back_off(cell):
    scheduler = CellScheduler(cell, np.random.default_rng(3))
    for i in range(40):
        scheduler.request(f"ue{i}", 0)
    prach = [(sm.timeline[0][0], sm.rnti) for sm in scheduler.connections.values()]
    assert len(set(prach)) == 40
    assert scheduler.collisions > 0
    assert len(scheduler._prach_taken) == 40


def test_scheduler_releases_events_in_time_order(cell):
    scheduler = CellScheduler(cell, np.random.default_rng(5))
    for i in range(10):
        scheduler.request(f"ue{i}", i * 3)
    released = []
    for subframe in range(200):
        for event in scheduler.step(subframe):
            assert event.subframe == subframe
            released.append(event)
    assert scheduler.pending == 0
    assert sum(e.kind == "end" for e in released) == 10


def test_allocation_round_trips_to_spec(cell):
    spec = UplinkMessageSpec.pusch(3, 12, 0x40)
    alloc = UplinkAllocation.from_spec(cell, spec, 42)
    assert alloc.to_spec() == spec
    assert alloc.message_id == (cell.earfcn, cell.pci, 0x40, 1, 42)


def test_controller_publishes_downlink_frames(cell):
    bus = InProcessBus(strict=True)
    frames = []
    bus.subscribe(TOPIC_DOWNLINK, lambda topic, payload: frames.append(decode_frame(payload)))
    clock = LogicalClock()
    latency = LatencyRecorder()
    controller = DownlinkController([cell], bus, clock, seed=1, latency=latency)
    sm = controller.connect("ue", cell.cell_id, 0)

    sent = []
    for subframe in range(100):
        clock.set_ns(subframe * 1_000_000 + 250_000)
        sent.extend(controller.step(subframe))

    kinds = [kind for kind, _ in frames]
    assert kinds.count(KIND_ALLOCATION) == 1
    rar = next(obj for kind, obj in frames if kind == KIND_ALLOCATION)
    assert rar[0].rnti == sm.rnti and rar[0].published_ns > 0
    notices = [obj for kind, obj in frames if kind == KIND_PDSCH_NOTICE]
    assert notices[-1].end_of_connection
    assert {e.kind for e in sent} == {"prach_tx", "msg3_tx", "pucch_tx"}
    assert controller.get_status()["connections_completed"] == 1
    assert controller.pending == 0
    assert latency.count(DL_PUBLISH) == len(frames)


def test_controller_without_bus_counts_losses(cell):
    controller = DownlinkController([cell], None, LogicalClock(), seed=1)
    controller.connect("ue", cell.cell_id, 0)
    for subframe in range(100):
        controller.step(subframe)
    status = controller.get_status()
    assert status["published"] == 0
    assert status["lost_publications"] >= 3
