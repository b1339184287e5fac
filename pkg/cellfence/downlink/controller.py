"""
Downlink receiver role: follows every cell's scheduler and forwards what it
learns (RAR, PDSCH, end of connection) to the uplink receivers.
"""

import logging

import numpy as np

from cellfence.bus.wire import TOPIC_DOWNLINK, encode_allocations, encode_pdsch_notice
from cellfence.central.latency import DL_PUBLISH
from cellfence.config import PUCCH_SPLIT_PROBABILITY
from cellfence.downlink.scheduler import CellScheduler

logger = logging.getLogger("DLController")

TX_KINDS = ("prach_tx", "msg3_tx", "pucch_tx")


class DownlinkController:
    """
    Args:
        cells (list): CellConfig of every monitored cell.
        bus: Object with publish(topic, payload); None behaves like an unreachable bus.
        clock: Object with now_ns() used to stamp publications.
        seed (int): Seed of the per-cell schedulers.
        latency (LatencyRecorder, optional): Receives the DL publish stage.
    """

    def __init__(self, cells, bus, clock, seed=0, split_probability=PUCCH_SPLIT_PROBABILITY, latency=None):
        self.bus = bus
        self.clock = clock
        self.latency = latency
        self._subframe = 0
        self.schedulers = {
            cell.cell_id: CellScheduler(cell, np.random.default_rng([seed, 3, i]), split_probability)
            for i, cell in enumerate(cells)
        }
        self.published = 0
        self.lost_publications = 0
        self.connections_started = 0
        self.connections_completed = 0

    def connect(self, ue, cell_id, start_subframe):
        """Start a connection of ue on cell_id; returns its state machine."""
        self.connections_started += 1
        return self.schedulers[cell_id].request(ue, start_subframe)

    def _publish(self, payload):
        if self.bus is None:
            self.lost_publications += 1
            return False
        try:
            receivers = self.bus.publish(TOPIC_DOWNLINK, payload)
            if self.latency is not None:
                self.latency.record(DL_PUBLISH, self.clock.now_ns() - self.clock.subframe_start_ns(self._subframe))
        except Exception as e:
            self.lost_publications += 1
            logger.warning(f"Downlink publication lost: {str(e)}")
            return False
        # In-process buses report how many subscribers got the frame
        if receivers == 0:
            self.lost_publications += 1
            return False
        self.published += 1
        return True

    def broadcast_rar(self, allocations):
        """Forward one RAR: the retrospective PRACH allocation and the Msg3 grant in a single frame."""
        now = self.clock.now_ns()
        return self._publish(encode_allocations([a.stamped(now) for a in allocations]))

    def forward_notice(self, notice):
        return self._publish(encode_pdsch_notice(notice.stamped(self.clock.now_ns())))

    def step(self, subframe):
        """
        Advance every cell to subframe, publishing downlink events.

        Returns:
            list: Transmission events (prach_tx, msg3_tx, pucch_tx) of this subframe.
        """
        self._subframe = subframe
        transmissions = []
        for scheduler in self.schedulers.values():
            for event in scheduler.step(subframe):
                if event.kind in TX_KINDS:
                    transmissions.append(event)
                elif event.kind == "rar":
                    self.broadcast_rar(event.allocations)
                elif event.kind == "pdsch":
                    self.forward_notice(event.notice)
                elif event.kind == "end":
                    self.forward_notice(event.notice)
                    self.connections_completed += 1
        return transmissions

    @property
    def pending(self):
        return sum(s.pending for s in self.schedulers.values())

    def get_status(self):
        return {
            "connections_started": self.connections_started,
            "connections_completed": self.connections_completed,
            "published": self.published,
            "lost_publications": self.lost_publications,
            "collisions": sum(s.collisions for s in self.schedulers.values()),
        }
