"""
Deterministic in-process run of the whole pipeline.

One thread, one InProcessBus and one LogicalClock: every subframe the world
releases its scheduler events (downlink frames reach the receivers through
the bus), the clock moves to the end of the subframe, every receiver
measures what became available and the central unit runs its housekeeping.
Latencies recorded here are in simulation time.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List

from cellfence.bus.inproc import InProcessBus
from cellfence.bus.wire import TOPIC_DOWNLINK, TOPIC_REPORTS
from cellfence.central.latency import LatencyRecorder
from cellfence.central.unit import CentralUnit
from cellfence.channel.radio import SyntheticRadio, WidebandRadio
from cellfence.config import FRONT_ENDS, INTERFERENCE_PROBABILITY, MEAN_ARRIVAL_GAP_MS, WIDEBAND_FFT_SIZE
from cellfence.downlink.controller import DownlinkController
from cellfence.errors import ConfigurationError
from cellfence.model.dataset import Dataset
from cellfence.sim.world import World
from cellfence.uplink.receiver import N_PORTS, RingBufferFrontEnd, SyntheticFrontEnd, UplinkReceiver
from cellfence.utils.clock import NS_PER_SUBFRAME, LogicalClock

logger = logging.getLogger("Pipeline")

PROGRESS_EVERY = 10000
DRAIN_SUBFRAMES = 100


@dataclass
class PipelineResult:
    dataset: Dataset
    decisions: List = field(default_factory=list)
    latency: LatencyRecorder = None
    status: Dict = field(default_factory=dict)
    class_balance: Dict = field(default_factory=dict)
    subframes: int = 0


class WidebandSite:
    """Ring-buffer front end of one receiver, fed by one WidebandRadio per (band, port)."""

    def __init__(self, scenario, site, seed, fft_size=WIDEBAND_FFT_SIZE):
        bands = list(scenario.bands())
        self.front_end = RingBufferFrontEnd.for_bands(bands, fft_size)
        self.radios = {(band, port): WidebandRadio(scenario, site, port, fft_size, seed)
                       for band in bands for port in range(N_PORTS)}

    def ingest(self, subframe, sent):
        for (band, port), radio in self.radios.items():
            on_band = [tx for tx in sent if tx.cell.band_id == band]
            self.front_end.ingest(band, port, radio.render_subframe(subframe, on_band))


class InProcessPipeline:
    """
    Args:
        scenario (DeploymentScenario): Deployment to simulate.
        n_connections (int): Connections to run to completion.
        seed (int): Run seed; also the dataset's day tag unless day is given.
        model, ensemble: Optional trained models for the central unit.
        loss_rate (float): Per-subscriber drop probability on the bus.
        interference_probability (float): Chance that a message has a co-channel interferer.
        decision_log (str, optional): CSV path for every published decision.
        frontend (str): "synthetic" measures resource elements directly; "wideband" renders full-band IQ
            into each receiver's ring buffer and demodulates it. Interferers exist only in synthetic mode.
        fft_size (int): Wideband sample rate as an FFT size.
    """

    def __init__(self, scenario, n_connections, seed=0, model=None, ensemble=None, loss_rate=0.0,
                 interference_probability=INTERFERENCE_PROBABILITY, mean_gap_ms=MEAN_ARRIVAL_GAP_MS,
                 decision_log=None, day=None, routes=None, frontend="synthetic", fft_size=WIDEBAND_FFT_SIZE):
        if frontend not in FRONT_ENDS:
            raise ConfigurationError(f"Unknown front end {frontend!r}; expected one of {FRONT_ENDS}")
        self.scenario = scenario
        self.seed = seed
        self.day = seed if day is None else day
        self.clock = LogicalClock()
        self.bus = InProcessBus(loss_rate=loss_rate, seed=seed)
        self.latency = LatencyRecorder()
        self.controller = DownlinkController(scenario.cells, self.bus, self.clock, seed, latency=self.latency)
        self.world = World(scenario, self.controller, seed, n_connections, mean_gap_ms, routes)
        self.frontend = frontend
        self.receivers = []
        self.wideband = []
        for site in scenario.receivers:
            if frontend == "wideband":
                wideband = WidebandSite(scenario, site, seed, fft_size)
                self.wideband.append(wideband)
                front_end = wideband.front_end
            else:
                radio = SyntheticRadio(scenario, site, seed, interference_probability)
                front_end = SyntheticFrontEnd(radio, self.world.lookup)
            receiver = UplinkReceiver(site, scenario.cells, front_end, self.bus, self.clock)
            self.bus.subscribe(TOPIC_DOWNLINK, receiver.on_downlink)
            self.receivers.append(receiver)
        self.central = CentralUnit(scenario.receiver_ids, model, ensemble, self.bus, self.clock,
                                   decision_log=decision_log, feature_sink=self._collect, latency=self.latency)
        self.bus.subscribe(TOPIC_REPORTS, self.central.on_report)
        self.bus.subscribe(TOPIC_DOWNLINK, self.central.on_downlink)
        self.records = []
        self.unknown_messages = 0

    def _collect(self, slot, features):
        meta = self.world.message_meta(slot.message_id, self.day)
        if meta is None:
            self.unknown_messages += 1
            return
        meta["n_reports"] = len(slot.reports)
        meta["n_valid_ports"] = features.n_valid_ports
        self.records.append((meta, features))

    def step(self, subframe):
        self.clock.set_ns(subframe * NS_PER_SUBFRAME)
        sent = self.world.step(subframe)
        for wideband in self.wideband:
            wideband.ingest(subframe, sent)
        self.clock.set_ns((subframe + 1) * NS_PER_SUBFRAME)
        for receiver in self.receivers:
            receiver.poll(subframe)
        self.central.tick()

    def run(self, max_subframes=None):
        """Run until every connection is decided; returns a PipelineResult."""
        subframe = 0
        drained = 0
        while drained < DRAIN_SUBFRAMES:
            if max_subframes is not None and subframe >= max_subframes:
                logger.warning(f"Stopped after {max_subframes} subframes with work pending")
                break
            self.step(subframe)
            if self.world.done and not self.central.connections:
                drained += 1
            subframe += 1
            if subframe % PROGRESS_EVERY == 0:
                logger.info(f"Subframe {subframe}: {self.world.started} connections started, "
                            f"{self.central.connections_decided} decided")
        self.central.flush(self.clock.now_ns())
        self.central.close()

        dataset = Dataset.from_records(self.records, self.scenario.receiver_ids)
        status = self.get_status()
        logger.info(f"Run finished after {subframe} subframes: {len(dataset)} messages from "
                    f"{self.world.started} connections")
        return PipelineResult(dataset, list(self.central.decisions), self.latency, status,
                              self.world.class_balance(), subframe)

    def get_status(self):
        receivers = [r.get_status() for r in self.receivers]
        aggregation = self.central.aggregator.get_status()
        expected = (aggregation["closed_complete"] + aggregation["closed_timeout"]) * len(self.receivers)
        missing = aggregation["missing_reports"]
        return {
            "controller": self.controller.get_status(),
            "receivers": receivers,
            "central": self.central.get_status(),
            "bus": self.bus.get_status(),
            "unknown_messages": self.unknown_messages,
            "measurement_loss": missing / expected if expected else 0.0,
        }


def generate_dataset(scenario, n_connections, seed=0, **kwargs):
    """
    Simulate n_connections connections and collect one labeled row per message.

    Returns:
        PipelineResult
    """
    return InProcessPipeline(scenario, n_connections, seed, **kwargs).run()
