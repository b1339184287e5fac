"""
Live run: the downlink controller, every uplink receiver and the central
unit each in their own process, talking over the socket bus.

Port layout from the base port B: the controller publishes the downlink
topic on B, receiver i its reports on B + 1 + i, the central unit its
decisions on B + 1 + R. All processes share a MonotonicClock epoch that
the supervisor hands out once every bus link is up.

Receivers keep a replica of the World driven by the same seed, stepped
lazily to whatever subframe they are asked to measure, so only the
downlink frames and the reports travel between processes.
"""

import logging
import multiprocessing
import os
import queue
import time
from dataclasses import dataclass

import pandas as pd
import ujson

from cellfence.bus.socket_bus import SocketPublisher, SocketSubscriber
from cellfence.bus.wire import TOPIC_DOWNLINK, TOPIC_REPORTS
from cellfence.central.latency import LatencyRecorder
from cellfence.central.relative_features import n_features
from cellfence.central.unit import CentralUnit
from cellfence.channel.radio import SyntheticRadio
from cellfence.channel.scenario import scenario_from_dict, scenario_to_dict
from cellfence.config import BUS_BASE_PORT, BUS_HOST, INTERFERENCE_PROBABILITY, MEAN_ARRIVAL_GAP_MS
from cellfence.downlink.controller import DownlinkController
from cellfence.errors import CellfenceError
from cellfence.model.ensemble import EnsembleModel
from cellfence.model.model_file import load_model
from cellfence.sim.pipeline import DRAIN_SUBFRAMES
from cellfence.sim.world import World
from cellfence.uplink.receiver import SyntheticFrontEnd, UplinkReceiver
from cellfence.utils.clock import NS_PER_SUBFRAME, MonotonicClock
from cellfence.utils.logging_setup import setup_logging

logger = logging.getLogger("Supervisor")

STARTUP_TIMEOUT_S = 30.0
START_DELAY_NS = 50_000_000
SHUTDOWN_TIMEOUT_S = 10.0
POLL_INTERVAL_S = 0.05

TRUTH_FILE = "truth.csv"
DECISIONS_FILE = "decisions.csv"
LATENCY_FILE = "latency.csv"
LATENCY_SUMMARY_FILE = "latency_summary.csv"
STATUS_FILE = "status.json"


@dataclass(frozen=True)
class BusLayout:
    host: str
    base_port: int
    n_receivers: int

    @property
    def downlink_port(self):
        return self.base_port

    def report_port(self, index):
        return self.base_port + 1 + index

    @property
    def decision_port(self):
        return self.base_port + 1 + self.n_receivers


@dataclass
class RunSettings:
    scenario_doc: dict
    seed: int
    n_connections: int
    layout: BusLayout
    out_dir: str
    mean_gap_ms: float = MEAN_ARRIVAL_GAP_MS
    interference_probability: float = INTERFERENCE_PROBABILITY
    model_path: str = None
    log_level: str = None


@dataclass
class LiveRunResult:
    status: dict
    latency: LatencyRecorder
    crashed: list
    killed: list
    accuracy: float = None


class _Handshake:
    """Readiness reports up, one shared epoch down."""

    def __init__(self, ctx):
        self.ready = ctx.Queue()
        self.results = ctx.Queue()
        self.start = ctx.Event()
        self.stop = ctx.Event()
        self.epoch = ctx.Value("q", 0)

    def announce(self, name, ok):
        self.ready.put((name, bool(ok)))

    def wait_start(self, clock):
        self.start.wait()
        clock.epoch_ns = self.epoch.value


def _controller_main(settings, handshake):
    log = setup_logging("DLControllerProcess", level=settings.log_level)
    scenario = scenario_from_dict(settings.scenario_doc)
    layout = settings.layout
    publisher = SocketPublisher(layout.host, layout.downlink_port, name="dl-controller")
    if not publisher.start():
        handshake.announce("controller", False)
        return
    # Receivers and the central unit all follow the downlink
    ok = publisher.wait_for_subscribers(TOPIC_DOWNLINK, layout.n_receivers + 1, STARTUP_TIMEOUT_S)
    clock = MonotonicClock()
    latency = LatencyRecorder()
    controller = DownlinkController(scenario.cells, publisher, clock, settings.seed, latency=latency)
    world = World(scenario, controller, settings.seed, settings.n_connections, settings.mean_gap_ms)
    handshake.announce("controller", ok)
    handshake.wait_start(clock)

    subframe = 0
    drained = 0
    overruns = 0
    while drained < DRAIN_SUBFRAMES and not handshake.stop.is_set():
        start_ns = clock.subframe_start_ns(subframe)
        if clock.now_ns() - start_ns > NS_PER_SUBFRAME:
            overruns += 1
        clock.sleep_until_ns(start_ns)
        world.step(subframe)
        if world.done:
            drained += 1
        subframe += 1
    if overruns:
        log.warning(f"Controller started {overruns} subframes more than one subframe late")

    truth = pd.DataFrame([
        {"connection": t.index, "earfcn": t.connection_id[0], "pci": t.connection_id[1],
         "rnti": t.connection_id[2], "start_subframe": t.start_subframe, "route": t.route, "label": int(t.label)}
        for t in world.connections.values()
    ])
    truth.to_csv(os.path.join(settings.out_dir, TRUTH_FILE), index=False)
    publisher.stop()
    handshake.results.put(("controller", {
        "status": {**controller.get_status(), "subframes": subframe, "overruns": overruns,
                   "class_balance": world.class_balance()},
        "latency": latency.samples(),
    }))


def _receiver_main(index, settings, handshake):
    scenario = scenario_from_dict(settings.scenario_doc)
    site = scenario.receivers[index]
    name = f"rx{site.receiver_id}"
    log = setup_logging(f"ReceiverProcess{site.receiver_id}", level=settings.log_level)
    layout = settings.layout
    publisher = SocketPublisher(layout.host, layout.report_port(index), name=name)
    if not publisher.start():
        handshake.announce(name, False)
        return

    clock = MonotonicClock()
    replica = World(scenario, DownlinkController(scenario.cells, None, clock, settings.seed), settings.seed,
                    settings.n_connections, settings.mean_gap_ms)
    radio = SyntheticRadio(scenario, site, settings.seed, settings.interference_probability)
    front_end = SyntheticFrontEnd(radio, replica.lookup, clock=clock)
    receiver = UplinkReceiver(site, scenario.cells, front_end, publisher, clock)
    subscriber = SocketSubscriber([(layout.host, layout.downlink_port, TOPIC_DOWNLINK)], receiver.on_downlink,
                                  name=name)
    subscriber.start()
    ok = subscriber.wait_connected(STARTUP_TIMEOUT_S) and \
        publisher.wait_for_subscribers(TOPIC_REPORTS, 1, STARTUP_TIMEOUT_S)
    handshake.announce(name, ok)
    handshake.wait_start(clock)
    receiver.start()
    log.info(f"Receiver {site.receiver_id} measuring")

    handshake.stop.wait()
    subscriber.stop()
    receiver.stop()
    publisher.stop()
    handshake.results.put((name, {"status": receiver.get_status()}))


def _central_main(settings, handshake):
    log = setup_logging("CentralProcess", level=settings.log_level)
    scenario = scenario_from_dict(settings.scenario_doc)
    layout = settings.layout
    model, ensemble = None, EnsembleModel.uniform()
    if settings.model_path:
        model, ensemble = load_model(settings.model_path, n_features(len(scenario.receiver_ids)))
    publisher = SocketPublisher(layout.host, layout.decision_port, name="central")
    if not publisher.start():
        handshake.announce("central", False)
        return

    clock = MonotonicClock()
    latency = LatencyRecorder()
    central = CentralUnit(scenario.receiver_ids, model, ensemble, publisher, clock,
                          decision_log=os.path.join(settings.out_dir, DECISIONS_FILE), latency=latency)
    central.keep_decisions = False

    def dispatch(topic, payload):
        if topic == TOPIC_REPORTS:
            central.on_report(topic, payload)
        else:
            central.on_downlink(topic, payload)

    endpoints = [(layout.host, layout.report_port(i), TOPIC_REPORTS) for i in range(layout.n_receivers)]
    endpoints.append((layout.host, layout.downlink_port, TOPIC_DOWNLINK))
    subscriber = SocketSubscriber(endpoints, dispatch, name="central")
    subscriber.start()
    handshake.announce("central", subscriber.wait_connected(STARTUP_TIMEOUT_S))
    handshake.wait_start(clock)
    central.start()
    log.info(f"Central unit aggregating {layout.n_receivers} receivers")

    handshake.stop.wait()
    subscriber.stop()
    central.stop()
    publisher.stop()
    handshake.results.put(("central", {"status": central.get_status(), "latency": latency.samples()}))


def connection_accuracy(decisions, truth):
    """Share of final decisions that match the ground-truth label; None without decisions."""
    final = decisions[decisions["final"].astype(bool)]
    if final.empty or truth.empty:
        return None
    keys = ["earfcn", "pci", "rnti"]
    # RNTIs are reused, so each decision belongs to the latest connection started before it
    joined = pd.merge_asof(final.sort_values("subframe"), truth.sort_values("start_subframe"),
                           left_on="subframe", right_on="start_subframe", by=keys, direction="backward")
    joined = joined.dropna(subset=["label"])
    if joined.empty:
        return None
    return float((joined["inside"].astype(int) == joined["label"].astype(int)).mean())


class LiveRun:
    """
    Spawns and supervises one live run.

    Args:
        scenario (DeploymentScenario): Deployment to run.
        n_connections (int): Connections the controller starts.
        out_dir (str): Directory for truth, decisions, latency and status files.
        kill_receiver_after_s (float, optional): Terminate the first receiver this long after the start.
    """

    def __init__(self, scenario, n_connections, out_dir, seed=0, model_path=None, host=BUS_HOST,
                 base_port=BUS_BASE_PORT, mean_gap_ms=MEAN_ARRIVAL_GAP_MS,
                 interference_probability=INTERFERENCE_PROBABILITY, kill_receiver_after_s=None, log_level=None):
        if n_connections <= 0:
            raise CellfenceError("A live run needs at least one connection")
        os.makedirs(out_dir, exist_ok=True)
        self.out_dir = out_dir
        self.settings = RunSettings(scenario_to_dict(scenario), seed, n_connections,
                                    BusLayout(host, base_port, len(scenario.receivers)), out_dir, mean_gap_ms,
                                    interference_probability, model_path, log_level)
        self.kill_receiver_after_s = kill_receiver_after_s
        self.ctx = multiprocessing.get_context("spawn")
        self.handshake = _Handshake(self.ctx)
        self.processes = {}
        self.killed = []

    def _spawn(self):
        s, h = self.settings, self.handshake
        self.processes["controller"] = self.ctx.Process(target=_controller_main, args=(s, h), name="controller")
        self.processes["central"] = self.ctx.Process(target=_central_main, args=(s, h), name="central")
        scenario = scenario_from_dict(s.scenario_doc)
        for i, site in enumerate(scenario.receivers):
            name = f"rx{site.receiver_id}"
            self.processes[name] = self.ctx.Process(target=_receiver_main, args=(i, s, h), name=name)
        for process in self.processes.values():
            process.start()

    def _await_ready(self):
        pending = set(self.processes)
        deadline = time.monotonic() + STARTUP_TIMEOUT_S * 2
        while pending:
            try:
                name, ok = self.handshake.ready.get(timeout=max(deadline - time.monotonic(), 0.01))
            except queue.Empty:
                raise CellfenceError(f"Processes {sorted(pending)} did not come up")
            if not ok:
                raise CellfenceError(f"Process {name} could not set up its bus links")
            pending.discard(name)
            logger.info(f"{name} ready")

    def _crashed(self):
        return [name for name, p in self.processes.items()
                if not p.is_alive() and p.exitcode not in (0, None) and name not in self.killed]

    def _supervise(self):
        started = time.monotonic()
        controller = self.processes["controller"]
        while controller.is_alive():
            crashed = self._crashed()
            if crashed:
                logger.error(f"Processes {crashed} died; stopping the run")
                return
            if self.kill_receiver_after_s is not None and not self.killed and \
                    time.monotonic() - started >= self.kill_receiver_after_s:
                name = next(n for n in self.processes if n.startswith("rx"))
                logger.warning(f"Terminating receiver process {name}")
                self.processes[name].terminate()
                self.killed.append(name)
            time.sleep(POLL_INTERVAL_S)

    def _collect(self):
        expected = {n for n, p in self.processes.items() if n not in self.killed and p.exitcode in (0, None)}
        results = {}
        deadline = time.monotonic() + SHUTDOWN_TIMEOUT_S
        while expected - set(results) and time.monotonic() < deadline:
            try:
                name, result = self.handshake.results.get(timeout=POLL_INTERVAL_S)
            except queue.Empty:
                continue
            results[name] = result
        missing = expected - set(results)
        if missing:
            logger.warning(f"No results from {sorted(missing)}")
        return results

    def _shutdown(self):
        if not self.handshake.start.is_set():
            # Nothing ran yet; processes still blocked in the handshake hold no results
            for process in self.processes.values():
                process.terminate()
        self.handshake.stop.set()
        results = self._collect() if self.handshake.start.is_set() else {}
        for name, process in self.processes.items():
            process.join(timeout=SHUTDOWN_TIMEOUT_S)
            if process.is_alive():
                logger.warning(f"{name} did not exit; terminating")
                process.terminate()
                process.join(timeout=1.0)
        return results

    def run(self):
        """Run to completion; returns a LiveRunResult."""
        crashed = []
        results = {}
        self._spawn()
        try:
            self._await_ready()
            self.handshake.epoch.value = time.monotonic_ns() + START_DELAY_NS
            self.handshake.start.set()
            logger.info(f"Live run started with {self.settings.layout.n_receivers} receivers")
            self._supervise()
            crashed = self._crashed()
        finally:
            results = self._shutdown()

        latency = LatencyRecorder()
        for result in results.values():
            for stage, samples in result.get("latency", {}).items():
                for ns in samples:
                    latency.record(stage, ns)
        status = {name: result["status"] for name, result in results.items()}
        status["killed"] = self.killed
        status["crashed"] = crashed
        accuracy = self._score(status)
        self._write(latency, status)
        return LiveRunResult(status, latency, crashed, self.killed, accuracy)

    def _score(self, status):
        decisions_path = os.path.join(self.out_dir, DECISIONS_FILE)
        truth_path = os.path.join(self.out_dir, TRUTH_FILE)
        if self.settings.model_path is None or not (os.path.exists(decisions_path) and os.path.exists(truth_path)):
            return None
        try:
            accuracy = connection_accuracy(pd.read_csv(decisions_path), pd.read_csv(truth_path))
        except (pd.errors.EmptyDataError, KeyError) as e:
            logger.warning(f"Cannot score the run: {str(e)}")
            return None
        if accuracy is not None:
            status["connection_accuracy"] = accuracy
            logger.info(f"Live connection accuracy {accuracy:.4f}")
        return accuracy

    def _write(self, latency, status):
        latency.write_csv(os.path.join(self.out_dir, LATENCY_FILE))
        latency.write_summary_csv(os.path.join(self.out_dir, LATENCY_SUMMARY_FILE))
        with open(os.path.join(self.out_dir, STATUS_FILE), "w") as f:
            f.write(ujson.dumps(status, indent=2))
        logger.info(f"Latency per stage:\n{latency.format()}")
