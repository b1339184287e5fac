"""
Central unit: aggregates reports, scores every message and decides every
connection.

In in-process runs the bus callbacks do all the work synchronously and the
driver calls tick(). In live runs the callbacks only enqueue frames; one
aggregation worker thread owns every slot and connection record and runs
the housekeeping tick.
"""

import csv
import logging
import queue
import threading
import time
from collections import OrderedDict

from cellfence.bus.wire import (
    KIND_PDSCH_NOTICE,
    KIND_REPORT,
    TOPIC_DECISIONS,
    decode_frame,
    encode_decision,
)
from cellfence.central.aggregator import Aggregator
from cellfence.central.latency import (
    AGGREGATION_WAIT,
    ALLOCATION_HOP,
    INFERENCE,
    MEASUREMENT,
    REPORT_HOP,
    LatencyRecorder,
    e2e_stage,
)
from cellfence.central.records import CONNECTION_MSG_TYPE, NEUTRAL_SCORE, ConnectionRecord, Decision
from cellfence.central.relative_features import build_features, n_features
from cellfence.config import AGGREGATION_TIMEOUT_MS, DECISION_THRESHOLD, FINALIZE_GRACE_MS, HOUSEKEEPING_TICK_US
from cellfence.errors import CellfenceError, ModelDimensionError
from cellfence.model.ensemble import EnsembleModel
from cellfence.phy.resource_grid import MsgType
from cellfence.utils.clock import NS_PER_SUBFRAME

logger = logging.getLogger("CentralUnit")

DECISION_COLUMNS = ["earfcn", "pci", "rnti", "msg_type", "subframe", "final", "score", "probability",
                    "inside", "n_reports", "decided_ns", "latency_ns"]
FINALIZED_MEMORY = 16384
ORPHAN_SUBFRAMES = 1000  # connections whose end notice never arrives


class CentralUnit:
    """
    Args:
        receiver_ids (list): Receivers expected to report, in feature order.
        model (MlpModel, optional): Per-message classifier; without it every message scores 0.5.
        ensemble (EnsembleModel, optional): Fusion weights.
        bus: Object with publish(topic, payload) for decisions, or None.
        clock: Object with now_ns().
        decision_log (str, optional): CSV file receiving one row per decision.
        feature_sink: Optional callable(slot, features) for dataset collection.
    """

    def __init__(self, receiver_ids, model=None, ensemble=None, bus=None, clock=None,
                 timeout_ms=AGGREGATION_TIMEOUT_MS, grace_ms=FINALIZE_GRACE_MS, threshold=DECISION_THRESHOLD,
                 decision_log=None, feature_sink=None, latency=None):
        self.receiver_ids = list(receiver_ids)
        if model is not None and model.n_features != n_features(len(self.receiver_ids)):
            raise ModelDimensionError(
                f"Model expects {model.n_features} features, {len(self.receiver_ids)} receivers give "
                f"{n_features(len(self.receiver_ids))}")
        self.model = model
        self.ensemble = ensemble if ensemble is not None else EnsembleModel.uniform()
        self.bus = bus
        self.clock = clock
        self.grace_ns = int(round(grace_ms * 1e6))
        self.threshold = threshold
        self.feature_sink = feature_sink
        self.latency = latency if latency is not None else LatencyRecorder()
        self.aggregator = Aggregator(self.receiver_ids, self._on_slot_closed, timeout_ms)
        self.connections = {}
        self._finalized = OrderedDict()
        self.decisions = []
        self.keep_decisions = True

        self._log_file = None
        self._log_writer = None
        if decision_log:
            self._log_file = open(decision_log, "w", newline="")
            self._log_writer = csv.writer(self._log_file)
            self._log_writer.writerow(DECISION_COLUMNS)

        self.messages_scored = 0
        self.unusable_messages = 0
        self.connections_decided = 0
        self.malformed = 0
        self.lost_publications = 0
        self.late_messages = 0

        self._inbox = queue.Queue()
        self.running = False
        self.thread = None
        self.tick_s = HOUSEKEEPING_TICK_US / 1e6

    # Bus callbacks

    def on_report(self, topic, payload):
        arrival = self.clock.now_ns()
        if self.running:
            self._inbox.put((arrival, payload))
        else:
            self._handle_frame(arrival, payload)

    def on_downlink(self, topic, payload):
        arrival = self.clock.now_ns()
        if self.running:
            self._inbox.put((arrival, payload))
        else:
            self._handle_frame(arrival, payload)

    def _handle_frame(self, arrival_ns, payload):
        try:
            kind, obj = decode_frame(payload)
        except CellfenceError as e:
            self.malformed += 1
            logger.warning(f"Dropped malformed frame: {str(e)}")
            return
        if kind == KIND_REPORT:
            self.handle_report(obj, arrival_ns)
        elif kind == KIND_PDSCH_NOTICE and obj.end_of_connection:
            self.handle_end_notice(obj, arrival_ns)

    # Aggregation

    def handle_report(self, report, arrival_ns):
        if report.published_ns:
            self.latency.record(REPORT_HOP, arrival_ns - report.published_ns)
        if report.measured_at_ns and report.measure_start_ns:
            self.latency.record(MEASUREMENT, report.measured_at_ns - report.measure_start_ns)
        if report.msg_type == MsgType.PRACH and report.alloc_rx_ns >= report.origin_ns > 0:
            self.latency.record(ALLOCATION_HOP, report.alloc_rx_ns - report.origin_ns)
        self.aggregator.add_report(report, arrival_ns)

    def handle_end_notice(self, notice, arrival_ns):
        if notice.connection_id in self._finalized:
            return
        record = self._record(notice.connection_id)
        record.expected_messages = notice.expected_messages
        record.end_notice_ns = arrival_ns
        record.last_subframe = max(record.last_subframe, notice.subframe_index)
        self._maybe_finalize(record, arrival_ns)

    def _record(self, connection_id):
        record = self.connections.get(connection_id)
        if record is None:
            record = ConnectionRecord(*connection_id)
            self.connections[connection_id] = record
        return record

    def _on_slot_closed(self, slot):
        now = slot.closed_ns
        self.latency.record(AGGREGATION_WAIT, now - slot.opened_ns)
        features = build_features(slot.reports, self.receiver_ids, slot.msg_type)
        if self.feature_sink is not None:
            self.feature_sink(slot, features)

        start = time.perf_counter_ns()
        score = self.score_message(features)
        self.latency.record(INFERENCE, time.perf_counter_ns() - start)
        decided = self.clock.now_ns()

        origins = [r.origin_ns for r in slot.reports.values() if r.origin_ns]
        latency_ns = decided - min(origins) if origins else 0
        if origins:
            self.latency.record(e2e_stage(slot.msg_type), latency_ns)

        msg_type, subframe = slot.message_id[3:]
        self._emit(Decision(slot.message_id, score, False, score, score >= self.threshold,
                            len(slot.reports), decided, latency_ns))
        if slot.connection_id in self._finalized:
            self.late_messages += 1
            return
        record = self._record(slot.connection_id)
        record.add_score(msg_type, score, subframe)
        self._maybe_finalize(record, decided)

    # Inference

    def score_message(self, features):
        """Inside-probability of one message; 0.5 when fewer than two ports were measured."""
        self.messages_scored += 1
        if not features.usable:
            self.unusable_messages += 1
            return NEUTRAL_SCORE
        if self.model is None:
            return NEUTRAL_SCORE
        return self.model.predict_one(features.values, features.mask)

    def fuse_connection(self, record):
        return self.ensemble.fuse(record.type_means())

    def _maybe_finalize(self, record, now_ns):
        if record.decided:
            return
        if record.end_notice_ns is None:
            if now_ns // NS_PER_SUBFRAME - record.last_subframe > ORPHAN_SUBFRAMES:
                logger.warning(f"No end notice for connection {record.connection_id}; deciding on what arrived")
                self._finalize(record, now_ns)
            return
        complete = record.expected_messages is not None and record.n_scored >= record.expected_messages
        if complete or now_ns - record.end_notice_ns >= self.grace_ns:
            self._finalize(record, now_ns)

    def _finalize(self, record, now_ns):
        self._finalized[record.connection_id] = True
        if len(self._finalized) > FINALIZED_MEMORY:
            self._finalized.popitem(last=False)
        if record.n_scored == 0:
            logger.debug(f"Connection {record.connection_id} ended without scored messages")
            del self.connections[record.connection_id]
            return
        probability = self.fuse_connection(record)
        record.final = probability
        record.decided_at_ns = now_ns
        self.connections_decided += 1
        message_id = (*record.connection_id, CONNECTION_MSG_TYPE, record.last_subframe)
        latency_ns = now_ns - record.end_notice_ns if record.end_notice_ns is not None else 0
        self._emit(Decision(message_id, probability, True, probability, probability >= self.threshold,
                            record.n_scored, now_ns, latency_ns))
        del self.connections[record.connection_id]

    def _emit(self, decision):
        if self.keep_decisions:
            self.decisions.append(decision)
        if self._log_writer is not None:
            earfcn, pci, rnti, msg_type, subframe = decision.message_id
            self._log_writer.writerow([earfcn, pci, rnti, msg_type, subframe, int(decision.final),
                                       f"{decision.score:.6f}", f"{decision.probability:.6f}",
                                       int(decision.inside), decision.n_reports, decision.decided_ns,
                                       decision.latency_ns])
        if self.bus is not None:
            try:
                self.bus.publish(TOPIC_DECISIONS, encode_decision(decision))
            except Exception as e:
                self.lost_publications += 1
                logger.warning(f"Decision publication lost: {str(e)}")

    # Housekeeping

    def tick(self, now_ns=None):
        """Close expired slots and finalize connections whose grace period ran out."""
        now = self.clock.now_ns() if now_ns is None else now_ns
        self.aggregator.expire(now)
        for record in list(self.connections.values()):
            self._maybe_finalize(record, now)

    def flush(self, now_ns=None):
        """Close everything still open, e.g. at the end of a run."""
        now = self.clock.now_ns() if now_ns is None else now_ns
        self.aggregator.flush(now)
        for record in list(self.connections.values()):
            if record.n_scored:
                self._finalize(record, now)

    def start(self):
        if self.thread and self.thread.is_alive():
            logger.warning("Central unit already running")
            return
        self.running = True
        self.thread = threading.Thread(target=self._run, name="central-unit", daemon=True)
        self.thread.start()
        logger.info("Central unit aggregation worker started")

    def _run(self):
        while self.running:
            try:
                arrival, payload = self._inbox.get(timeout=self.tick_s)
                self._handle_frame(arrival, payload)
                while True:
                    arrival, payload = self._inbox.get_nowait()
                    self._handle_frame(arrival, payload)
            except queue.Empty:
                pass
            except Exception as e:
                logger.error(f"Central unit worker error: {str(e)}")
            self.tick()

    def stop(self):
        self.running = False
        if self.thread:
            self.thread.join(timeout=2.0)
            self.thread = None
        while not self._inbox.empty():
            self._handle_frame(*self._inbox.get_nowait())
        self.flush()
        self.close()

    def close(self):
        if self._log_file is not None:
            self._log_file.close()
            self._log_file = None
            self._log_writer = None

    def get_status(self):
        return {
            "messages_scored": self.messages_scored,
            "unusable_messages": self.unusable_messages,
            "connections_decided": self.connections_decided,
            "late_messages": self.late_messages,
            "open_connections": len(self.connections),
            "malformed": self.malformed,
            "lost_publications": self.lost_publications,
            "aggregation": self.aggregator.get_status(),
        }
