"""Per-stage latency samples of a pipeline run."""

import logging
import threading

import pandas as pd

from cellfence.errors import EmptyStatisticsError
from cellfence.phy.resource_grid import MsgType
from cellfence.utils.stats import LatencyStats, format_table, summary_table

logger = logging.getLogger("Latency")

DL_PUBLISH = "DL publish"
ALLOCATION_HOP = "Allocation hop"
MEASUREMENT = "Measurement"
REPORT_HOP = "Report hop"
AGGREGATION_WAIT = "Aggregation wait"
INFERENCE = "Inference"


def e2e_stage(msg_type):
    return f"E2E {MsgType(msg_type).name}"


STAGE_ORDER = (DL_PUBLISH, ALLOCATION_HOP, MEASUREMENT, REPORT_HOP, AGGREGATION_WAIT, INFERENCE,
               *(e2e_stage(t) for t in MsgType))


class LatencyRecorder:
    """Thread-safe collection of (stage, nanoseconds) samples."""

    def __init__(self):
        self._samples = {}
        self._lock = threading.Lock()

    def record(self, stage, latency_ns):
        with self._lock:
            self._samples.setdefault(stage, []).append(int(latency_ns))

    def merge(self, other):
        for stage, samples in other.samples().items():
            with self._lock:
                self._samples.setdefault(stage, []).extend(samples)

    def samples(self):
        with self._lock:
            return {stage: list(values) for stage, values in self._samples.items()}

    def count(self, stage):
        with self._lock:
            return len(self._samples.get(stage, ()))

    def summary(self):
        """LatencyStats per stage in STAGE_ORDER; stages without samples are left out."""
        samples = self.samples()
        ordered = [s for s in STAGE_ORDER if s in samples] + sorted(s for s in samples if s not in STAGE_ORDER)
        stats = {}
        for stage in ordered:
            try:
                stats[stage] = LatencyStats.from_samples_ns(samples[stage])
            except EmptyStatisticsError:
                continue
        return stats

    def summary_table(self):
        return summary_table(self.summary())

    def format(self):
        stats = self.summary()
        return format_table(stats) if stats else "(no latency samples)"

    def to_frame(self):
        rows = [(stage, ns) for stage, values in self.samples().items() for ns in values]
        return pd.DataFrame(rows, columns=["stage", "latency_ns"])

    def write_csv(self, path):
        self.to_frame().to_csv(path, index=False)
        logger.info(f"Wrote latency samples to {path}")

    def write_summary_csv(self, path):
        self.summary_table().to_csv(path, index=False, float_format="%.3f")
        logger.info(f"Wrote latency summary to {path}")
