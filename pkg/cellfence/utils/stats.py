"""Latency statistics and the Operation/Mean/StdDev/Count summary table."""

from dataclasses import dataclass

import numpy as np
import pandas as pd

from cellfence.errors import EmptyStatisticsError


@dataclass(frozen=True)
class LatencyStats:
    """All values in microseconds."""
    mean: float
    std: float
    min: float
    p50: float
    p99: float
    count: int

    @classmethod
    def from_samples_ns(cls, samples_ns):
        samples = np.asarray(samples_ns, dtype=float) / 1e3
        if samples.size == 0:
            raise EmptyStatisticsError("No latency samples to summarize")
        return cls(
            mean=float(samples.mean()),
            std=float(samples.std(ddof=1)) if samples.size > 1 else 0.0,
            min=float(samples.min()),
            p50=float(np.percentile(samples, 50)),
            p99=float(np.percentile(samples, 99)),
            count=int(samples.size),
        )

    def as_row(self, operation):
        return {"Operation": operation, "Mean": self.mean, "StdDev": self.std, "Count": self.count}


def summary_table(stats_by_operation):
    """DataFrame with one row per operation; means and deviations in microseconds."""
    rows = [stats.as_row(name) for name, stats in stats_by_operation.items()]
    return pd.DataFrame(rows, columns=["Operation", "Mean", "StdDev", "Count"])


def format_table(stats_by_operation):
    table = summary_table(stats_by_operation)
    return table.to_string(index=False, float_format=lambda v: f"{v:.0f}µs")
