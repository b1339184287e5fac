"""Measurement report: what one receiver found out about one uplink message."""

from dataclasses import dataclass, replace
from typing import Tuple

FEATURE_NAMES = (
    "corr_peak_power_db",
    "rms2_power_db",
    "peak_to_avg_snr_db",
    "smoothed_snr_db",
    "toa_offset_s",
)


@dataclass(frozen=True)
class PortFeatures:
    """Signal features of one antenna port; valid is False when the reference was not detected."""
    valid: bool
    corr_peak_power_db: float = 0.0
    rms2_power_db: float = 0.0
    peak_to_avg_snr_db: float = 0.0
    smoothed_snr_db: float = 0.0
    toa_offset_s: float = 0.0

    @classmethod
    def absent(cls):
        return cls(False)

    def values(self):
        return tuple(getattr(self, name) for name in FEATURE_NAMES)

    def shifted(self, offset_db):
        """Same measurement with every power moved by offset_db; SNRs and timing are unchanged."""
        return replace(self,
                       corr_peak_power_db=self.corr_peak_power_db + offset_db,
                       rms2_power_db=self.rms2_power_db + offset_db)


@dataclass(frozen=True)
class MeasurementReport:
    """
    Timestamps are nanoseconds since the scenario epoch: origin_ns is when the
    measurement could start at the earliest (allocation known and subframe
    received), alloc_rx_ns when the allocation arrived over the bus.
    """
    message_id: Tuple[int, int, int, int, int]
    receiver_id: int
    ports: Tuple[PortFeatures, PortFeatures]
    origin_ns: int = 0
    alloc_rx_ns: int = 0
    measure_start_ns: int = 0
    measured_at_ns: int = 0
    published_ns: int = 0

    def __post_init__(self):
        if len(self.ports) != 2:
            raise ValueError("A report carries exactly two ports")

    @property
    def msg_type(self):
        return self.message_id[3]

    @property
    def connection_id(self):
        return self.message_id[:3]
