"""Per-connection score bookkeeping and the decisions published by the central unit."""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from cellfence.phy.resource_grid import MsgType

NEUTRAL_SCORE = 0.5
CONNECTION_MSG_TYPE = 255


@dataclass(frozen=True)
class Decision:
    """
    One published decision. Per-message decisions carry the message score;
    the connection decision (final=True) carries the fused probability and
    uses msg_type 255 in its message_id.
    """
    message_id: Tuple[int, int, int, int, int]
    score: float
    final: bool = False
    probability: float = NEUTRAL_SCORE
    inside: bool = False
    n_reports: int = 0
    decided_ns: int = 0
    latency_ns: int = 0


@dataclass
class ConnectionRecord:
    earfcn: int
    pci: int
    rnti: int
    scores: Dict[MsgType, List[float]] = field(default_factory=dict)
    expected_messages: Optional[int] = None
    end_notice_ns: Optional[int] = None
    final: Optional[float] = None
    decided_at_ns: Optional[int] = None
    last_subframe: int = 0

    @property
    def connection_id(self):
        return (self.earfcn, self.pci, self.rnti)

    def add_score(self, msg_type, score, subframe=0):
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"Score {score} outside [0, 1]")
        self.scores.setdefault(MsgType(msg_type), []).append(float(score))
        self.last_subframe = max(self.last_subframe, subframe)

    @property
    def n_scored(self):
        return sum(len(v) for v in self.scores.values())

    def type_means(self):
        """Mean score per message type in PRACH, PUSCH, PUCCH order; 0.5 where a type is missing."""
        return np.array([
            float(np.mean(self.scores[t])) if self.scores.get(t) else NEUTRAL_SCORE
            for t in (MsgType.PRACH, MsgType.PUSCH, MsgType.PUCCH)
        ])

    @property
    def decided(self):
        return self.final is not None
