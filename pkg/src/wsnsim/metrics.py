"""Delivery, delay and detection bookkeeping for one run."""
from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set, Tuple

from .core import Packet, SimError, pdr


class DoubleCreditError(SimError, AssertionError):
    pass


@dataclass
class DetectionRecord:
    triggered_at_s: Optional[float] = None
    suspects: Set[int] = field(default_factory=set)
    true_positives: int = 0
    false_positives: int = 0
    runs: int = 0
    evasions: int = 0
    omitted_responders: int = 0


class MetricsLedger:
    """N_t / N_r counters with per-packet provenance.

    Every source data packet gets a unique integer id when it is created;
    aggregates carry the set of ids they contain, so a delivery to the BS
    credits each source packet at most once.
    """

    def __init__(self):
        self.n_transmitted = 0
        self.n_received = 0
        self.delay_samples_s: List[float] = []
        self.created: Dict[int, Tuple[int, float]] = {}
        self.delivered_at: Dict[int, float] = {}
        self.last_heard_by_bs: Dict[int, float] = {}
        self.detection = DetectionRecord()

    def record_source_packet(self, p: Packet) -> None:
        (pid,) = p.sources
        if pid in self.created:
            raise DoubleCreditError(f"source packet {pid} recorded twice")
        self.created[pid] = (p.src, p.created_s)
        self.n_transmitted += 1

    def record_bs_delivery(self, source_ids: Iterable[int], t: float,
                           last_hop: Optional[int] = None) -> int:
        credited = 0
        for pid in source_ids:
            if pid in self.delivered_at:
                raise DoubleCreditError(f"source packet {pid} delivered twice")
            _, created = self.created[pid]
            self.delivered_at[pid] = t
            self.delay_samples_s.append(t - created)
            credited += 1
        self.n_received += credited
        if last_hop is not None:
            self.last_heard_by_bs[last_hop] = t
        return credited

    @property
    def pdr(self) -> float:
        if self.n_transmitted == 0:
            return math.nan
        return pdr(self.n_received, self.n_transmitted)

    @property
    def mean_delay_s(self) -> float:
        if not self.delay_samples_s:
            return math.nan
        return math.fsum(self.delay_samples_s) / len(self.delay_samples_s)

    def window_stats(self, t0: float, t1: float) -> Dict[int, Tuple[int, int]]:
        """Per-source (sent, delivered) for packets created in ``[t0, t1)``."""
        stats: Dict[int, List[int]] = {}
        for pid, (src, created) in self.created.items():
            if t0 <= created < t1:
                s = stats.setdefault(src, [0, 0])
                s[0] += 1
                if pid in self.delivered_at:
                    s[1] += 1
        return {k: (v[0], v[1]) for k, v in sorted(stats.items())}

    def median_delay_s(self) -> float:
        if not self.delay_samples_s:
            return math.nan
        return statistics.median(self.delay_samples_s)
