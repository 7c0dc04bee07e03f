"""Machinery every protocol shares: traffic, buffering, BS crediting, lure handling."""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from ..adversary import Adversary
from ..core import BROADCAST, BS_ID, Packet, PacketKind
from ..engine import Event, EventKind, Simulator
from ..metrics import MetricsLedger

log = logging.getLogger(__name__)

DATA_KINDS = (PacketKind.DATA, PacketKind.AGGREGATE)


@dataclass(frozen=True)
class TrafficItem:
    t_s: float
    source: int
    payload_bytes: int


@dataclass(frozen=True)
class ProtocolConfig:
    round_period_s: float = 5.0
    control_bytes: int = 10
    # fixed aggregate size; matches the largest data payload
    aggregate_bytes: int = 70
    jitter_s: float = 0.01
    # power-level index used for cluster-head adverts and schedules
    advert_level: int = 1


def make_traffic(sources: Sequence[int], load_packets: int, send_interval_s: float,
                 sim_time_s: float, payload_range: Tuple[int, int],
                 rng: np.random.Generator) -> List[TrafficItem]:
    """Spread ``load_packets`` source packets over the run.

    Packet k falls in send interval ``k mod n_intervals`` at a uniform
    offset inside it. Sources cycle through a random permutation, so every
    node sends once before any sends twice.
    """
    if not sources or load_packets <= 0:
        return []
    n_int = max(1, int(sim_time_s // send_interval_s))
    order = rng.permutation(len(sources))
    lo, hi = payload_range
    items = []
    for k in range(load_packets):
        start = (k % n_int) * send_interval_s
        t = start + rng.uniform(0.0, send_interval_s)
        src = sources[order[k % len(sources)]]
        size = int(rng.integers(lo, hi + 1))
        items.append(TrafficItem(float(t), int(src), size))
    items.sort(key=lambda it: (it.t_s, it.source))
    return items


class ProtocolBase:
    """Event handler with the parts of a protocol that do not depend on routing."""

    name = "base"

    def __init__(self, sim: Simulator, cfg: ProtocolConfig, ledger: MetricsLedger,
                 adversary: Adversary, traffic: Sequence[TrafficItem],
                 rng: np.random.Generator):
        self.sim = sim
        self.cfg = cfg
        self.ledger = ledger
        self.adv = adversary
        self.traffic = list(traffic)
        self.rng = rng
        self._jit: list = []
        self._jit_i = 0
        sim.handler = self
        self.n = sim.n
        self.powers = sim.radio.tx_power_dbm
        self.malicious = np.zeros(self.n, dtype=bool)
        self.malicious[list(adversary.malicious)] = True
        self.buffer: Dict[int, List[Packet]] = defaultdict(list)
        self.held: Dict[int, Set[int]] = defaultdict(set)
        self.blacklist: Set[int] = set()
        self._pid = 0
        self.lost_no_route = 0

    # -- set-up -----------------------------------------------------------

    def start(self) -> None:
        for item in self.traffic:
            self.sim.timer(item.t_s, item.source, ("gen", item.payload_bytes))
        self.begin()

    def begin(self) -> None:
        raise NotImplementedError

    # -- dispatch ---------------------------------------------------------

    def on_event(self, ev: Event) -> None:
        name, *args = ev.tag
        if ev.kind is EventKind.TIMER:
            getattr(self, "_t_" + name)(ev.owner, *args)
        else:
            getattr(self, "_p_" + name)(*args)

    def on_receive(self, pkt: Packet, receivers: np.ndarray, rssi: np.ndarray) -> None:
        if pkt.src in self.blacklist:
            # compliant nodes ignore a blacklisted sender; only the BS and
            # other attackers would listen, and neither acts on it
            return
        getattr(self, "_rx_" + pkt.kind.value)(pkt, receivers, rssi)

    def _t_gen(self, node: int, payload: int) -> None:
        if not self.sim.alive[node] or self.malicious[node]:
            return
        pkt = Packet(PacketKind.DATA, node, BS_ID, payload, self.sim.now,
                     sources=frozenset((self._pid,)))
        self._pid += 1
        self.ledger.record_source_packet(pkt)
        self.buffer[node].append(pkt)

    # -- helpers ----------------------------------------------------------

    def jitter(self) -> float:
        # drawn in blocks; per-call Generator overhead dominated busy rounds
        if self._jit_i >= len(self._jit):
            self._jit = self.rng.uniform(0.0, self.cfg.jitter_s, 1024).tolist()
            self._jit_i = 0
        self._jit_i += 1
        return self._jit[self._jit_i - 1]

    def power_for_distance(self, d: float) -> Optional[float]:
        """Lowest power level whose range covers ``d`` (None when none does)."""
        for p in self.powers:
            if self.sim.range_m(p) >= d:
                return p
        return None

    def power_to(self, a: int, b: int) -> Optional[float]:
        return self.power_for_distance(self.sim.dist[a, b])

    def send(self, pkt: Packet, sender: int, power: float, delay: float = 0.0) -> np.ndarray:
        if not self.sim.alive[sender]:
            return np.empty(0, dtype=np.intp)
        return self.sim.transmit(pkt, sender, power, delay)

    def control(self, kind: PacketKind, src: int, dst: int = BROADCAST, **info) -> Packet:
        return Packet(kind, src, dst, self.cfg.control_bytes, self.sim.now, info=info)

    def aggregate(self, src: int, dst: int, sources: frozenset, created_s: float,
                  hops: int = 0) -> Packet:
        return Packet(PacketKind.AGGREGATE, src, dst, self.cfg.aggregate_bytes,
                      created_s, hops=hops, sources=sources)

    def debit_aggregation(self, node: int, bits: int) -> None:
        if bits > 0:
            self.sim.debit(node, self.sim.energy_model.e_aggregate_j_per_bit * bits)

    def credit_bs(self, pkt: Packet) -> None:
        self.ledger.record_bs_delivery(pkt.sources, self.sim.now, last_hop=pkt.src)

    def intercept(self, node: int, pkt: Packet) -> None:
        """A malicious node swallowed ``pkt``: drop it or hold it for later."""
        fate = self.adv.intercept(node, len(pkt.sources), self.sim.now)
        if fate == "hold":
            self.held[node] |= pkt.sources

    def release_held(self, node: int) -> frozenset:
        ids = frozenset(self.held.pop(node, ()))
        return ids

    def honest_energy_j(self) -> float:
        mask = ~self.malicious
        mask[BS_ID] = False
        return float(self.sim.spent[mask].sum())

    # default receive handlers ignore traffic they do not care about
    def _rx_ignore(self, pkt, receivers, rssi) -> None:
        pass

    _rx_req = _rx_level_beacon = _rx_hello = _rx_ignore
    _rx_abdicate = _rx_tdma_schedule = _rx_token = _rx_ignore
    _rx_detect_request = _rx_detect_response = _rx_blacklist = _rx_ignore
    _rx_ch_advert = _rx_join_confirm = _rx_state_msg = _rx_ignore
    _rx_data = _rx_aggregate = _rx_ignore
