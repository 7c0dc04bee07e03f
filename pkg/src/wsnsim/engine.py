"""Deterministic discrete-event kernel.

Events are ordered by ``(fire_at_s, seq)``; ``seq`` comes from one global
counter so simultaneous events fire in scheduling order. All randomness a
run needs is drawn from numpy ``Generator(PCG64)`` streams derived from the
run seed, so a (scenario, seed) pair always replays the same trace.
"""
from __future__ import annotations

import enum
import heapq
import logging
import math
from dataclasses import dataclass
from typing import Any, Optional, Sequence, TextIO, Tuple

import numpy as np

from .core import BROADCAST, BS_ID, Packet, SimError
from .radio import EnergyModel, RadioConfig, range_for_power, tx_energy

log = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0
_EMPTY = np.empty(0, dtype=np.intp)


class PastEventError(SimError):
    pass


class DeadSenderError(SimError):
    pass


class EventKind(enum.Enum):
    DELIVER = "deliver"
    TIMER = "timer"
    ROUND = "round"
    PHASE = "phase"


@dataclass(slots=True)
class Event:
    fire_at_s: float
    kind: EventKind
    packet: Optional[Packet] = None
    to: Any = ()
    owner: Optional[int] = None
    tag: Any = None
    seq: int = -1


@dataclass(frozen=True)
class TraceSummary:
    events: int
    now_s: float
    deliveries: int
    energy_j: Tuple[float, ...]
    alive: int


def make_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent PCG64 stream ``stream`` of run ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream])))


class Simulator:
    """Clock, event queue, radio medium and energy ledger for one run.

    Node 0 is the base station: mains powered, never debited, never dies.
    Nodes listed in ``mains`` get the same treatment.
    ``handler`` must provide ``on_receive(packet, receivers, rssi_dbm)``,
    called once per delivery with numpy arrays, and ``on_event(event)``.
    """

    def __init__(self, positions: np.ndarray, init_energy: np.ndarray,
                 radio: RadioConfig, energy: EnergyModel, *, end_s: float,
                 rng: np.random.Generator, processing_delay_s: float = 1e-3,
                 trace: Optional[TextIO] = None, mains: Sequence[int] = ()):
        self.pos = np.asarray(positions, dtype=float)
        n = len(self.pos)
        self.radio = radio
        self.energy_model = energy
        self.end_s = float(end_s)
        self.rng = rng
        self.processing_delay_s = processing_delay_s
        self.trace = trace
        self.handler = None

        diff = self.pos[:, None, :] - self.pos[None, :, :]
        self.dist = np.sqrt((diff**2).sum(axis=2))
        with np.errstate(divide="ignore"):
            self.loss_db = 40 * np.log10(self.dist) - radio.gain_db
        np.fill_diagonal(self.loss_db, np.inf)

        # mains-powered nodes (the BS, optionally attackers) are never debited
        self.mains = np.zeros(n, dtype=bool)
        self.mains[BS_ID] = True
        self.mains[list(mains)] = True
        self.energy_init = np.asarray(init_energy, dtype=float).copy()
        self.energy_init[self.mains] = 0.0
        self.energy = self.energy_init.copy()
        self.spent = np.zeros(n)
        self.alive = np.ones(n, dtype=bool)
        self.death_s = np.full(n, math.nan)

        self.now = 0.0
        self._queue: list = []
        self._seq = 0
        self.events_processed = 0
        self.deliveries = 0
        self._range_cache: dict = {}
        self._cost_cache: dict = {}
        self._reach: dict = {}

    @property
    def n(self) -> int:
        return len(self.pos)

    # -- scheduling -------------------------------------------------------

    def schedule(self, ev: Event) -> Event:
        if ev.fire_at_s < self.now:
            raise PastEventError(f"event at {ev.fire_at_s} is before now={self.now}")
        ev.seq = self._seq
        self._seq += 1
        heapq.heappush(self._queue, (ev.fire_at_s, ev.seq, ev))
        return ev

    def at(self, t: float, kind: EventKind, **kw) -> Event:
        return self.schedule(Event(t, kind, **kw))

    def timer(self, t: float, owner: int, tag: Any) -> Event:
        return self.schedule(Event(t, EventKind.TIMER, owner=owner, tag=tag))

    def phase(self, t: float, tag: Any) -> Event:
        return self.schedule(Event(t, EventKind.PHASE, tag=tag))

    # -- radio ------------------------------------------------------------

    def range_m(self, power_dbm: float) -> float:
        r = self._range_cache.get(power_dbm)
        if r is None:
            r = self._range_cache[power_dbm] = range_for_power(power_dbm, self.radio)
        return r

    def rssi(self, src: int, dst: int, power_dbm: float) -> float:
        return power_dbm - self.loss_db[src, dst]

    def in_range(self, src: int, power_dbm: float) -> np.ndarray:
        """Indices of alive nodes that would receive a broadcast from ``src``."""
        thr = power_dbm - self.radio.rx_threshold_dbm
        mask = (self.loss_db[src] <= thr) & self.alive
        return np.flatnonzero(mask)

    def serialization_s(self, packet: Packet) -> float:
        return packet.bits / self.radio.bandwidth_bps

    def tx_cost(self, packet: Packet, power_dbm: float) -> float:
        # the amplifier is sized for the distance the chosen power level covers
        key = (packet.bits, power_dbm)
        c = self._cost_cache.get(key)
        if c is None:
            c = self._cost_cache[key] = tx_energy(packet.bits, self.range_m(power_dbm),
                                                  self.energy_model)
        return c

    def debit(self, node: int, joules: float) -> bool:
        """Charge ``node``; returns False (and kills it) if it runs dry."""
        if self.mains[node]:
            return True
        if not self.alive[node]:
            return False
        e = self.energy[node]
        if e >= joules:
            self.energy[node] = e - joules
            self.spent[node] += joules
            if self.energy[node] <= 0.0:
                self._kill(node)
            return True
        self.energy[node] = 0.0
        self.spent[node] += e
        self._kill(node)
        return False

    def _kill(self, node: int) -> None:
        self.energy[node] = 0.0
        self.alive[node] = False
        self.death_s[node] = self.now
        log.debug("node %d died at t=%.4f", node, self.now)

    def transmit(self, packet: Packet, sender: int, power_dbm: float,
                 extra_delay_s: float = 0.0) -> np.ndarray:
        """Put ``packet`` on the air from ``sender`` after ``extra_delay_s``.

        Debits the sender, then schedules delivery to every receiver that
        can hear it: every alive in-range node for a broadcast, just
        ``packet.dst`` for a unicast. Returns the receivers (empty when the
        transmission failed), which stands in for a link-layer ack.
        """
        if not self.alive[sender]:
            raise DeadSenderError(f"node {sender} is dead at t={self.now}")
        if not self.debit(sender, self.tx_cost(packet, power_dbm)):
            return _EMPTY
        thr = power_dbm - self.radio.rx_threshold_dbm
        per = self.radio.packet_error_rate
        if packet.dst == BROADCAST:
            key = (sender, power_dbm)
            reach = self._reach.get(key)
            if reach is None:
                reach = self._reach[key] = np.flatnonzero(self.loss_db[sender] <= thr)
            receivers = reach[self.alive[reach]]
            if per > 0 and len(receivers):
                receivers = receivers[self.rng.random(len(receivers)) >= per]
            if not len(receivers):
                return _EMPTY
            prop = self.dist[sender, receivers].max() / SPEED_OF_LIGHT
        else:
            d = packet.dst
            if not self.alive[d] or self.loss_db[sender, d] > thr:
                return _EMPTY
            if per > 0 and self.rng.random() < per:
                return _EMPTY
            receivers = np.array((d,))
            prop = self.dist[sender, d] / SPEED_OF_LIGHT
        t = self.now + extra_delay_s + self.serialization_s(packet) + prop
        self.schedule(Event(t, EventKind.DELIVER, packet=packet, to=receivers,
                            owner=sender, tag=power_dbm))
        return receivers

    def _receive(self, ev: Event) -> None:
        pkt = ev.packet
        if len(ev.to) == 1:
            self._receive_one(ev, pkt, int(ev.to[0]))
            return
        to = ev.to
        live = self.alive[to]
        if not live.all():
            to = to[live]
            if not len(to):
                return
        cost = self.energy_model.e_elec_j_per_bit * pkt.bits
        bs = self.mains[to]
        paid = to[~bs] if bs.any() else to
        e = self.energy[paid] - cost
        if not len(e) or e.min() > 0.0:
            self.energy[paid] = e
            self.spent[paid] += cost
            got = to
        else:
            ok = e >= 0.0
            for r in paid[~ok]:
                # not enough left for the whole packet: spend what remains and die
                self.spent[r] += self.energy[r]
                self._kill(int(r))
            fine = paid[ok]
            self.energy[fine] = e[ok]
            self.spent[fine] += cost
            for r in fine[e[ok] <= 0.0]:
                self._kill(int(r))
            got = to[np.isin(to, paid[~ok], invert=True)]
            if not len(got):
                return
        self.deliveries += len(got)
        if self.trace is not None:
            for r in got:
                self._trace_line(ev, int(r))
        self.handler.on_receive(pkt, got, ev.tag - self.loss_db[ev.owner, got])

    def _receive_one(self, ev: Event, pkt: Packet, r: int) -> None:
        # scalar twin of the vectorised path; unicasts are most of the traffic
        if not self.alive[r]:
            return
        if not self.mains[r]:
            cost = self.energy_model.e_elec_j_per_bit * pkt.bits
            e = self.energy[r]
            if e < cost:
                self.spent[r] += e
                self._kill(r)
                return
            self.energy[r] = e - cost
            self.spent[r] += cost
            if self.energy[r] <= 0.0:
                self._kill(r)
                return
        self.deliveries += 1
        if self.trace is not None:
            self._trace_line(ev, r)
        self.handler.on_receive(pkt, ev.to, np.array((ev.tag - self.loss_db[ev.owner, r],)))

    # -- main loop --------------------------------------------------------

    def run(self, until_s: Optional[float] = None) -> TraceSummary:
        stop = self.end_s if until_s is None else min(until_s, self.end_s)
        q = self._queue
        handler = self.handler
        while q and q[0][0] <= stop:
            t, _, ev = heapq.heappop(q)
            assert t >= self.now, "event fired out of order"
            self.now = t
            self.events_processed += 1
            if ev.kind is EventKind.DELIVER:
                self._receive(ev)
            else:
                if self.trace is not None:
                    self._trace_line(ev, None)
                handler.on_event(ev)
        if stop > self.now:
            self.now = stop
        return self.summary()

    def summary(self) -> TraceSummary:
        return TraceSummary(self.events_processed, self.now, self.deliveries,
                            tuple(float(e) for e in self.energy),
                            int(self.alive[1:].sum()))

    def _trace_line(self, ev: Event, receiver: Optional[int]) -> None:
        if ev.kind is EventKind.DELIVER:
            p = ev.packet
            self.trace.write(f"t={ev.fire_at_s:.6f} kind=deliver src={p.src} "
                             f"dst={receiver} pkt={p.kind.value} bytes={p.payload_bytes}\n")
        else:
            owner = "-" if ev.owner is None else ev.owner
            self.trace.write(f"t={ev.fire_at_s:.6f} kind={ev.kind.value} src={owner} "
                             f"dst=- pkt=- bytes=0\n")

    # -- accounting -------------------------------------------------------

    def energy_consumed(self) -> float:
        return float(self.spent.sum())

    def conservation_error(self) -> float:
        """Relative mismatch between the energy drop and the debit ledger."""
        # per-node drops first: differencing two network totals loses the small ones
        drop = float(np.sum(self.energy_init - self.energy))
        spent = self.energy_consumed()
        scale = max(abs(drop), abs(spent), 1e-300)
        return abs(drop - spent) / scale

    def alive_ids(self) -> Sequence[int]:
        return [int(i) for i in np.flatnonzero(self.alive[1:]) + 1]
