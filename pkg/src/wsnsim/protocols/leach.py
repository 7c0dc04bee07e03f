"""LEACH: per-round randomized self-election and single-hop heads."""
from __future__ import annotations

import math
from typing import Dict, List, Sequence, Set

import numpy as np

from ..core import BS_ID, InvalidParamsError, PacketKind
from ..engine import EventKind
from .base import ProtocolBase
from .esrpsdc import build_schedule


def leach_threshold(p: float, round: int, in_g: bool) -> float:
    """Self-election probability; ``round`` counts from 0."""
    if not 0 < p < 1:
        raise InvalidParamsError(f"p must be in (0, 1), got {p}")
    if not in_g:
        return 0.0
    w = math.ceil(1 / p - 1e-12)
    return min(1.0, p / (1 - p * (round % w)))


def leach_elect(node_ids: Sequence[int], round: int, p: float,
                last_head_round: Dict[int, int], rng) -> List[int]:
    """Nodes that make themselves heads this round (one draw per node, id order)."""
    w = math.ceil(1 / p - 1e-12)
    heads = []
    for i in sorted(node_ids):
        last = last_head_round.get(i)
        in_g = last is None or round - last >= w
        if rng.random() < leach_threshold(p, round, in_g):
            heads.append(i)
    return heads


class Leach(ProtocolBase):
    name = "leach"

    def __init__(self, sim, cfg, ledger, adversary, traffic, rng, *, p: float = 0.05,
                 setup_s: float = 0.1):
        super().__init__(sim, cfg, ledger, adversary, traffic, rng)
        self.p = p
        self.setup_s = setup_s
        self.advert_power = self.powers[min(cfg.advert_level, len(self.powers) - 1)]
        proc = sim.processing_delay_s
        ser = cfg.aggregate_bytes * 8 / sim.radio.bandwidth_bps
        self.slot_s = 2 * ser + 2 * proc
        self.ch_slot_s = ser + proc
        self.last_head: Dict[int, int] = {}
        self.heads: List[int] = []
        self.lure_heads: List[int] = []
        self.head_set: Set[int] = set()
        self.parent = np.full(self.n, -1)
        self.parent_power = np.zeros(self.n)
        self.adv_rssi = np.full((self.n, self.n), -np.inf)
        self.lurer = np.zeros(self.n, dtype=bool)
        self.pending: Dict[int, List] = {}
        self.slot_of: Dict[int, int] = {}
        self.round = 0
        self.round_start = 0.0
        self.frame_start = math.inf
        self.head_counts: List[int] = []

    def begin(self) -> None:
        self.sim.at(0.0, EventKind.ROUND, tag=("round", 1))

    def _p_round(self, k: int) -> None:
        sim = self.sim
        now = sim.now
        self.round = k
        self.round_start = now
        alive = [i for i in range(1, self.n) if sim.alive[i]]
        heads = leach_elect(alive, k - 1, self.p, self.last_head, self.rng)
        self.head_counts.append(len(heads))
        for h in heads:
            self.last_head[h] = k - 1
        self.heads = heads
        self.head_set = set(heads)
        self.parent[:] = -1
        self.adv_rssi.fill(-np.inf)
        self.lurer[:] = False
        self.pending = {h: [set(), 0] for h in heads}
        self.slot_of = {}
        # every active attacker poses as a head, elected or not
        fakes = [m for m in np.flatnonzero(self.malicious)
                 if sim.alive[m] and m not in self.head_set and self.adv.lures(m, now)]
        self.lure_heads = heads + [int(m) for m in fakes]
        for h in self.lure_heads:
            if self.malicious[h] and self.adv.lures(h, now):
                self.lurer[h] = True
            sim.timer(now + self.jitter(), h, ("advert",))
        sim.phase(now + 0.03, ("join",))

    def _t_advert(self, h: int) -> None:
        self.send(self.control(PacketKind.CH_ADVERT, h), h, self.advert_power)

    def _rx_ch_advert(self, pkt, receivers, rssi) -> None:
        self.adv_rssi[receivers, pkt.src] = rssi

    def _rx_join_confirm(self, pkt, receivers, rssi) -> None:
        pass

    def _p_join(self) -> None:
        sim = self.sim
        heads = np.array(self.lure_heads, dtype=int)
        joiners = [i for i in range(1, self.n)
                   if sim.alive[i] and i not in self.head_set and not self.malicious[i]]
        if len(heads) and joiners:
            rows = np.array(joiners)
            rssi = self.adv_rssi[np.ix_(rows, heads)]
            eff = rssi + np.where(self.lurer[heads], self.adv.cfg.snr_bonus_db, 0.0)
            best = np.argmax(eff, axis=1)
            idx = np.arange(len(rows))
            got = rssi[idx, best]
            # same rule as min_tx_power_for, done for every joiner at once
            radio = sim.radio
            levels = np.asarray(self.powers)
            ok = levels[None, :] - (self.advert_power - got)[:, None] \
                >= radio.rx_threshold_dbm + radio.margin_db
            usable = np.isfinite(eff[idx, best]) & ok.any(axis=1)
            power = levels[np.argmax(ok, axis=1)]
            for r in np.flatnonzero(usable):
                node, head, p = joiners[r], int(heads[best[r]]), float(power[r])
                if len(self.send(self.control(PacketKind.JOIN_CONFIRM, node, head), node, p,
                                 self.jitter())):
                    self.parent[node] = head
                    self.parent_power[node] = p
        sim.phase(sim.now + 0.03, ("schedule",))

    def _p_schedule(self) -> None:
        sim = self.sim
        longest = 0
        order = np.argsort(self.parent, kind="stable")
        cut = np.searchsorted(self.parent[order], [-0.5, self.n])
        groups: Dict[int, List[int]] = {}
        for i in order[cut[0]:cut[1]]:
            groups.setdefault(int(self.parent[i]), []).append(int(i))
        for h in self.lure_heads:
            if not sim.alive[h]:
                continue
            members = groups.get(h, [])
            if not members:
                # nobody joined, nothing to announce
                continue
            sched = build_schedule(members, self.slot_s)
            for n, s in sched.slots:
                self.slot_of[n] = s
            longest = max(longest, len(sched.slots))
            self.send(self.control(PacketKind.TDMA_SCHEDULE, h, slots=len(sched.slots)), h,
                      self.advert_power, self.jitter())
        self.frame_start = self.round_start + self.setup_s
        self.frame_len = longest * self.slot_s
        t0 = self.frame_start
        for node in sorted(self.buffer):
            if self.buffer[node]:
                self._arm(node)
        for m, held in sorted(self.held.items()):
            if held and sim.alive[m]:
                sim.timer(t0 + self.jitter(), m, ("reinject",))
        for h in self.heads:
            n_slots = len(groups.get(h, ()))
            sim.timer(t0 + n_slots * self.slot_s + self.ch_slot_s, h, ("flush",))
        end = t0 + self.frame_len + 2 * self.ch_slot_s
        nxt = max(self.round_start + self.cfg.round_period_s, end + 0.01)
        sim.at(nxt, EventKind.ROUND, tag=("round", self.round + 1))

    def _arm(self, node: int) -> None:
        if node in self.head_set:
            return
        slot = self.slot_of.get(node)
        if self.parent[node] >= 0 and slot is not None:
            t = self.frame_start + slot * self.slot_s
        else:
            # no head heard: talk to the BS directly at the start of the frame
            t = self.frame_start + self.jitter()
        if t >= self.sim.now:
            self.sim.timer(t, node, ("slot",))

    def _t_gen(self, node: int, payload: int) -> None:
        super()._t_gen(node, payload)
        if self.buffer[node] and len(self.buffer[node]) == 1 and self.frame_start <= self.sim.now:
            self._arm(node)

    def _t_slot(self, node: int) -> None:
        buf = self.buffer[node]
        if not buf or not self.sim.alive[node]:
            return
        pkt = buf.pop(0)
        parent = int(self.parent[node])
        if parent < 0:
            p = self.power_to(node, BS_ID) or self.powers[-1]
            self.send(pkt.forwarded(node, BS_ID), node, p)
            return
        if not len(self.send(pkt.forwarded(node, parent), node, self.parent_power[node])):
            buf.insert(0, pkt)

    def _rx_data(self, pkt, receivers, rssi) -> None:
        r = int(receivers[0])
        if r == BS_ID:
            self.credit_bs(pkt)
        elif self.lurer[r]:
            self.intercept(r, pkt)
        elif r in self.pending:
            pend = self.pending[r]
            pend[0] |= pkt.sources
            pend[1] += pkt.bits

    _rx_aggregate = _rx_data

    def _t_flush(self, h: int) -> None:
        sim = self.sim
        if not sim.alive[h] or self.lurer[h]:
            return
        pend = self.pending[h]
        for p in self.buffer.pop(h, []):
            pend[0] |= p.sources
            pend[1] += p.bits
        if not pend[0]:
            return
        self.debit_aggregation(h, pend[1])
        if not sim.alive[h]:
            return
        power = self.power_to(h, BS_ID) or self.powers[-1]
        agg = self.aggregate(h, BS_ID, frozenset(pend[0]), sim.now, 1)
        self.pending[h] = [set(), 0]
        self.send(agg, h, power)

    def _t_reinject(self, m: int) -> None:
        honest = [h for h in self.heads if not self.malicious[h] and self.sim.alive[h]]
        if not honest or not self.sim.alive[m]:
            return
        ids = self.release_held(m)
        dist = self.sim.dist[m]
        for h in sorted(honest, key=lambda h: (dist[h], h)):
            p = self.power_to(m, h)
            if p is None:
                break
            if len(self.send(self.aggregate(m, h, ids, self.sim.now, 1), m, p)):
                return
        self.held[m] |= ids
