"""PEGASIS: one greedy chain, token passing, and a rotating leader."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Set, Tuple

import numpy as np

from ..core import BS_ID, InvalidParamsError, PacketKind
from ..engine import EventKind
from .base import ProtocolBase


@dataclass(frozen=True)
class Chain:
    order: Tuple[int, ...]
    leader_index: int = 0

    def __post_init__(self):
        if len(set(self.order)) != len(self.order):
            raise InvalidParamsError("a node appears twice in the chain")
        if self.order and not 0 <= self.leader_index < len(self.order):
            raise InvalidParamsError("leader index out of range")

    def __len__(self):
        return len(self.order)

    @property
    def leader(self) -> int:
        return self.order[self.leader_index]


def pegasis_build_chain(node_ids: Sequence[int], pos: np.ndarray, bs_pos) -> Chain:
    """Greedy chain from the node farthest from the BS, nearest neighbour each step.

    Ties (equal distances) go to the lower node id.
    """
    ids = np.array(sorted(i for i in node_ids if i != BS_ID), dtype=int)
    if len(ids) < 2:
        raise InvalidParamsError("a chain needs at least two nodes")
    pts = np.asarray(pos, dtype=float)[ids]
    d_bs = np.hypot(*(pts - np.asarray(bs_pos, dtype=float)).T)
    # argmax returns the first maximum, which is the lowest id
    cur = int(np.argmax(d_bs))
    used = np.zeros(len(ids), dtype=bool)
    used[cur] = True
    order = [cur]
    for _ in range(len(ids) - 1):
        d = np.hypot(*(pts - pts[cur]).T)
        d[used] = np.inf
        cur = int(np.argmin(d))
        used[cur] = True
        order.append(cur)
    return Chain(tuple(int(ids[j]) for j in order))


def pegasis_leader(chain: Chain, round: int) -> Chain:
    return Chain(chain.order, round % len(chain))


def pegasis_round_plan(chain: Chain) -> List[Tuple[int, int]]:
    """(sender, receiver) hops of a full round: both ends fuse toward the leader, then BS."""
    o, k = chain.order, chain.leader_index
    hops = [(o[j], o[j + 1]) for j in range(k)]
    hops += [(o[j], o[j - 1]) for j in range(len(o) - 1, k, -1)]
    hops.append((o[k], BS_ID))
    return hops


def chain_length(chain: Chain, pos: np.ndarray) -> float:
    o = chain.order
    return float(sum(np.hypot(*(pos[a] - pos[b])) for a, b in zip(o, o[1:])))


class Pegasis(ProtocolBase):
    """Every chain node sends one fused packet per round, data or not.

    The downstream neighbour cannot tell silence from loss, so the chain
    packet always goes out; it simply carries no source ids when the node
    had nothing to report.
    """

    name = "pegasis"

    def __init__(self, sim, cfg, ledger, adversary, traffic, rng):
        super().__init__(sim, cfg, ledger, adversary, traffic, rng)
        proc = sim.processing_delay_s
        bw = sim.radio.bandwidth_bps
        self.hop_s = cfg.aggregate_bytes * 8 / bw + proc
        self.token_s = cfg.control_bytes * 8 / bw + proc
        self.chain: Chain = Chain(())
        self.carry: Dict[int, Set[int]] = {}
        self.leftover: Dict[int, Set[int]] = {}
        self.round = 0
        self.rebuilds = 0
        self.chains: List[Chain] = []

    def begin(self) -> None:
        self._rebuild()
        self.sim.at(0.0, EventKind.ROUND, tag=("round", 1))

    def _rebuild(self) -> None:
        alive = [i for i in range(1, self.n) if self.sim.alive[i]]
        if len(alive) < 2:
            self.chain = Chain(tuple(alive))
            return
        self.chain = pegasis_build_chain(alive, self.sim.pos, self.sim.pos[BS_ID])
        self.rebuilds += 1

    def _p_round(self, k: int) -> None:
        sim = self.sim
        now = sim.now
        self.round = k
        if any(not sim.alive[i] for i in self.chain.order):
            self._rebuild()
        if len(self.chain) < 2:
            return
        self.chain = pegasis_leader(self.chain, k - 1)
        self.chains.append(self.chain)
        o, lead = self.chain.order, self.chain.leader_index
        # token goes out from the leader to both ends
        for side in (range(lead, 0, -1), range(lead, len(o) - 1)):
            step = -1 if side.step < 0 else 1
            for j, pos in enumerate(side):
                a, b = o[pos], o[pos + step]
                p = self.power_to(a, b) or self.powers[-1]
                self.send(self.control(PacketKind.TOKEN, a, b), a, p, j * self.token_s)
        span = max(lead, len(o) - 1 - lead)
        data_start = now + span * self.token_s + self.token_s
        self.carry = {}
        for m in sorted(self.held):
            # a sinkhole lets last round's held traffic continue down the chain
            if sim.alive[m]:
                self.leftover.setdefault(m, set()).update(self.release_held(m))
        # farthest positions go first; each hop closer to the leader waits one slot
        for step in range(span, 0, -1):
            sim.phase(data_start + (span - step) * self.hop_s, ("hop", k, step))
        end = data_start + span * self.hop_s
        sim.phase(end, ("lead", k))
        nxt = max(now + self.cfg.round_period_s, end + self.hop_s + 0.01)
        sim.at(nxt, EventKind.ROUND, tag=("round", k + 1))

    def _holdings(self, node: int) -> Tuple[frozenset, int]:
        ids: Set[int] = set(self.carry.pop(node, ()))
        ids |= self.leftover.pop(node, set())
        bits = 0
        for p in self.buffer.pop(node, []):
            ids |= p.sources
            bits += p.bits
        return frozenset(ids), bits

    def _p_hop(self, k: int, step: int) -> None:
        """Positions ``step`` hops from the leader pass their fused packet inward."""
        o, lead = self.chain.order, self.chain.leader_index
        for j, nb in ((lead - step, lead - step + 1), (lead + step, lead + step - 1)):
            if 0 <= j < len(o):
                self._pass(o[j], o[nb])

    def _pass(self, node: int, nb: int) -> None:
        sim = self.sim
        if not sim.alive[node]:
            return
        ids, bits = self._holdings(node)
        self.debit_aggregation(node, bits)
        if not sim.alive[node]:
            return
        p = self.power_to(node, nb) or self.powers[-1]
        pkt = self.aggregate(node, nb, ids, sim.now, 1)
        if not len(self.send(pkt, node, p)) and ids and sim.alive[node]:
            # neighbour gone: keep it for the next round's chain
            self.leftover.setdefault(node, set()).update(ids)

    def _rx_aggregate(self, pkt, receivers, rssi) -> None:
        r = int(receivers[0])
        if r == BS_ID:
            if pkt.sources:
                self.credit_bs(pkt)
            return
        if not pkt.sources:
            return
        if self.malicious[r] and self.adv.is_active(r, self.sim.now):
            self.intercept(r, pkt)
            return
        self.carry.setdefault(r, set()).update(pkt.sources)

    def _p_lead(self, k: int) -> None:
        sim = self.sim
        node = self.chain.leader
        if not sim.alive[node]:
            return
        ids, bits = self._holdings(node)
        if ids and self.malicious[node] and self.adv.is_active(node, sim.now):
            self.held[node] |= ids
            ids = frozenset()
        self.debit_aggregation(node, bits)
        if not sim.alive[node]:
            return
        p = self.power_to(node, BS_ID) or self.powers[-1]
        self.send(self.aggregate(node, BS_ID, ids, sim.now, 1), node, p)
