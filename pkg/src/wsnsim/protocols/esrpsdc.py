"""SNR-driven dynamic clustering with energy-gated head election and sinkhole detection.

The module has two layers. The free functions are the protocol's pure
decisions (level assignment, partitioning, election, member IDs, TDMA
schedules, next-hop choice) and are what the unit tests pin down. The
``Esrpsdc`` class strings them together as an event-driven state machine
on top of the simulator.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from ..adversary import FlowResponse, flag_affected, locate_sinkhole
from ..core import (BS_ID, NEVER_HEAD, ClusterTable, InvalidParamsError,
                    LevelBand, NodeState, Packet, PacketKind, Position, SimError,
                    ThresholdParams, ch_threshold)
from ..engine import EventKind
from ..radio import RadioConfig, UnreachableError, min_tx_power_for, range_for_power
from .base import ProtocolBase

log = logging.getLogger(__name__)


class TooFewNodesError(InvalidParamsError):
    pass


class ClusterDeadError(SimError):
    pass


# -- pure protocol decisions ------------------------------------------------

def bs_level_sweep(dist_to_bs: Sequence[float], cfg: RadioConfig) -> Dict[int, Optional[int]]:
    """Level each node adopts from the first BS beacon it hears.

    ``dist_to_bs[i]`` is node i's distance to the BS; index 0 is the BS
    itself and is skipped. Nodes out of reach of every level map to None.
    """
    radii = [range_for_power(p, cfg) for p in cfg.tx_power_dbm]
    levels: Dict[int, Optional[int]] = {}
    for i, d in enumerate(dist_to_bs):
        if i == BS_ID:
            continue
        levels[i] = next((lvl for lvl, r in enumerate(radii, start=1) if d <= r), None)
    return levels


@dataclass
class Partition:
    cluster_of: Dict[int, int]
    members: List[List[int]]
    tables: List[ClusterTable]


def partition_clusters(node_ids: Sequence[int], pos: np.ndarray, n_clusters: int) -> Partition:
    """Cut the field into a near-square grid of balanced sectors.

    Nodes are sorted into vertical strips by x (strip sizes proportional to
    the number of cells each strip holds), then each strip is cut by y.
    Uniform deployments therefore give clusters whose sizes differ by at
    most one.
    """
    if n_clusters < 1:
        raise InvalidParamsError("n_clusters must be >= 1")
    ids = [i for i in node_ids if i != BS_ID]
    if len(ids) < n_clusters:
        raise TooFewNodesError(f"{len(ids)} nodes cannot fill {n_clusters} clusters")
    cols = max(1, int(math.isqrt(n_clusters)))
    cells = [n_clusters // cols + (1 if j < n_clusters % cols else 0) for j in range(cols)]
    by_x = sorted(ids, key=lambda i: (pos[i][0], i))
    n = len(ids)
    bounds = [0]
    acc = 0
    for c in cells:
        acc += c
        bounds.append(round(n * acc / n_clusters))
    members: List[List[int]] = []
    for j, c in enumerate(cells):
        strip = sorted(by_x[bounds[j]:bounds[j + 1]], key=lambda i: (pos[i][1], i))
        for chunk in np.array_split(np.array(strip, dtype=int), c):
            members.append(sorted(int(i) for i in chunk))
    cluster_of = {i: cid for cid, ms in enumerate(members) for i in ms}
    tables = [ClusterTable(cid, active_count=len(ms)) for cid, ms in enumerate(members)]
    return Partition(cluster_of, members, tables)


def elect_heads(table: ClusterTable, candidates: Sequence[NodeState], round: int,
                params: ThresholdParams, bands: Mapping[int, LevelBand],
                d_bs: Mapping[int, float], rng) -> Tuple[ClusterTable, bool]:
    """Pick the cluster head and its standby.

    Every candidate draws u in id order and is eligible when u falls under
    its threshold. The two richest eligible nodes win; if fewer than two
    pass, the two richest alive nodes win regardless (the returned flag is
    then True). Energy ties go to the lower id.
    """
    alive = sorted((c for c in candidates if c.alive), key=lambda c: c.id)
    if len(alive) < 2:
        raise ClusterDeadError(f"cluster {table.cluster_id} has {len(alive)} alive candidates")
    eligible = []
    for c in alive:
        u = rng.random()
        if u < ch_threshold(c, round, bands[c.level], params, d_bs[c.id]):
            eligible.append(c)
    fallback = len(eligible) < 2
    pool = alive if fallback else eligible
    ranked = sorted(pool, key=lambda c: (-c.energy_j, c.id))
    ch, nxt = ranked[0], ranked[1]
    updated = ClusterTable(table.cluster_id, table.active_count, table.sleep_count,
                           ch=(ch.id, ch.energy_j), next_ch=(nxt.id, nxt.energy_j))
    return updated, fallback


@dataclass(frozen=True)
class MemberId:
    bytes: bytes
    depth: int
    prefix_len: int = 2
    m: int = 1

    def __post_init__(self):
        if not 0 <= self.depth <= 2:
            raise InvalidParamsError("member id depth must be 0, 1 or 2")
        if len(self.bytes) != self.prefix_len + self.depth * self.m:
            raise InvalidParamsError("member id length does not match its depth")

    def parent_prefix(self) -> bytes:
        return self.bytes[:len(self.bytes) - self.m] if self.depth else self.bytes


def assign_member_ids(cluster_id: int, ch: int, parent_of: Mapping[int, int], m: int,
                      rng) -> Tuple[Dict[int, MemberId], int]:
    """Hierarchical IDs for one cluster: cluster id, then an m-byte block per hop.

    ``parent_of`` maps each member to the CH (1-hop) or its relay (2-hop).
    Suffixes are random; when two siblings draw the same block the CH hands
    the later one a fresh draw. Returns the ids and how many clashes were
    resolved.
    """
    space = 256 ** m
    root = MemberId(cluster_id.to_bytes(2, "big"), 0, m=m)
    ids = {ch: root}
    clashes = 0
    one_hop = sorted(n for n, p in parent_of.items() if p == ch)
    two_hop = sorted(n for n, p in parent_of.items() if p != ch)
    for group in (one_hop, two_hop):
        used: Dict[bytes, Set[bytes]] = {}
        for node in group:
            prefix = ids[parent_of[node]].bytes
            taken = used.setdefault(prefix, set())
            if len(taken) >= space:
                raise InvalidParamsError(f"{m}-byte suffix space exhausted under one parent")
            block = int(rng.integers(0, space)).to_bytes(m, "big")
            tries = 0
            while block in taken:
                clashes += 1
                tries += 1
                if tries > 64:
                    block = next(v.to_bytes(m, "big") for v in range(space)
                                 if v.to_bytes(m, "big") not in taken)
                    break
                block = int(rng.integers(0, space)).to_bytes(m, "big")
            taken.add(block)
            depth = ids[parent_of[node]].depth + 1
            ids[node] = MemberId(prefix + block, depth, m=m)
    return ids, clashes


@dataclass(frozen=True)
class TdmaSchedule:
    round_len_s: float
    slots: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        idx = [s for _, s in self.slots]
        if idx != list(range(len(idx))):
            raise InvalidParamsError("slot indices must run 0..n-1 without gaps")
        nodes = [n for n, _ in self.slots]
        if len(set(nodes)) != len(nodes):
            raise InvalidParamsError("a member appears in two slots")

    def slot_of(self, node: int) -> Optional[int]:
        for n, s in self.slots:
            if n == node:
                return s
        return None


def build_schedule(members: Iterable[int], slot_s: float) -> TdmaSchedule:
    order = sorted(set(members))
    return TdmaSchedule(len(order) * slot_s, tuple((n, i) for i, n in enumerate(order)))


@dataclass(frozen=True)
class HopCandidate:
    node: int
    level: int
    hop: float
    snr_db: float


def select_next_hop(level: int, candidates: Iterable[HopCandidate],
                    exclude: Set[int] = frozenset()) -> Optional[HopCandidate]:
    """Next hop for a level-``level`` head.

    Prefer heads exactly one level down, by fewest hops to the BS, then
    stronger SNR, then lower id. Failing that, any lower level will do.
    """
    pool = [c for c in candidates if c.node not in exclude and c.level < level]
    if not pool:
        return None
    key = lambda c: (c.hop, -c.snr_db, c.node)
    below = [c for c in pool if c.level == level - 1]
    return min(below or pool, key=key)


def should_abdicate(energy_j: float, at_election_j: float, fraction: float) -> bool:
    return energy_j < fraction * at_election_j


# -- event-driven protocol --------------------------------------------------

@dataclass(frozen=True)
class EsrpsdcParams:
    threshold: ThresholdParams = field(default_factory=ThresholdParams)
    member_id_bytes: int = 1
    epoch_rounds: int = 10
    abdicate_fraction: float = 0.5
    detect_window: int = 5
    detect_fraction: float = 0.5
    detection: bool = True
    setup_s: float = 0.25

    def __post_init__(self):
        if self.member_id_bytes < 1:
            raise InvalidParamsError("member_id_bytes must be >= 1")
        if self.epoch_rounds < 1 or self.detect_window < 1:
            raise InvalidParamsError("epoch_rounds and detect_window must be >= 1")
        if not 0 < self.abdicate_fraction < 1:
            raise InvalidParamsError("abdicate_fraction must be in (0, 1)")


ADVERT_STAGE_S = 0.02
FLOOD_WAIT_S = 0.3


class Esrpsdc(ProtocolBase):
    name = "esrpsdc"

    def __init__(self, sim, cfg, ledger, adversary, traffic, rng, *, n_clusters: int,
                 params: EsrpsdcParams = EsrpsdcParams()):
        super().__init__(sim, cfg, ledger, adversary, traffic, rng)
        self.params = params
        self.n_clusters = n_clusters
        n = self.n
        radio = sim.radio
        self.bands = {b.level: b for b in radio.levels}
        self.n_levels = len(self.bands)
        self.advert_power = self.powers[min(cfg.advert_level, len(self.powers) - 1)]
        self.low_power = self.powers[0]

        proc = sim.processing_delay_s
        ser = cfg.aggregate_bytes * 8 / radio.bandwidth_bps
        self.slot_s = 2 * ser + 2 * proc
        self.ch_slot_s = ser + proc
        self.stage_s = n_clusters * self.ch_slot_s

        self.level = np.zeros(n, dtype=int)
        self.is_ch = np.zeros(n, dtype=bool)
        self.parent = np.full(n, -1)
        self.root = np.full(n, -1)
        self.depth = np.full(n, -1)
        self.parent_power = np.zeros(n)
        self.rounds_since_ch = np.full(n, NEVER_HEAD, dtype=np.int64)
        self.adv_rssi = np.full((n, n), -np.inf)
        self.state_rssi = np.full((n, n), -np.inf)
        self.lurer = np.zeros(n, dtype=bool)
        self.claims: Dict[int, Tuple[int, float]] = {}
        self.invalid: Set[int] = set()

        self.partition: Optional[Partition] = None
        self.cluster_members: List[List[int]] = []
        self.tables: Dict[int, ClusterTable] = {}
        self.ch_of: Dict[int, int] = {}
        self.next_of: Dict[int, Optional[int]] = {}
        self.cid_of_ch: Dict[int, int] = {}
        self.elect_energy: Dict[int, float] = {}
        self.hop: Dict[int, float] = {}
        self.ch_next: Dict[int, Optional[int]] = {}
        self.ch_next_power: Dict[int, float] = {}
        self.attached: Dict[int, Set[int]] = {}
        self.schedules: Dict[int, TdmaSchedule] = {}
        self.member_ids: Dict[int, Dict[int, MemberId]] = {}
        self.slot_owner: Dict[int, Tuple[int, int]] = {}
        self.pending: Dict[int, List] = {}
        self.flushed: Set[int] = set()

        self.round = 0
        self.epoch = 0
        self.round_starts: List[float] = []
        self.frame_start = math.inf
        self.slot_timer: Set[int] = set()
        self.repair_set: Set[int] = set()
        self.promote: Set[int] = set()
        self.reelect: Set[int] = set()

        self.fallbacks = 0
        self.id_clashes = 0
        self.orphans = 0
        self.forward_log: List[Tuple[int, int, int, int]] = []
        self.election_log: List[Tuple[int, int, bool]] = []
        self.table_log: List[ClusterTable] = []
        self.membership_log: List[Dict[int, Tuple[int, int, int]]] = []

        self.det_id = 0
        self.flood_parent: Dict[int, int] = {}
        self.responses: List[FlowResponse] = []
        self.region: Set[int] = set()
        self.responders: Set[int] = set()
        self.first_tp_s: Optional[float] = None

    # -- initialisation ---------------------------------------------------

    def begin(self) -> None:
        sim = self.sim
        sim.transmit(self.control(PacketKind.REQ, BS_ID), BS_ID, self.powers[-1])
        for i, p in enumerate(self.powers, start=1):
            sim.transmit(self.control(PacketKind.LEVEL_BEACON, BS_ID, level=i), BS_ID, p,
                         extra_delay_s=0.01 * i)
        bands = tuple((b.lower_m, b.upper_m) for b in self.bands.values())
        sim.transmit(self.control(PacketKind.HELLO, BS_ID, bands=bands), BS_ID,
                     self.powers[-1], extra_delay_s=0.01 * (len(self.powers) + 1))
        sim.phase(0.1, ("levels_done",))

    def _rx_level_beacon(self, pkt, receivers, rssi) -> None:
        r = receivers[(self.level[receivers] == 0) & (receivers != BS_ID)]
        self.level[r] = pkt.info["level"]

    def _p_levels_done(self) -> None:
        unreachable = int(((self.level[1:] == 0)).sum())
        if unreachable:
            log.info("%d nodes heard no level beacon", unreachable)
        ids = list(range(1, self.n))
        self.partition = partition_clusters(ids, self.sim.pos, self.n_clusters)
        self.cluster_members = [list(m) for m in self.partition.members]
        self.tables = {t.cluster_id: t for t in self.partition.tables}
        self.sim.at(self.sim.now, EventKind.ROUND, tag=("round", 1))

    # -- rounds -----------------------------------------------------------

    def _p_round(self, k: int) -> None:
        now = self.sim.now
        self.round = k
        self.round_starts.append(now)
        if (k - 1) % self.params.epoch_rounds == 0:
            self._start_epoch(now)
        else:
            self._mid_epoch_repair(now)
        self.sim.phase(now + self.params.setup_s, ("frame",))

    def _candidates(self, cid: int) -> List[NodeState]:
        sim = self.sim
        out = []
        for i in self.cluster_members[cid]:
            if (not sim.alive[i] or self.malicious[i] or i in self.blacklist
                    or self.level[i] == 0):
                continue
            e0 = sim.energy_init[i]
            out.append(NodeState(i, Position(*sim.pos[i]), min(sim.energy[i], e0), e0,
                                 level=int(self.level[i]),
                                 rounds_since_ch=int(min(self.rounds_since_ch[i], NEVER_HEAD))))
        return out

    def _elect(self, cid: int) -> Optional[int]:
        """Run an election in partition cluster ``cid``; returns the new head."""
        cands = self._candidates(cid)
        try:
            table, fb = elect_heads(self.tables[cid], cands, self.epoch, self.params.threshold,
                                    self.bands, self.sim.dist[BS_ID], self.rng)
        except ClusterDeadError:
            self._dissolve(cid, cands)
            return None
        if fb:
            self.fallbacks += 1
            log.debug("cluster %d fell back to energy ranking", cid)
        self.tables[cid] = table
        self.table_log.append(table)
        ch, nxt = table.ch[0], table.next_ch[0]
        self.election_log.append((self.epoch, ch, fb))
        self._make_ch(cid, ch)
        self.next_of[cid] = nxt
        return ch

    def _dissolve(self, cid: int, cands: List[NodeState]) -> None:
        old = self.ch_of.pop(cid, None)
        if old is not None:
            self._unmake_ch(old)
        self.next_of[cid] = None
        survivors = [i for i in self.cluster_members[cid] if self.sim.alive[i]]
        live = [c for c in range(len(self.cluster_members))
                if c != cid and any(self.sim.alive[i] for i in self.cluster_members[c])]
        if survivors and live:
            pos = self.sim.pos
            centre = pos[survivors].mean(axis=0)
            best = min(live, key=lambda c: (np.linalg.norm(
                pos[[i for i in self.cluster_members[c]]].mean(axis=0) - centre), c))
            self.cluster_members[best].extend(survivors)
            self.cluster_members[best].sort()
            for i in survivors:
                self.partition.cluster_of[i] = best
        self.cluster_members[cid] = []

    def _make_ch(self, cid: int, node: int) -> None:
        self._detach(node)
        for c in np.flatnonzero(self.parent == node):
            self.repair_set.add(int(c))
        self.ch_of[cid] = node
        self.cid_of_ch[node] = cid
        self.is_ch[node] = True
        self.elect_energy[node] = float(self.sim.energy[node])
        self.rounds_since_ch[node] = 0
        self.parent[node] = -1
        self.root[node] = node
        self.depth[node] = 0
        self.attached[node] = set()
        self.pending[node] = [set(), 0, 0]

    def _unmake_ch(self, node: int) -> None:
        self.is_ch[node] = False
        self.cid_of_ch.pop(node, None)
        self.ch_next.pop(node, None)
        self.schedules.pop(node, None)
        self.hop.pop(node, None)
        self.invalid.add(node)
        for m in self.attached.pop(node, set()):
            if self.parent[m] == node:
                self.repair_set.add(m)
        self.root[node] = -1
        self.depth[node] = -1
        self.repair_set.add(node)

    def _start_epoch(self, now: float) -> None:
        self.epoch += 1
        self.rounds_since_ch[1:] = np.minimum(self.rounds_since_ch[1:] + 1, NEVER_HEAD)
        for ch in list(self.cid_of_ch):
            self._unmake_ch(ch)
        self.ch_of.clear()
        self.adv_rssi.fill(-np.inf)
        self.state_rssi.fill(-np.inf)
        self.lurer[:] = False
        self.claims.clear()
        self.invalid.clear()
        self.parent[:] = -1
        self.root[:] = -1
        self.depth[:] = -1
        self.attached = {m: set() for m in np.flatnonzero(self.malicious)}
        self.slot_owner.clear()
        self.schedules.clear()
        self.member_ids.clear()
        self.promote.clear()
        self.reelect.clear()
        for cid in range(len(self.cluster_members)):
            if self.cluster_members[cid]:
                self._elect(cid)
        joining = [i for i in range(1, self.n) if self.sim.alive[i] and not self.malicious[i]
                   and not self.is_ch[i] and i not in self.blacklist]
        self.repair_set = set()
        self._advertise(now, list(self.ch_of.values()), lure=True)
        self._schedule_join(now + self.n_levels * ADVERT_STAGE_S + 0.01, joining,
                            changed=set(self.ch_of.values()))

    def _advertise(self, now: float, heads: Iterable[int], lure: bool) -> None:
        for ch in heads:
            lvl = int(self.level[ch])
            self.sim.timer(now + (lvl - 1) * ADVERT_STAGE_S + self.jitter(), ch, ("advert",))
        if lure:
            for m in np.flatnonzero(self.malicious):
                if (self.adv.lures(m, now) and self.sim.alive[m] and m not in self.blacklist
                        and self.level[m] > 0):
                    lvl = int(self.level[m])
                    self.sim.timer(now + (lvl - 1) * ADVERT_STAGE_S + self.jitter(), int(m),
                                   ("fake_advert",))

    def _schedule_join(self, t: float, nodes: Iterable[int], changed: Set[int]) -> None:
        self.sim.phase(t, ("join1", tuple(sorted(nodes)), tuple(sorted(changed))))

    # -- adverts and joining ----------------------------------------------

    def _hop_candidates(self, node: int) -> List[HopCandidate]:
        row = self.adv_rssi[node]
        noise = self.sim.radio.noise_floor_dbm
        out = []
        for s, (lvl, hop) in self.claims.items():
            if s in self.blacklist or s in self.invalid or not np.isfinite(row[s]):
                continue
            bonus = self.adv.cfg.snr_bonus_db if self.lurer[s] else 0.0
            out.append(HopCandidate(s, lvl, hop, row[s] - noise + bonus))
        return out

    def _choose_next(self, ch: int, exclude: Set[int]) -> Optional[Tuple[int, float, float]]:
        """(next hop, tx power, hop count) for head ``ch``; BS when nothing better."""
        lvl = int(self.level[ch])
        if lvl > 1:
            best = select_next_hop(lvl, self._hop_candidates(ch), exclude | self.blacklist)
            if best is not None:
                try:
                    p = min_tx_power_for(self.adv_rssi[ch, best.node], self.advert_power,
                                         self.sim.radio)
                except UnreachableError:
                    p = None
                if p is not None:
                    return best.node, p, best.hop + 1
        if BS_ID in exclude:
            return None
        # the BS counts as level 0, but only inside advert range; beyond it
        # the head has no route and its aggregate is dropped
        p = self.power_to(ch, BS_ID)
        if p is None or p > self.advert_power:
            return None
        return BS_ID, p, 1

    def _t_advert(self, ch: int) -> None:
        if not self.sim.alive[ch] or not self.is_ch[ch]:
            return
        nxt = self._choose_next(ch, set())
        if nxt is None:
            self.ch_next[ch] = None
            self.hop[ch] = math.inf
        else:
            self.ch_next[ch], self.ch_next_power[ch], self.hop[ch] = nxt
        self.claims[ch] = (int(self.level[ch]), self.hop[ch])
        self.invalid.discard(ch)
        pkt = self.control(PacketKind.CH_ADVERT, ch, level=int(self.level[ch]),
                           hop=self.hop[ch], cluster=self.cid_of_ch[ch])
        self.send(pkt, ch, self.advert_power)

    def _t_fake_advert(self, m: int) -> None:
        if not self.sim.alive[m] or m in self.blacklist:
            return
        self.lurer[m] = True
        self.claims[m] = (int(self.level[m]), 1)
        self.invalid.discard(m)
        pkt = self.control(PacketKind.CH_ADVERT, m, level=int(self.level[m]), hop=1,
                           cluster=-1)
        self.send(pkt, m, self.advert_power)

    def _rx_ch_advert(self, pkt, receivers, rssi) -> None:
        self.adv_rssi[receivers, pkt.src] = rssi

    def _rx_state_msg(self, pkt, receivers, rssi) -> None:
        self.state_rssi[receivers, pkt.src] = rssi

    def _rx_abdicate(self, pkt, receivers, rssi) -> None:
        self.invalid.add(pkt.src)

    def _valid_heads(self) -> np.ndarray:
        cols = np.array([s for s in self.claims
                         if s not in self.blacklist and s not in self.invalid], dtype=int)
        return cols

    def _p_join1(self, nodes: Tuple[int, ...], changed: Tuple[int, ...]) -> None:
        sim = self.sim
        changed = set(changed)
        joiners = [i for i in nodes if sim.alive[i] and not self.is_ch[i] and self.parent[i] < 0]
        cols = self._valid_heads()
        if len(joiners) and len(cols):
            rows = np.array(joiners)
            rssi = self.adv_rssi[np.ix_(rows, cols)]
            bonus = np.where(self.lurer[cols], self.adv.cfg.snr_bonus_db, 0.0)
            eff = rssi + bonus
            order = np.argsort(-eff, axis=1, kind="stable")
            for r, node in enumerate(joiners):
                for j in order[r, :3]:
                    if not np.isfinite(eff[r, j]):
                        break
                    head = int(cols[j])
                    try:
                        p = min_tx_power_for(rssi[r, j], self.advert_power, sim.radio)
                    except UnreachableError:
                        continue
                    pkt = self.control(PacketKind.JOIN_CONFIRM, node, head)
                    if len(self.send(pkt, node, p, self.jitter())):
                        self.parent[node] = head
                        self.root[node] = head
                        self.depth[node] = 1
                        self.parent_power[node] = p
                        changed.add(head)
                        self.send(self.control(PacketKind.STATE_MSG, node, root=head), node,
                                  self.low_power, self.cfg.jitter_s + self.jitter())
                        break
        self.sim.phase(sim.now + 0.03, ("join2", tuple(joiners), tuple(sorted(changed))))

    def _p_join2(self, nodes: Tuple[int, ...], changed: Tuple[int, ...]) -> None:
        sim = self.sim
        changed = set(changed)
        left = [i for i in nodes if sim.alive[i] and self.parent[i] < 0 and not self.is_ch[i]]
        relays = np.array([i for i in range(1, self.n) if self.depth[i] == 1
                           and not self.malicious[i] and i not in self.blacklist
                           and sim.alive[i]], dtype=int)
        for node in left:
            if not len(relays):
                self.orphans += 1
                continue
            row = self.state_rssi[node, relays]
            j = int(np.argmax(row))
            if not np.isfinite(row[j]):
                self.orphans += 1
                continue
            relay = int(relays[j])
            try:
                p = min_tx_power_for(row[j], self.low_power, sim.radio)
            except UnreachableError:
                self.orphans += 1
                continue
            pkt = self.control(PacketKind.JOIN_CONFIRM, node, relay, two_hop=True)
            if len(self.send(pkt, node, p, self.jitter())):
                self.parent[node] = relay
                self.root[node] = self.root[relay]
                self.depth[node] = 2
                self.parent_power[node] = p
                changed.add(int(self.root[relay]))
        self.sim.phase(sim.now + 0.03, ("schedule", tuple(sorted(changed))))

    def _rx_join_confirm(self, pkt, receivers, rssi) -> None:
        r = int(receivers[0])
        self.attached.setdefault(r, set()).add(pkt.src)

    def _members_of(self, head: int) -> Dict[int, int]:
        """member -> parent for everyone rooted at ``head``."""
        idx = np.flatnonzero((self.root == head) & (self.depth > 0))
        tree = {int(i): int(self.parent[i]) for i in idx if self.sim.alive[i]}
        # a 2-hop member whose relay is gone waits for repair
        return {i: p for i, p in tree.items() if p == head or p in tree}

    def _p_schedule(self, changed: Tuple[int, ...]) -> None:
        for head in changed:
            if not self.sim.alive[head] or head in self.blacklist:
                self.schedules.pop(head, None)
                continue
            if not (self.is_ch[head] or self.lurer[head]):
                continue
            tree = self._members_of(head)
            sched = build_schedule(tree, self.slot_s)
            self.schedules[head] = sched
            for n, s in sched.slots:
                self.slot_owner[n] = (head, s)
            if self.is_ch[head]:
                ids, clashes = assign_member_ids(self.cid_of_ch[head], head, tree,
                                                 self.params.member_id_bytes, self.rng)
                self.member_ids[head] = ids
                self.id_clashes += clashes
            pkt = self.control(PacketKind.TDMA_SCHEDULE, head, slots=len(sched.slots))
            self.send(pkt, head, self.advert_power, self.jitter())
            relays = {p for p in tree.values() if p != head}
            for r in sorted(relays):
                self.send(self.control(PacketKind.TDMA_SCHEDULE, r, slots=len(sched.slots)),
                          r, self.low_power, self.cfg.jitter_s + self.jitter())
        self.membership_log.append(self.membership())

    def membership(self) -> Dict[int, Tuple[int, int, int]]:
        """node -> (parent, root, depth) for every attached member."""
        idx = np.flatnonzero(self.depth > 0)
        return {int(i): (int(self.parent[i]), int(self.root[i]), int(self.depth[i]))
                for i in idx}

    # -- mid-epoch repair -------------------------------------------------

    def _mid_epoch_repair(self, now: float) -> None:
        new_heads = []
        for cid in sorted(self.promote | self.reelect):
            old = self.ch_of.get(cid)
            nxt = self.next_of.get(cid)
            if old is not None:
                self._unmake_ch(old)
                self.ch_of.pop(cid, None)
            if (cid in self.promote and nxt is not None and self.sim.alive[nxt]
                    and nxt not in self.blacklist):
                self._make_ch(cid, nxt)
                self.next_of[cid] = self._standby(cid, exclude={nxt, old},
                                                  cap_j=float(self.sim.energy[nxt]))
                t = self.tables[cid]
                nx = self.next_of[cid]
                self.tables[cid] = ClusterTable(
                    cid, t.active_count, t.sleep_count,
                    ch=(nxt, float(self.sim.energy[nxt])),
                    next_ch=None if nx is None else (nx, float(self.sim.energy[nx])))
                self.table_log.append(self.tables[cid])
                new_heads.append(nxt)
            else:
                head = self._elect(cid)
                if head is not None:
                    new_heads.append(head)
        self.promote.clear()
        self.reelect.clear()
        todo = {i for i in self.repair_set if self.sim.alive[i] and not self.is_ch[i]
                and not self.malicious[i] and i not in self.blacklist}
        # 2-hop members follow their relay
        for i in list(todo):
            for c in np.flatnonzero(self.parent == i):
                if not self.is_ch[c]:
                    todo.add(int(c))
        self.repair_set = set()
        if not todo and not new_heads:
            return
        changed = set(new_heads)
        for i in todo:
            old_root = self.root[i]
            if old_root >= 0:
                changed.add(int(old_root))
            self._detach(i)
        self._advertise(now, new_heads, lure=False)
        self._schedule_join(now + self.n_levels * ADVERT_STAGE_S + 0.01, todo, changed)

    def _detach(self, node: int) -> None:
        p = self.parent[node]
        if p >= 0 and p in self.attached:
            self.attached[p].discard(node)
        self.parent[node] = -1
        self.root[node] = -1
        self.depth[node] = -1
        self.slot_owner.pop(node, None)

    def _standby(self, cid: int, exclude: Set[int], cap_j: float = math.inf) -> Optional[int]:
        """Richest eligible node that does not out-rank the head (energy <= ``cap_j``)."""
        cands = [c for c in self._candidates(cid) if c.id not in exclude
                 and not self.is_ch[c.id] and c.energy_j <= cap_j]
        if not cands:
            return None
        return min(cands, key=lambda c: (-c.energy_j, c.id)).id

    # -- data frame ---------------------------------------------------------

    def _p_frame(self) -> None:
        sim = self.sim
        now = sim.now
        self.frame_start = now
        self.flushed = set()
        self.slot_timer = set()
        lens = [len(s.slots) for h, s in self.schedules.items()
                if sim.alive[h] and h not in self.blacklist]
        max_frame = (max(lens) if lens else 0) * self.slot_s
        self.ic_start = now + max_frame + self.ch_slot_s
        for node in sorted(self.buffer):
            if self.buffer[node]:
                self._arm_slot(node)
        for m, held in sorted(self.held.items()):
            if held and sim.alive[m] and m not in self.blacklist:
                sim.timer(now + self.jitter(), m, ("reinject",))
        for ch in sorted(self.cid_of_ch):
            if not sim.alive[ch]:
                continue
            lvl = int(self.level[ch])
            t = (self.ic_start + (self.n_levels - lvl) * self.stage_s
                 + self.cid_of_ch[ch] * self.ch_slot_s)
            sim.timer(t, ch, ("flush",))
        end = self.ic_start + self.n_levels * self.stage_s + self.ch_slot_s
        sim.phase(end, ("round_end", self.round))

    def _arm_slot(self, node: int) -> None:
        if node in self.slot_timer or self.is_ch[node]:
            return
        own = self.slot_owner.get(node)
        if own is None:
            self.repair_set.add(node)
            return
        t = self.frame_start + own[1] * self.slot_s
        if t < self.sim.now:
            return
        self.slot_timer.add(node)
        self.sim.timer(t, node, ("slot",))

    def _t_gen(self, node: int, payload: int) -> None:
        super()._t_gen(node, payload)
        if self.buffer[node] and self.frame_start <= self.sim.now:
            self._arm_slot(node)

    def _t_slot(self, node: int) -> None:
        buf = self.buffer[node]
        if not buf or not self.sim.alive[node]:
            return
        parent = int(self.parent[node])
        if parent < 0:
            self.repair_set.add(node)
            return
        pkt = buf.pop(0)
        if not len(self.send(pkt.forwarded(node, parent), node, self.parent_power[node])):
            buf.insert(0, pkt)
            self.repair_set.add(node)

    def _rx_data(self, pkt, receivers, rssi) -> None:
        r = int(receivers[0])
        if self.malicious[r]:
            self.intercept(r, pkt)
        elif self.is_ch[r]:
            self._absorb(r, pkt)
        elif self.parent[r] >= 0:
            out = pkt.forwarded(r, int(self.parent[r]))
            if not len(self.send(out, r, self.parent_power[r], self.sim.processing_delay_s)):
                self.buffer[r].append(pkt)
        else:
            self.buffer[r].append(pkt)

    def _absorb(self, ch: int, pkt: Packet) -> None:
        pend = self.pending[ch]
        pend[0] |= pkt.sources
        pend[1] += pkt.bits
        pend[2] = max(pend[2], pkt.hops)
        if ch in self.flushed:
            self._t_flush(ch)

    def _t_flush(self, ch: int) -> None:
        sim = self.sim
        if not sim.alive[ch] or not self.is_ch[ch]:
            return
        self.flushed.add(ch)
        pend = self.pending[ch]
        own = self.buffer.pop(ch, [])
        for p in own:
            pend[0] |= p.sources
            pend[1] += p.bits
        if not pend[0]:
            return
        self.debit_aggregation(ch, pend[1])
        if not sim.alive[ch]:
            return
        sources, hops = frozenset(pend[0]), pend[2]
        self.pending[ch] = [set(), 0, 0]
        self._forward(ch, sources, hops, set())

    def _forward(self, ch: int, sources: frozenset, hops: int, tried: Set[int]) -> None:
        nxt = self.ch_next.get(ch)
        if nxt is None or nxt in tried or nxt in self.blacklist or nxt in self.invalid:
            choice = self._choose_next(ch, tried)
            if choice is None:
                self.lost_no_route += len(sources)
                return
            nxt, power, hop = choice
            self.ch_next[ch], self.ch_next_power[ch] = nxt, power
        power = self.ch_next_power[ch]
        agg = self.aggregate(ch, nxt, sources, self.sim.now, hops + 1)
        if len(self.send(agg, ch, power)):
            lvl_to = 0 if nxt == BS_ID else int(self.level[nxt])
            self.forward_log.append((ch, int(self.level[ch]), nxt, lvl_to))
            return
        if not self.sim.alive[ch]:
            return
        tried.add(nxt)
        self.ch_next[ch] = None
        self._forward(ch, sources, hops, tried)

    def _rx_aggregate(self, pkt, receivers, rssi) -> None:
        r = int(receivers[0])
        if r == BS_ID:
            self.credit_bs(pkt)
        elif self.malicious[r]:
            self.intercept(r, pkt)
        elif self.is_ch[r]:
            self._absorb(r, pkt)
        else:
            self.lost_no_route += len(pkt.sources)

    def _t_reinject(self, m: int) -> None:
        """A sinkhole lets held traffic go through its nearest honest head."""
        if not self.sim.alive[m] or m in self.blacklist:
            return
        heads = [h for h in self.cid_of_ch if self.sim.alive[h] and h not in self.blacklist]
        if not heads:
            return
        ids = self.release_held(m)
        if not ids:
            return
        dist = self.sim.dist[m]
        for h in sorted(heads, key=lambda h: (dist[h], h)):
            p = self.power_to(m, h)
            if p is None:
                break
            if len(self.send(self.aggregate(m, h, ids, self.sim.now, 1), m, p)):
                return
        self.held[m] |= ids

    # -- end of round -----------------------------------------------------

    def _p_round_end(self, k: int) -> None:
        sim = self.sim
        for cid, ch in sorted(self.ch_of.items()):
            if not sim.alive[ch]:
                self.promote.add(cid)
                continue
            if should_abdicate(sim.energy[ch], self.elect_energy[ch],
                               self.params.abdicate_fraction):
                self.send(self.control(PacketKind.ABDICATE, ch), ch, self.advert_power)
                self.promote.add(cid)
        for cid in list(self.promote):
            nxt = self.next_of.get(cid)
            if nxt is None or not sim.alive[nxt] or nxt in self.blacklist:
                self.promote.discard(cid)
                self.reelect.add(cid)
        W = self.params.detect_window
        if self.params.detection and k >= W and k % W == 0:
            self._start_detection(k)
        else:
            self._next_round()

    def _next_round(self) -> None:
        t = max(self.round_starts[-1] + self.cfg.round_period_s, self.sim.now + 0.01)
        self.sim.at(t, EventKind.ROUND, tag=("round", self.round + 1))

    # -- intruder detection ---------------------------------------------

    def _start_detection(self, k: int) -> None:
        W = self.params.detect_window
        t0, t1 = self.round_starts[k - W], self.round_starts[k - 1]
        window = self.ledger.window_stats(t0, t1)
        flagged = flag_affected(window, fraction=self.params.detect_fraction,
                                rounds_completed=k, window_rounds=W)
        if not flagged:
            self._next_round()
            return
        det = self.ledger.detection
        det.runs += 1
        if det.triggered_at_s is None:
            det.triggered_at_s = self.sim.now
        # the affected area is every cluster a flagged source lives in; when
        # most senders are failing, that is the whole network
        region = set(flagged)
        if 2 * len(flagged) >= len(window):
            region.update(range(1, self.n))
        for s in flagged:
            cid = self.partition.cluster_of.get(s)
            if cid is not None:
                region.update(self.cluster_members[cid])
        region = {i for i in region if self.sim.alive[i] and i not in self.blacklist}
        self.region = region
        self.responders = set(region)
        self.det_id += 1
        self.flood_parent = {}
        self.responses = []
        self.sim.transmit(self.control(PacketKind.DETECT_REQUEST, BS_ID, det=self.det_id),
                          BS_ID, self.low_power)
        self.sim.phase(self.sim.now + FLOOD_WAIT_S, ("collect",))

    def _reported_next(self, node: int) -> Optional[int]:
        if self.malicious[node]:
            return BS_ID
        if self.is_ch[node]:
            nxt = self.ch_next.get(node)
            if nxt is not None and (nxt in self.invalid or nxt in self.blacklist):
                # stale pointer: report the hop it would pick now
                choice = self._choose_next(node, set())
                nxt = None if choice is None else choice[0]
        else:
            nxt = int(self.parent[node])
            nxt = nxt if nxt >= 0 else None
        # a dead next hop stopped acking; the node knows it has no route
        if nxt is not None and not self.sim.alive[nxt]:
            return None
        return nxt

    def _closure(self, region: Set[int]) -> Set[int]:
        """Region plus everything reachable along reported next hops."""
        out = set(region)
        stack = list(region)
        while stack:
            u = stack.pop()
            v = self._reported_next(u)
            if v is None or v == BS_ID or v in out:
                continue
            if not self.sim.alive[v] or v in self.blacklist:
                continue
            out.add(v)
            stack.append(v)
        return out

    def _rx_detect_request(self, pkt, receivers, rssi) -> None:
        fresh = [int(r) for r in receivers
                 if r != BS_ID and r not in self.flood_parent and r not in self.blacklist]
        for r in fresh:
            self.flood_parent[r] = pkt.src
        for r in fresh:
            self.send(self.control(PacketKind.DETECT_REQUEST, r, det=pkt.info["det"]), r,
                      self.low_power, self.jitter())

    def _cost(self, node: int) -> int:
        if self.malicious[node]:
            return 1
        if self.is_ch[node]:
            h = self.hop.get(node, math.inf)
        else:
            root = int(self.root[node])
            h = self.hop.get(root, math.inf) + int(self.depth[node])
        return int(h) if math.isfinite(h) and h >= 1 else 1

    def _p_collect(self) -> None:
        # next hops may have moved since the trigger; follow them as they are now
        self.responders = self._closure({i for i in self.region if self.sim.alive[i]})
        for r in sorted(self.responders):
            if r not in self.flood_parent or not self.sim.alive[r]:
                self.ledger.detection.omitted_responders += 1
                continue
            resp = FlowResponse(r, self._reported_next(r), self._cost(r))
            pkt = self.control(PacketKind.DETECT_RESPONSE, r, self.flood_parent[r],
                               resp=resp, path=(r,))
            self.send(pkt, r, self.low_power, self.jitter())
        self.sim.phase(self.sim.now + FLOOD_WAIT_S, ("analyze",))

    def _rx_detect_response(self, pkt, receivers, rssi) -> None:
        r = int(receivers[0])
        if r == BS_ID:
            self.responses.append(pkt.info["resp"])
            return
        if self.malicious[r] and self.adv.is_active(r, self.sim.now):
            if self.adv.rng.random() < self.adv.cfg.drop_prob:
                self.ledger.detection.evasions += 1
                return
        parent = self.flood_parent.get(r)
        if parent is None:
            return
        fwd = Packet(PacketKind.DETECT_RESPONSE, r, parent, pkt.payload_bytes, pkt.created_s,
                     hops=pkt.hops + 1, info={"resp": pkt.info["resp"],
                                              "path": pkt.info["path"] + (r,)})
        self.send(fwd, r, self.low_power, self.sim.processing_delay_s)

    def _p_analyze(self) -> None:
        if not self.responses:
            self._next_round()
            return
        heard = self.ledger.last_heard_by_bs
        # a claimed BS link counts if the BS has received over it, or if the
        # claimant is a head in the BS's own cluster tables whose level puts
        # it inside advert range of the BS
        near = self.cfg.advert_level + 1
        trusted = {r.responder for r in self.responses
                   if r.responder in heard
                   or (self.is_ch[r.responder] and self.level[r.responder] <= near)}
        suspects = locate_sinkhole(self.responses, self.responders, trusted)
        # only blacklist on a node's own testimony; silence may just be a dead relay
        answered = {r.responder for r in self.responses}
        suspects = (suspects & answered) - self.blacklist
        if not suspects:
            self._next_round()
            return
        self.isolate(suspects)

    def isolate(self, suspects: Set[int]) -> None:
        """Flood a blacklist of ``suspects`` and rebuild around them."""
        det = self.ledger.detection
        det.suspects |= suspects
        for s in suspects:
            if self.malicious[s]:
                det.true_positives += 1
                if self.first_tp_s is None:
                    self.first_tp_s = self.sim.now
            else:
                det.false_positives += 1
        self._bl_seen: Set[int] = set()
        self._bl_pending = set(suspects)
        self.sim.transmit(self.control(PacketKind.BLACKLIST, BS_ID, ids=tuple(sorted(suspects))),
                          BS_ID, self.low_power)
        self.sim.phase(self.sim.now + FLOOD_WAIT_S, ("isolated",))

    def _rx_blacklist(self, pkt, receivers, rssi) -> None:
        fresh = [int(r) for r in receivers if r != BS_ID and r not in self._bl_seen
                 and not self.malicious[r]]
        self._bl_seen.update(fresh)
        for r in fresh:
            self.send(self.control(PacketKind.BLACKLIST, r, ids=pkt.info["ids"]), r,
                      self.low_power, self.jitter())

    def _p_isolated(self) -> None:
        bad = self._bl_pending
        self.blacklist |= bad
        for b in bad:
            if self.is_ch[b]:
                cid = self.cid_of_ch[b]
                self.reelect.add(cid)
                self.promote.discard(cid)
        for cid, nxt in self.next_of.items():
            if nxt in bad:
                self.next_of[cid] = None
        for i in range(1, self.n):
            if self.parent[i] in bad or self.root[i] in bad:
                self.repair_set.add(i)
        for ch in list(self.ch_next):
            if self.ch_next[ch] in bad:
                self.ch_next[ch] = None
        self._next_round()

    # -- reporting --------------------------------------------------------

    @property
    def detection_latency_s(self) -> float:
        if self.first_tp_s is None:
            return math.nan
        return self.first_tp_s - self.adv.cfg.activation_s

