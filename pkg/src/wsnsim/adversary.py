"""Sinkhole injection and base-station side intruder localisation."""
from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .core import BS_ID, InvalidParamsError, SimError


class InsufficientHistoryError(SimError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    fraction: float = 0.0
    single: bool = False
    false_advert: bool = True
    drop_prob: float = 0.5
    divert: bool = False
    activation_s: float = 0.0
    snr_bonus_db: float = 20.0
    # laptop-class attacker: not limited by a sensor battery
    mains_powered: bool = True

    def __post_init__(self):
        if not 0 <= self.fraction < 1:
            raise InvalidParamsError(f"attack fraction must be in [0, 1), got {self.fraction}")
        if not 0 <= self.drop_prob <= 1:
            raise InvalidParamsError("drop_prob must be in [0, 1]")
        if self.active and not (self.false_advert or self.drop_prob > 0 or self.divert):
            raise InvalidParamsError("an active attack needs at least one behaviour")

    @property
    def active(self) -> bool:
        return self.single or self.fraction > 0


def inject(node_ids: Sequence[int], cfg: AttackConfig, rng: np.random.Generator) -> Set[int]:
    """Pick the malicious nodes among the non-BS ``node_ids``."""
    pool = [i for i in node_ids if i != BS_ID]
    if cfg.single:
        count = 1 if pool else 0
    else:
        count = math.floor(cfg.fraction * len(pool) + 1e-9)
    if count == 0:
        return set()
    chosen = rng.choice(len(pool), size=count, replace=False)
    return {pool[i] for i in sorted(chosen)}


class Adversary:
    """Runtime behaviour of the malicious nodes in one run."""

    def __init__(self, malicious: Set[int], cfg: AttackConfig, rng: np.random.Generator):
        self.malicious = frozenset(malicious)
        self.cfg = cfg
        self.rng = rng
        self.dropped = 0
        self.diverted = 0
        self.held = 0

    def is_active(self, node: int, t: float) -> bool:
        return node in self.malicious and t >= self.cfg.activation_s

    def lures(self, node: int, t: float) -> bool:
        return self.cfg.false_advert and self.is_active(node, t)

    def intercept(self, node: int, n_sources: int, t: float) -> str:
        """Fate of traffic reaching a malicious node: drop, divert or hold."""
        if not self.is_active(node, t):
            return "hold"
        if self.cfg.drop_prob > 0 and self.rng.random() < self.cfg.drop_prob:
            self.dropped += n_sources
            return "drop"
        if self.cfg.divert:
            self.diverted += n_sources
            return "divert"
        self.held += n_sources
        return "hold"


def flag_affected(window: Mapping[int, Tuple[int, int]], *, fraction: float = 0.5,
                  rounds_completed: Optional[int] = None, window_rounds: int = 5) -> Set[int]:
    """Sources whose delivery ratio over the window trails the network median.

    ``window`` maps source id to (sent, delivered). When the median itself is
    zero the comparison falls back to full delivery, so a network where
    everything is swallowed flags every source.
    """
    if rounds_completed is not None and rounds_completed < window_rounds:
        raise InsufficientHistoryError(
            f"need {window_rounds} completed rounds, have {rounds_completed}")
    ratios = {s: d / n for s, (n, d) in window.items() if n > 0 and s != BS_ID}
    if not ratios:
        return set()
    ref = statistics.median(ratios.values())
    if ref <= 0:
        ref = 1.0
    return {s for s, r in ratios.items() if r < fraction * ref}


@dataclass(frozen=True)
class FlowResponse:
    responder: int
    next_hop: Optional[int]
    cost: Optional[int]
    path: Tuple[int, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.next_hop is not None and self.next_hop == self.responder:
            raise InvalidParamsError("responder cannot be its own next hop")
        if self.cost is not None and self.cost < 1:
            raise InvalidParamsError("routing cost must be >= 1")


@dataclass(frozen=True)
class RoutingTree:
    edges: Dict[int, int]
    roots: frozenset
    cycles: Tuple[frozenset, ...] = ()


def build_tree(responses: Iterable[FlowResponse], affected: Iterable[int],
               trusted_bs_links: Optional[Set[int]] = None) -> RoutingTree:
    """Next-hop graph over the affected region.

    Claims of a direct link to the BS are only kept for nodes in
    ``trusted_bs_links`` (when given); anything else is treated as a node
    without a usable outgoing edge. A responder that reports no next hop
    at all is a dead end, not a root.
    """
    region = set(affected)
    edges: Dict[int, int] = {}
    responders = set()
    dead_ends = set()
    for r in responses:
        responders.add(r.responder)
        if r.next_hop is None:
            # admits having no route: traffic ends here, but not by luring
            dead_ends.add(r.responder)
            continue
        if r.next_hop == BS_ID and trusted_bs_links is not None \
                and r.responder not in trusted_bs_links:
            continue
        edges[r.responder] = r.next_hop
    region |= responders
    targets = {v for u, v in edges.items() if u in region}
    roots = set()
    for v in targets:
        if v == BS_ID or v in dead_ends or v not in region:
            continue
        nxt = edges.get(v)
        if nxt is None or (nxt != BS_ID and nxt not in region):
            roots.add(v)
    # functional graph: every cycle is found by walking from each node
    cycles, state = [], {}
    for start in sorted(edges):
        path, u = [], start
        while u in edges and u in region and state.get(u) is None:
            state[u] = start
            path.append(u)
            u = edges[u]
        if u in edges and state.get(u) == start:
            cyc = frozenset(path[path.index(u):])
            cycles.append(cyc)
    return RoutingTree(dict(edges), frozenset(roots), tuple(cycles))


def locate_sinkhole(responses: Sequence[FlowResponse], affected: Iterable[int],
                    trusted_bs_links: Optional[Set[int]] = None) -> Set[int]:
    """Roots of the affected region's routing tree, plus any cycle members."""
    if not responses:
        raise InvalidParamsError("no flow responses to analyse")
    tree = build_tree(responses, affected, trusted_bs_links)
    suspects = set(tree.roots)
    for cyc in tree.cycles:
        suspects |= cyc
    suspects.discard(BS_ID)
    return suspects
