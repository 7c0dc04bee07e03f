"""Domain types and the pure arithmetic shared by every protocol."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

BS_ID = 0
BROADCAST = -1
# rounds_since_ch value for a node that has never been cluster head
NEVER_HEAD = 2**31 - 1


class SimError(Exception):
    """Base class for simulator errors."""


class InvalidParamsError(SimError, ValueError):
    pass


class UndefinedRatioError(SimError, ZeroDivisionError):
    pass


class Role(enum.Enum):
    MEMBER = "member"
    CLUSTER_HEAD = "ch"
    NEXT_CLUSTER_HEAD = "next_ch"
    ONE_HOP_RELAY = "one_hop"
    TWO_HOP_MEMBER = "two_hop"
    BASE_STATION = "bs"
    MALICIOUS = "malicious"


@dataclass(frozen=True)
class Position:
    x: float
    y: float


@dataclass(frozen=True)
class NodeState:
    id: int
    pos: Position
    energy_j: float
    energy_init_j: float
    level: int = 1
    role: Role = Role.MEMBER
    rounds_since_ch: int = NEVER_HEAD
    member_id: bytes = b""
    awake: bool = True

    def __post_init__(self):
        if self.id < 0:
            raise InvalidParamsError(f"node id must be non-negative, got {self.id}")
        if self.energy_j < 0 or self.energy_j > self.energy_init_j:
            raise InvalidParamsError(
                f"energy {self.energy_j} outside [0, {self.energy_init_j}]")
        if self.level < 1:
            raise InvalidParamsError(f"level must be >= 1, got {self.level}")
        if self.rounds_since_ch < 0:
            raise InvalidParamsError("rounds_since_ch must be >= 0")

    @property
    def alive(self) -> bool:
        return self.energy_j > 0


@dataclass(frozen=True)
class LevelBand:
    level: int
    lower_m: float
    upper_m: float

    def __post_init__(self):
        if self.level < 1:
            raise InvalidParamsError(f"level must be >= 1, got {self.level}")
        if not self.lower_m < self.upper_m:
            raise InvalidParamsError(
                f"band {self.level}: lower {self.lower_m} must be < upper {self.upper_m}")

    def contains(self, d: float) -> bool:
        # upper-inclusive: a node exactly at U_i still hears the level-i beacon
        return self.lower_m < d <= self.upper_m or (self.level == 1 and d == 0)


@dataclass(frozen=True)
class ThresholdParams:
    p: float = 0.05
    c: float = 0.5
    k: float = 2.0

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise InvalidParamsError(f"P must be in (0, 1), got {self.p}")
        if not 0 < self.c <= 1:
            raise InvalidParamsError(f"C must be in (0, 1], got {self.c}")
        if not 0 <= self.k <= 3:
            raise InvalidParamsError(f"K must be in [0, 3], got {self.k}")

    @property
    def window(self) -> int:
        """Integer round window ceil(1/P), used for the modulus and the Z-set."""
        return math.ceil(1 / self.p - 1e-12)


@dataclass(frozen=True)
class ClusterTable:
    cluster_id: int
    active_count: int = 0
    sleep_count: int = 0
    ch: Optional[Tuple[int, float]] = None
    next_ch: Optional[Tuple[int, float]] = None

    def __post_init__(self):
        if self.active_count < 0 or self.sleep_count < 0:
            raise InvalidParamsError("node counts must be non-negative")
        if self.ch is not None and self.next_ch is not None:
            if self.ch[0] == self.next_ch[0]:
                raise InvalidParamsError("CH and next CH must differ")
            if self.ch[1] < self.next_ch[1]:
                raise InvalidParamsError("CH energy must be >= next CH energy")


class PacketKind(enum.Enum):
    REQ = "req"
    LEVEL_BEACON = "level_beacon"
    HELLO = "hello"
    CH_ADVERT = "ch_advert"
    JOIN_CONFIRM = "join_confirm"
    STATE_MSG = "state_msg"
    ABDICATE = "abdicate"
    TDMA_SCHEDULE = "tdma_schedule"
    DATA = "data"
    AGGREGATE = "aggregate"
    DETECT_REQUEST = "detect_request"
    DETECT_RESPONSE = "detect_response"
    BLACKLIST = "blacklist"
    TOKEN = "token"


@dataclass(frozen=True)
class Packet:
    kind: PacketKind
    src: int
    dst: int
    payload_bytes: int
    created_s: float
    hops: int = 0
    # ids of the source data packets this packet carries (provenance)
    sources: frozenset = frozenset()
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.payload_bytes <= 0:
            raise InvalidParamsError("payload_bytes must be positive")
        if self.hops < 0:
            raise InvalidParamsError("hops must be non-negative")

    @property
    def bits(self) -> int:
        return self.payload_bytes * 8

    def forwarded(self, src: int, dst: int, **changes) -> "Packet":
        """Copy for the next hop; hop count grows by one."""
        return Packet(
            kind=changes.get("kind", self.kind), src=src, dst=dst,
            payload_bytes=changes.get("payload_bytes", self.payload_bytes),
            created_s=self.created_s, hops=self.hops + 1,
            sources=changes.get("sources", self.sources),
            info=changes.get("info", self.info))


def distance(a: Position, b: Position) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


def ch_threshold(node: NodeState, round: int, band: LevelBand,
                 params: ThresholdParams, d_bs_m: float) -> float:
    """Cluster-head eligibility probability for ``node`` in election ``round``.

    Level-scaled, energy-weighted LEACH-style threshold. ``round`` counts
    elections from 1. The modulus term is floored at 1 so rounds that are a
    multiple of the window do not divide by zero, and the distance is clamped
    into the node's band.
    """
    if round < 1:
        raise InvalidParamsError(f"round must be >= 1, got {round}")
    if node.level != band.level:
        raise InvalidParamsError(
            f"node level {node.level} does not match band level {band.level}")
    if not node.alive:
        return 0.0
    window = params.window
    if node.rounds_since_ch < window:
        return 0.0
    f_r = max(1, round % window)
    d = min(max(d_bs_m, band.lower_m), band.upper_m)
    p, c, k = params.p, params.c, params.k
    t = (p * c * (band.upper_m - d)) / ((1 - p) * f_r * (band.upper_m - band.lower_m))
    t *= (node.energy_j / node.energy_init_j) ** k
    return min(1.0, max(0.0, t))


def pdr(n_received: int, n_transmitted: int) -> float:
    if n_transmitted <= 0:
        raise UndefinedRatioError("PDR undefined with no transmitted packets")
    if not 0 <= n_received <= n_transmitted:
        raise InvalidParamsError(
            f"received {n_received} outside [0, {n_transmitted}]")
    return n_received / n_transmitted


def joules_to_mwh(e: float) -> float:
    if e < 0:
        raise InvalidParamsError("energy must be non-negative")
    return e / 3.6
