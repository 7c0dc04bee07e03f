import math

import numpy as np
import pytest

from wsnsim.core import NEVER_HEAD, ClusterTable, InvalidParamsError, NodeState, Position, ThresholdParams
from wsnsim.protocols.esrpsdc import (ClusterDeadError, HopCandidate, MemberId, TdmaSchedule,
                                      TooFewNodesError, assign_member_ids, bs_level_sweep,
                                      build_schedule, elect_heads, partition_clusters,
                                      select_next_hop, should_abdicate)
from wsnsim.radio import RadioConfig, range_for_power


class Scripted:
    """Stand-in generator that replays fixed draws."""

    def __init__(self, uniforms=(), integers=()):
        self.u = list(uniforms)
        self.i = list(integers)

    def random(self):
        return self.u.pop(0)

    def integers(self, lo, hi):
        return self.i.pop(0)


def radio_with_radii(radii):
    base = RadioConfig()
    powers = tuple(40 * math.log10(r) - base.gain_db + base.rx_threshold_dbm for r in radii)
    return RadioConfig(tx_power_dbm=powers)


class TestLevels:
    def test_first_band(self):
        cfg = radio_with_radii((250, 500, 750, 1060))
        assert bs_level_sweep([0.0, 100.0], cfg) == {1: 1}

    def test_boundary_is_inclusive(self):
        cfg = RadioConfig()
        u1 = range_for_power(cfg.tx_power_dbm[0], cfg)
        assert bs_level_sweep([0.0, u1], cfg)[1] == 1

    def test_four_levels(self):
        cfg = radio_with_radii((250, 500, 750, 1060))
        got = bs_level_sweep([0.0, 600.0, 240.0, 1000.0, 2000.0], cfg)
        want = {i: next((k for k, r in enumerate((250, 500, 750, 1060), 1) if d <= r), None)
                for i, d in enumerate([0.0, 600.0, 240.0, 1000.0, 2000.0]) if i}
        assert got == want == {1: 3, 2: 1, 3: 4, 4: None}


class TestPartition:
    def test_equal_pairs(self):
        pos = np.random.default_rng(0).uniform(0, 1000, (41, 2))
        part = partition_clusters(range(1, 41), pos, 20)
        assert sorted(len(m) for m in part.members) == [2] * 20

    def test_single_cluster(self):
        pos = np.random.default_rng(0).uniform(0, 1000, (11, 2))
        part = partition_clusters(range(1, 11), pos, 1)
        assert part.members == [list(range(1, 11))]

    def test_default_field(self):
        pos = np.random.default_rng(1).uniform(0, 1000, (501, 2))
        part = partition_clusters(range(1, 501), pos, 20)
        assert sorted(len(m) for m in part.members) == [25] * 20
        assert sorted(part.cluster_of) == list(range(1, 501))
        assert all(t.ch is None and t.next_ch is None for t in part.tables)

    def test_too_few_nodes(self):
        pos = np.zeros((6, 2))
        with pytest.raises(TooFewNodesError):
            partition_clusters(range(1, 6), pos, 20)


def cands(energies, level=1):
    return [NodeState(i, Position(0, 0), e, 0.5, level=level) for i, e in energies.items()]


class TestElection:
    bands = {b.level: b for b in RadioConfig().levels}
    params = ThresholdParams()
    d_bs = {i: 10.0 for i in range(1, 10)}

    def elect(self, energies, draws):
        return elect_heads(ClusterTable(0, len(energies)), cands(energies), 1, self.params,
                           self.bands, self.d_bs, Scripted(draws))

    def test_all_eligible(self):
        table, fb = self.elect({1: 0.5, 2: 0.4, 3: 0.45}, [0.0, 0.0, 0.0])
        assert table.ch == (1, 0.5) and table.next_ch == (3, 0.45) and not fb

    def test_energy_tie_goes_to_lower_id(self):
        table, _ = self.elect({4: 0.5, 2: 0.5}, [0.0, 0.0])
        assert table.ch[0] == 2 and table.next_ch[0] == 4

    def test_fallback_when_only_one_eligible(self):
        table, fb = self.elect({1: 0.5, 2: 0.4, 3: 0.45}, [0.99, 0.0, 0.99])
        assert fb and table.ch == (1, 0.5) and table.next_ch == (3, 0.45)

    def test_eligibility_gate_beats_raw_energy(self):
        table, fb = self.elect({1: 0.5, 2: 0.4, 3: 0.45}, [0.99, 0.0, 0.0])
        assert not fb and table.ch[0] == 3 and table.next_ch[0] == 2

    def test_dead_cluster(self):
        with pytest.raises(ClusterDeadError):
            self.elect({1: 0.5}, [0.0])


class TestMemberIds:
    def test_depths_and_prefixes(self):
        parent = {5: 1, 6: 1, 7: 5}
        ids, clashes = assign_member_ids(3, 1, parent, 1, Scripted(integers=[10, 11, 12]))
        assert ids[1].depth == 0 and ids[1].bytes == (3).to_bytes(2, "big")
        assert ids[5].depth == ids[6].depth == 1
        assert ids[7].depth == 2 and ids[7].parent_prefix() == ids[5].bytes
        assert clashes == 0

    def test_clash_is_resolved(self):
        parent = {5: 1, 6: 1}
        ids, clashes = assign_member_ids(0, 1, parent, 1, Scripted(integers=[42, 42, 43]))
        assert clashes == 1
        assert len({i.bytes for i in ids.values()}) == 3

    def test_length_matches_depth(self):
        with pytest.raises(InvalidParamsError):
            MemberId(b"\x00\x01\x02", 2)


class TestSchedule:
    def test_covers_each_member_once(self):
        s = build_schedule([9, 3, 5, 3], 0.01)
        assert s.slots == ((3, 0), (5, 1), (9, 2))
        assert s.round_len_s == pytest.approx(0.03)
        assert s.slot_of(9) == 2 and s.slot_of(4) is None

    def test_rejects_gaps_and_duplicates(self):
        with pytest.raises(InvalidParamsError):
            TdmaSchedule(0.1, ((1, 0), (2, 2)))
        with pytest.raises(InvalidParamsError):
            TdmaSchedule(0.1, ((1, 0), (1, 1)))


class TestNextHop:
    def test_stronger_snr_wins_tie(self):
        c = [HopCandidate(4, 2, 2, 18.0), HopCandidate(5, 2, 2, 22.0)]
        assert select_next_hop(3, c).node == 5

    def test_fewer_hops_first(self):
        c = [HopCandidate(4, 2, 3, 40.0), HopCandidate(5, 2, 2, 10.0)]
        assert select_next_hop(3, c).node == 5

    def test_same_or_higher_level_never_chosen(self):
        c = [HopCandidate(4, 3, 1, 40.0), HopCandidate(5, 4, 1, 40.0)]
        assert select_next_hop(3, c) is None

    def test_falls_back_to_any_lower_level(self):
        c = [HopCandidate(4, 1, 1, 10.0)]
        assert select_next_hop(3, c).node == 4

    def test_exclusion(self):
        c = [HopCandidate(4, 2, 1, 30.0), HopCandidate(5, 2, 1, 20.0)]
        assert select_next_hop(3, c, {4}).node == 5


def test_abdication_rule():
    assert should_abdicate(0.19, 0.4, 0.5)
    assert not should_abdicate(0.21, 0.4, 0.5)


def test_recent_heads_are_not_in_z():
    bands = {b.level: b for b in RadioConfig().levels}
    nodes = [NodeState(1, Position(0, 0), 0.5, 0.5, rounds_since_ch=1),
             NodeState(2, Position(0, 0), 0.4, 0.5, rounds_since_ch=NEVER_HEAD),
             NodeState(3, Position(0, 0), 0.3, 0.5, rounds_since_ch=NEVER_HEAD)]
    table, fb = elect_heads(ClusterTable(0, 3), nodes, 1, ThresholdParams(), bands,
                            {1: 10.0, 2: 10.0, 3: 10.0}, Scripted([0.0, 0.0, 0.0]))
    assert not fb and table.ch[0] == 2 and table.next_ch[0] == 3
