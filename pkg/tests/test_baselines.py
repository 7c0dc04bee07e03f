import itertools
import math

import numpy as np
import pytest

from wsnsim.core import BS_ID, InvalidParamsError
from wsnsim.engine import make_rng
from wsnsim.protocols.leach import leach_elect, leach_threshold
from wsnsim.protocols.pegasis import (Chain, chain_length, pegasis_build_chain, pegasis_leader,
                                      pegasis_round_plan)


class TestLeachThreshold:
    def test_reset_round(self):
        assert leach_threshold(0.05, 0, True) == pytest.approx(0.05)
        assert leach_threshold(0.05, 40, True) == pytest.approx(0.05)

    def test_offset_ten(self):
        # 0.05 / (1 - 0.05 * 10)
        assert leach_threshold(0.05, 10, True) == pytest.approx(0.1)

    def test_recent_head(self):
        assert leach_threshold(0.05, 10, False) == 0.0

    def test_last_round_of_epoch_is_certain(self):
        assert leach_threshold(0.05, 19, True) == pytest.approx(1.0)

    def test_bad_p(self):
        with pytest.raises(InvalidParamsError):
            leach_threshold(1.0, 0, True)


def test_leach_head_count_matches_p():
    # first round of an epoch: every node is in G and T = p
    p, n, rounds = 0.05, 200, 1000
    rng = make_rng(11, 3)
    counts = [len(leach_elect(range(1, n + 1), 0, p, {}, rng)) for _ in range(rounds)]
    mean = np.mean(counts)
    sigma = math.sqrt(n * p * (1 - p) / rounds)
    assert abs(mean - p * n) <= 3 * sigma


def test_leach_excludes_recent_heads():
    rng = make_rng(1, 3)
    heads = leach_elect([1, 2, 3], 5, 0.05, {1: 4, 2: 4, 3: 4}, rng)
    assert heads == []


def nn_walk(pos, ids, bs):
    """Independent nearest-neighbour walk with lower-id tie breaks."""
    ids = sorted(ids)
    d_bs = {i: math.dist(pos[i], bs) for i in ids}
    cur = min(ids, key=lambda i: (-d_bs[i], i))
    order, left = [cur], set(ids) - {cur}
    while left:
        cur = min(left, key=lambda j: (math.dist(pos[cur], pos[j]), j))
        order.append(cur)
        left.remove(cur)
    return order


class TestChain:
    def test_collinear(self):
        pos = np.array([[2000.0, 0.0], [0.0, 0.0], [10.0, 0.0], [30.0, 0.0]])
        chain = pegasis_build_chain([1, 2, 3], pos, pos[0])
        assert chain.order == (1, 2, 3)
        assert list(chain.order) == nn_walk(pos, [1, 2, 3], pos[0])

    def test_two_nodes(self):
        pos = np.array([[0.0, 0.0], [5.0, 0.0], [9.0, 0.0]])
        assert pegasis_build_chain([1, 2], pos, pos[0]).order == (2, 1)

    def test_matches_brute_walk_on_random_fields(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            pos = rng.uniform(0, 500, (31, 2))
            chain = pegasis_build_chain(range(1, 31), pos, pos[0])
            assert list(chain.order) == nn_walk(pos, range(1, 31), pos[0])

    def test_needs_two_nodes(self):
        with pytest.raises(InvalidParamsError):
            pegasis_build_chain([1], np.zeros((2, 2)), (0, 0))

    def test_duplicates_rejected(self):
        with pytest.raises(InvalidParamsError):
            Chain((1, 2, 1))


def test_round_plan_counts():
    plan = pegasis_round_plan(Chain((1, 2, 3, 4, 5), leader_index=2))
    chain_hops = [h for h in plan if h[1] != BS_ID]
    assert len(chain_hops) == 4 and plan[-1] == (3, BS_ID)
    assert set(chain_hops) == {(1, 2), (2, 3), (5, 4), (4, 3)}


def test_leader_rotation():
    c = Chain(tuple(range(1, 8)))
    assert pegasis_leader(c, 3).leader == pegasis_leader(c, 3 + len(c)).leader == 4


def test_chain_shrinks_when_a_node_dies():
    from wsnsim.runner import build
    from wsnsim.scenario import Scenario
    res = build(Scenario(protocol="pegasis", n_nodes=30, n_clusters=2, field_m=300,
                         sim_time_s=60, load_packets=30))
    proto = res.protocol
    proto.start()
    res.sim.run(until_s=6.0)
    before = len(proto.chain)
    victim = proto.chain.order[1]
    res.sim._kill(victim)
    res.sim.run(until_s=12.0)
    assert len(proto.chain) == before - 1 and victim not in proto.chain.order


def test_chain_length_against_optimum_small():
    # greedy chains stay within 2x the best Hamiltonian path on tiny instances
    rng = np.random.default_rng(9)
    for _ in range(10):
        pos = rng.uniform(0, 100, (8, 2))
        ids = list(range(1, 8))
        greedy = chain_length(pegasis_build_chain(ids, pos, pos[0]), pos)
        best = min(sum(math.dist(pos[a], pos[b]) for a, b in zip(p, p[1:]))
                   for p in itertools.permutations(ids))
        assert greedy <= 2 * best + 1e-9
