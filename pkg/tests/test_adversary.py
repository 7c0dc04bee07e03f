import numpy as np
import pytest

from wsnsim.adversary import (AttackConfig, FlowResponse, InsufficientHistoryError, flag_affected,
                              inject, locate_sinkhole)
from wsnsim.core import BS_ID, InvalidParamsError
from wsnsim.engine import make_rng
from wsnsim.runner import run_once
from wsnsim.scenario import Scenario

from oracles import oracle_suspects


class TestInject:
    def test_thirty_percent_of_500(self):
        bad = inject(range(1, 501), AttackConfig(fraction=0.3), make_rng(4, 1))
        assert len(bad) == 150 and BS_ID not in bad and bad <= set(range(1, 501))

    def test_single(self):
        assert len(inject(range(1, 51), AttackConfig(single=True), make_rng(4, 1))) == 1

    def test_none(self):
        assert inject(range(1, 51), AttackConfig(fraction=0.0), make_rng(4, 1)) == set()

    def test_bs_never_chosen(self):
        for seed in range(30):
            assert BS_ID not in inject(range(0, 4), AttackConfig(fraction=0.7), make_rng(seed, 1))

    def test_bad_fraction(self):
        with pytest.raises(InvalidParamsError):
            AttackConfig(fraction=1.0)


class TestFlagAffected:
    def test_branch_behind_sinkhole(self):
        window = {s: (10, 10) for s in range(1, 41)}
        window.update({s: (10, 1) for s in range(41, 51)})
        assert flag_affected(window) == set(range(41, 51))

    def test_benign_flags_nothing(self):
        window = {s: (10, 9 + (s % 2)) for s in range(1, 51)}
        assert flag_affected(window) == set()

    def test_everything_swallowed(self):
        window = {s: (10, 0) for s in range(1, 11)}
        assert flag_affected(window) == set(range(1, 11))

    def test_needs_history(self):
        with pytest.raises(InsufficientHistoryError):
            flag_affected({1: (1, 1)}, rounds_completed=2)


def resp(edges):
    return [FlowResponse(u, v, 1) for u, v in edges.items()]


class TestLocate:
    def test_branch_into_sinkhole(self):
        # M (9) answers with a next hop outside the region
        edges = {1: 9, 2: 9, 3: 2, 9: 40}
        assert locate_sinkhole(resp(edges), {1, 2, 3}) == {9}

    def test_bs_rooted_region_has_no_suspect(self):
        edges = {1: BS_ID, 2: 1, 3: 2}
        assert locate_sinkhole(resp(edges), {1, 2, 3}) == set()

    def test_two_sinkholes(self):
        edges = {1: 8, 2: 8, 3: 9, 4: 3, 8: 30, 9: 31}
        assert locate_sinkhole(resp(edges), {1, 2, 3, 4}) == {8, 9}

    def test_cycle_members_are_suspects(self):
        edges = {1: 2, 2: 3, 3: 1, 4: 1}
        assert locate_sinkhole(resp(edges), {1, 2, 3, 4}) == {1, 2, 3}

    def test_untrusted_bs_claim(self):
        # 9 claims a direct BS link nobody can vouch for
        edges = {1: 9, 2: 9, 9: BS_ID}
        assert locate_sinkhole(resp(edges), {1, 2}, trusted_bs_links=set()) == {9}
        assert locate_sinkhole(resp(edges), {1, 2}, trusted_bs_links={9}) == set()

    def test_admitted_dead_end_is_not_blamed(self):
        rs = resp({1: 9, 2: 9}) + [FlowResponse(9, None, None)]
        assert locate_sinkhole(rs, {1, 2}) == set()

    def test_no_responses(self):
        with pytest.raises(InvalidParamsError):
            locate_sinkhole([], {1})


def test_locate_matches_root_oracle_on_random_forests():
    rng = np.random.default_rng(3)
    for _ in range(500):
        n = int(rng.integers(3, 10))
        edges = {u: int(rng.integers(0, n + 3)) for u in range(1, n + 1)}
        edges = {u: v for u, v in edges.items() if u != v}
        region = {u for u in edges if rng.random() < 0.6}
        if not region:
            continue
        assert locate_sinkhole(resp(edges), region) == oracle_suspects(edges, region)


def small(protocol, **kw):
    return Scenario(protocol=protocol, n_nodes=60, n_clusters=4, field_m=400, sim_time_s=120,
                    load_packets=40, **kw)


@pytest.mark.parametrize("protocol", ["esrpsdc", "leach", "pegasis"])
def test_zero_fraction_matches_attack_free_run(protocol):
    a = run_once(small(protocol, attack=AttackConfig(fraction=0.0))).row
    b = run_once(small(protocol)).row
    assert a == b
    assert a["pct_malicious"] == 0.0 and a["false_positives"] == 0


def test_attackers_are_never_debited():
    res = run_once(small("esrpsdc", attack=AttackConfig(fraction=0.2)))
    bad = np.flatnonzero(res.protocol.malicious)
    assert len(bad) == 12 and np.all(res.sim.spent[bad] == 0.0)
