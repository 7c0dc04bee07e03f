import math

import pytest

from wsnsim.core import (BS_ID, NEVER_HEAD, ClusterTable, InvalidParamsError, LevelBand,
                         NodeState, Packet, PacketKind, Position, ThresholdParams,
                         UndefinedRatioError, ch_threshold, distance, joules_to_mwh, pdr)


def node(energy=0.5, init=0.5, level=1, since=NEVER_HEAD, nid=1):
    return NodeState(nid, Position(0, 0), energy, init, level=level, rounds_since_ch=since)


def threshold_by_hand(p, c, r, upper, lower, d, e_cur, e_init, k):
    window = math.ceil(1 / p)
    f = max(1, r % window)
    return p * c * (upper - d) / ((1 - p) * f * (upper - lower)) * (e_cur / e_init) ** k


class TestThreshold:
    band = LevelBand(2, 100.0, 200.0)
    params = ThresholdParams(p=0.05, c=0.5, k=2)

    def test_worked_example(self):
        t = ch_threshold(node(0.25, 0.5, level=2), 3, self.band, self.params, 150.0)
        # 0.05*0.5*50 / (0.95*3*100) * (0.5)**2
        assert t == pytest.approx(0.0010964912280701754, rel=1e-12)
        assert t == pytest.approx(
            threshold_by_hand(0.05, 0.5, 3, 200, 100, 150, 0.25, 0.5, 2), rel=1e-12)

    def test_dead_node_never_elects(self):
        assert ch_threshold(node(0.0, 0.5, level=2), 3, self.band, self.params, 150.0) == 0.0

    def test_outer_edge_gives_zero(self):
        assert ch_threshold(node(level=2), 3, self.band, self.params, 200.0) == 0.0

    def test_recent_head_is_not_in_z(self):
        assert ch_threshold(node(level=2, since=3), 3, self.band, self.params, 150.0) == 0.0

    def test_distance_clamped_into_band(self):
        inside = ch_threshold(node(level=2), 3, self.band, self.params, 100.0)
        below = ch_threshold(node(level=2), 3, self.band, self.params, 20.0)
        assert inside == below

    def test_round_multiple_of_window_does_not_divide_by_zero(self):
        t = ch_threshold(node(level=2), 20, self.band, self.params, 150.0)
        assert 0 < t <= 1

    def test_level_mismatch(self):
        with pytest.raises(InvalidParamsError):
            ch_threshold(node(level=1), 3, self.band, self.params, 150.0)

    def test_round_must_be_positive(self):
        with pytest.raises(InvalidParamsError):
            ch_threshold(node(level=2), 0, self.band, self.params, 150.0)


def test_threshold_params_validation():
    for kw in ({"p": 0}, {"p": 1}, {"c": 0}, {"c": 1.5}, {"k": -0.1}, {"k": 3.5}):
        with pytest.raises(InvalidParamsError):
            ThresholdParams(**kw)
    assert ThresholdParams(p=0.05).window == 20
    assert ThresholdParams(p=0.1).window == 10


def test_band_validation_and_inclusive_upper():
    with pytest.raises(InvalidParamsError):
        LevelBand(1, 200.0, 100.0)
    b = LevelBand(1, 0.0, 250.0)
    assert b.contains(250.0) and b.contains(0.0) and not b.contains(250.01)
    assert not LevelBand(2, 250.0, 500.0).contains(250.0)


@pytest.mark.parametrize("n_r,n_t,want", [(141, 200, 0.705), (200, 200, 1.0), (0, 200, 0.0)])
def test_pdr(n_r, n_t, want):
    assert pdr(n_r, n_t) == want


def test_pdr_errors():
    with pytest.raises(UndefinedRatioError):
        pdr(0, 0)
    with pytest.raises(InvalidParamsError):
        pdr(201, 200)


@pytest.mark.parametrize("j,mwh", [(0.5, 0.5 / 3.6), (0.0, 0.0), (3.6, 1.0)])
def test_joules_to_mwh(j, mwh):
    assert joules_to_mwh(j) == pytest.approx(mwh, rel=1e-15)


def test_joules_to_mwh_rejects_negative():
    with pytest.raises(InvalidParamsError):
        joules_to_mwh(-1e-3)


def test_distance():
    assert distance(Position(0, 0), Position(3, 4)) == 5.0
    assert distance(Position(7, 9), Position(7, 9)) == 0.0
    assert distance(Position(50, 75), Position(1000, 1000)) == pytest.approx(
        math.sqrt(950**2 + 925**2))
    # sqrt(1758125); the figure 1317.36 sometimes quoted for this pair is an arithmetic slip
    assert distance(Position(50, 75), Position(1000, 1000)) == pytest.approx(1325.943, abs=5e-4)


def test_node_state_invariants():
    with pytest.raises(InvalidParamsError):
        NodeState(-1, Position(0, 0), 0.1, 0.5)
    with pytest.raises(InvalidParamsError):
        NodeState(1, Position(0, 0), 0.6, 0.5)
    with pytest.raises(InvalidParamsError):
        NodeState(1, Position(0, 0), 0.1, 0.5, level=0)
    assert not NodeState(1, Position(0, 0), 0.0, 0.5).alive


def test_cluster_table_invariants():
    assert ClusterTable(3).ch is None and ClusterTable(3).next_ch is None
    ClusterTable(3, 10, ch=(4, 0.5), next_ch=(5, 0.5))
    with pytest.raises(InvalidParamsError):
        ClusterTable(3, ch=(4, 0.3), next_ch=(5, 0.4))
    with pytest.raises(InvalidParamsError):
        ClusterTable(3, ch=(4, 0.5), next_ch=(4, 0.4))
    with pytest.raises(InvalidParamsError):
        ClusterTable(3, active_count=-1)


def test_packet():
    p = Packet(PacketKind.DATA, 3, BS_ID, 50, 1.0, sources=frozenset({7}))
    assert p.bits == 400
    q = p.forwarded(4, 9)
    assert (q.src, q.dst, q.hops, q.created_s, q.sources) == (4, 9, 1, 1.0, p.sources)
    with pytest.raises(InvalidParamsError):
        Packet(PacketKind.DATA, 3, BS_ID, 0, 1.0)
    with pytest.raises(InvalidParamsError):
        Packet(PacketKind.DATA, 3, BS_ID, 10, 1.0, hops=-1)
