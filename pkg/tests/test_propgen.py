import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import DATA
from oracles import interval_iou, naive_forward_head
from prn.core import ShapeMismatch, TemporalSegment, tiou
from prn.ingest import FeatureSequence
from prn.propgen import (
    ConfidenceMaps,
    HeadWeights,
    decode_proposals,
    forward_head,
    load_proposals,
    oracle_confidence_maps,
    save_proposals,
    valid_mask,
)


def test_oracle_empty_gt():
    m = oracle_confidence_maps([], 10, 10)
    for arr in (m.p_start, m.p_end, m.m_cc, m.m_cr):
        assert not arr.any()


def test_oracle_full_extent():
    m = oracle_confidence_maps([TemporalSegment(0.0, 1.0)], 10, 10)
    assert m.m_cc[9, 0] == 1.0


def test_oracle_values():
    m = oracle_confidence_maps([TemporalSegment(0.2, 0.6)], 10, 10)
    assert m.m_cc[3, 2] == 1.0
    assert m.m_cc[3, 1] == pytest.approx(interval_iou((0.1, 0.5), (0.2, 0.6)), abs=1e-12)
    assert m.m_cc[3, 1] == pytest.approx(0.6, abs=1e-12)
    np.testing.assert_array_equal(m.m_cc, m.m_cr)
    assert m.p_start.tolist() == [0, 0.5, 1, 0.5, 0, 0, 0, 0, 0, 0]
    assert m.p_end.tolist() == [0, 0, 0, 0, 0, 0.5, 1, 0.5, 0, 0]
    assert not m.m_cc[~valid_mask(10, 10)].any()


def test_oracle_brute_force_map():
    gts = [TemporalSegment(0.13, 0.41), TemporalSegment(0.55, 0.9)]
    m = oracle_confidence_maps(gts, 12, 7)
    for d in range(7):
        for i in range(12):
            if i + d + 1 > 12:
                assert m.m_cc[d, i] == 0.0
                continue
            want = max(interval_iou((i / 12, (i + d + 1) / 12), (g.start, g.end)) for g in gts)
            assert m.m_cc[d, i] == pytest.approx(want, abs=1e-12)


def one_hot_maps(t=10, i=2, j=6):
    m = ConfidenceMaps.zeros(t, t)
    m.p_start[i] = 1.0
    m.p_end[j] = 1.0
    mask = valid_mask(t, t)
    m.m_cc[mask] = 1.0
    m.m_cr[mask] = 1.0
    return m


def test_decode_all_zero():
    assert decode_proposals(ConfidenceMaps.zeros(10, 10)) == []


def test_decode_single_pair():
    (p,) = decode_proposals(one_hot_maps())
    assert p.segment == TemporalSegment(0.2, 0.6)
    assert p.score == 1.0
    assert p.raw_components.p_start == 1.0 and p.raw_components.map_cr == 1.0


def test_decode_respects_d_max():
    m = one_hot_maps()
    short = ConfidenceMaps(m.p_start, m.p_end, m.m_cc[:3], m.m_cr[:3])
    assert decode_proposals(short) == []


def test_decode_tie_break():
    m = ConfidenceMaps.zeros(10, 10)
    m.p_start[[2, 4]] = 1.0
    m.p_end[7] = 1.0
    m.m_cc[valid_mask(10, 10)] = 0.5
    m.m_cr[valid_mask(10, 10)] = 0.5
    a, b = decode_proposals(m)
    assert a.score == b.score
    assert a.segment.start == 0.2 and b.segment.start == 0.4


def test_decode_fusions():
    m = one_hot_maps()
    m.m_cc[3, 2] = 0.64
    m.m_cr[3, 2] = 0.25
    assert decode_proposals(m)[0].score == pytest.approx(0.4)
    assert decode_proposals(m, fusion="product")[0].score == pytest.approx(0.16)
    assert decode_proposals(m, fusion="maps")[0].score == pytest.approx(0.16)


@st.composite
def grid_gt(draw, t=100):
    n = draw(st.integers(1, 4))
    pts = sorted(draw(st.lists(st.integers(0, t - 1), min_size=2 * n, max_size=2 * n, unique=True)))
    return [TemporalSegment(pts[2 * k] / t, pts[2 * k + 1] / t) for k in range(n)]


@given(grid_gt())
def test_oracle_decode_recalls_every_gt(gts):
    props = decode_proposals(oracle_confidence_maps(gts, 100, 100), 0.5, 100)
    for g in gts:
        assert max(tiou(p.segment, g) for p in props) >= 0.95
    for p in props:
        assert 0.0 <= p.score <= 1.0


@given(grid_gt(), st.integers(1, 30), st.integers(0, 30))
def test_prefix_property(gts, n, extra):
    m = oracle_confidence_maps(gts, 100, 100)
    m.p_start = 0.5 * m.p_start + 0.25
    small = decode_proposals(m, 0.5, n)
    big = decode_proposals(m, 0.5, n + extra)
    assert big[: len(small)] == small


def test_head_zero_weights():
    x = np.random.default_rng(0).normal(size=(12, 3))
    m = forward_head(FeatureSequence("v", x), HeadWeights.zeros(12, 3, 4))
    assert np.all(m.p_start == 0.5) and np.all(m.p_end == 0.5)
    mask = valid_mask(12, 12)
    assert np.all(m.m_cc[mask] == 0.5) and np.all(m.m_cr[mask] == 0.5)
    assert not m.m_cc[~mask].any()


def test_head_golden_file():
    z = np.load(DATA / "head_golden.npz")
    params = {k[2:]: z[k] for k in z.files if k.startswith("w_")}
    t, c = z["x"].shape
    w = HeadWeights(t, c, params["conv1_b"].shape[0], t, params)
    m = forward_head(FeatureSequence("v", z["x"]), w)
    for name in ("p_start", "p_end", "m_cc", "m_cr"):
        np.testing.assert_allclose(getattr(m, name), z[name], rtol=0, atol=1e-12)
    mask = valid_mask(t, t)
    assert np.all((m.m_cc[mask] > 0) & (m.m_cc[mask] < 1))


@pytest.mark.parametrize("seed", range(3))
def test_head_matches_naive(seed):
    rng = np.random.default_rng(seed)
    w = HeadWeights.init(15, 5, 6, 9, seed=seed)
    w.params["map_b"] += rng.normal(size=2)
    x = rng.normal(size=(15, 5))
    m = forward_head(FeatureSequence("v", x), w)
    ref = naive_forward_head(x, w.params, 9)
    for got, want in zip((m.p_start, m.p_end, m.m_cc, m.m_cr), ref):
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_head_deterministic_and_checks_shape():
    w = HeadWeights.init(20, 4, 8, seed=1)
    seq = FeatureSequence("v", np.random.default_rng(1).normal(size=(20, 4)))
    a, b = forward_head(seq, w), forward_head(seq, w)
    for name in ("p_start", "p_end", "m_cc", "m_cr"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    with pytest.raises(ShapeMismatch):
        forward_head(FeatureSequence("v", np.zeros((19, 4))), w)


def test_head_weights_round_trip(tmp_path):
    w = HeadWeights.init(10, 3, 4, 6, seed=2)
    w.save(tmp_path / "h")
    files = {p.name: p.read_bytes() for p in (tmp_path / "h").iterdir()}
    again = HeadWeights.load(tmp_path / "h")
    assert again.dims == w.dims
    for k in w.params:
        assert again.params[k].tobytes() == w.params[k].tobytes()
    again.save(tmp_path / "h2")
    assert {p.name: p.read_bytes() for p in (tmp_path / "h2").iterdir()} == files


def test_proposal_file_round_trip(tmp_path):
    props = {"v": decode_proposals(one_hot_maps())}
    save_proposals(props, tmp_path / "p.json")
    assert load_proposals(tmp_path / "p.json") == props
