import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from instances import check_gradients, random_instance
from prn.core import Proposal, ShapeMismatch, TemporalSegment
from prn.ingest import FeatureSequence
from prn.relation import (
    PARAM_NAMES,
    DivergenceError,
    RelationWeights,
    apply_refined,
    attention_backward,
    attention_forward,
    feature_dim,
    pool_proposal_feature,
    rescore_proposals,
    train_relation,
)


def prop(a, b, score=0.5):
    return Proposal(TemporalSegment(a, b), score)


# -- pooling ----------------------------------------------------------------

def test_pool_constant():
    seq = FeatureSequence("v", np.full((20, 3), 2.5))
    f = pool_proposal_feature(seq, prop(0.23, 0.61, 0.7), k=4, context_ratio=0.5)
    assert f.shape == (feature_dim(4),)
    np.testing.assert_allclose(f[:12], 2.5, rtol=1e-12)
    np.testing.assert_allclose(f[12:], [0.42, 0.38, 0.7], rtol=1e-12)


def test_pool_full_span_has_empty_context():
    seq = FeatureSequence("v", np.ones((10, 2)))
    f = pool_proposal_feature(seq, prop(0.0, 1.0), k=3, context_ratio=0.5)
    assert not f[3:9].any()


def test_pool_hand_computed_bin():
    seq = FeatureSequence("v", np.array([[0.0], [1.0], [2.0], [3.0]]))
    f = pool_proposal_feature(seq, prop(0.0, 0.5), k=1, context_ratio=0.0)
    assert f[0] == pytest.approx(0.5)


def test_pool_fractional_bins():
    # snippet values 0..3; [0.1, 0.3] covers 0.6 of snippet 0 and 0.2 of snippet 1
    seq = FeatureSequence("v", np.array([[0.0], [1.0], [2.0], [3.0]]))
    f = pool_proposal_feature(seq, prop(0.1, 0.3), k=1, context_ratio=0.0)
    assert f[0] == pytest.approx(0.2 / 0.8)
    f = pool_proposal_feature(seq, prop(0.5, 1.0), k=2, context_ratio=0.0)
    np.testing.assert_allclose(f[:2], [2.0, 3.0])


# -- forward ----------------------------------------------------------------

def test_single_proposal_attends_to_itself():
    x, w, _ = random_instance(0, max_n=1)
    _, cache = attention_forward(x[:1], w)
    assert cache.attn.tolist() == [[1.0]]


def test_identical_rows_identical_scores():
    x, w, _ = random_instance(4)
    x2 = np.vstack([x[:1], x[:1], x[1:]])
    s, _ = attention_forward(x2, w)
    assert s[0] == s[1]


def test_hand_evaluated_forward():
    eye = np.eye(2)
    w = RelationWeights(w_q=eye, w_k=eye, w_v=eye, w_o=eye, w1=np.ones((2, 1)), b1=np.zeros(1),
                        w2=np.ones((1, 1)), b2=np.zeros(1))
    s, cache = attention_forward(eye, w)
    # row 0 logits (1/sqrt2, 0)
    a0 = math.exp(1 / math.sqrt(2)) / (math.exp(1 / math.sqrt(2)) + 1)
    assert a0 == pytest.approx(0.66976, abs=5e-6)
    np.testing.assert_allclose(cache.attn, [[a0, 1 - a0], [1 - a0, a0]], rtol=1e-14)
    np.testing.assert_allclose(cache.h, [[1 + a0, 1 - a0], [1 - a0, 1 + a0]], rtol=1e-14)
    # each residual row sums to 1 + 1, so both scores are sigmoid(2)
    np.testing.assert_allclose(s, [1 / (1 + math.exp(-2))] * 2, rtol=1e-14)
    assert s[0] == pytest.approx(0.8807970779778823, rel=1e-14)


def test_forward_shape_check():
    _, w, _ = random_instance(1)
    with pytest.raises(ShapeMismatch):
        attention_forward(np.zeros((3, w.d_in + 1)), w)
    with pytest.raises(ShapeMismatch):
        attention_forward(np.zeros((0, w.d_in)), w)


@given(st.integers(0, 10_000))
def test_attention_invariants(seed):
    x, w, _ = random_instance(seed)
    s, cache = attention_forward(x, w)
    assert np.all(cache.attn >= 0)
    np.testing.assert_allclose(cache.attn.sum(axis=1), 1.0, atol=1e-6)
    assert np.all((s > 0) & (s < 1))
    perm = np.random.default_rng(seed).permutation(len(x))
    s_perm, _ = attention_forward(x[perm], w)
    np.testing.assert_allclose(s_perm, s[perm], rtol=0, atol=1e-9)


# -- backward ---------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    x, w, ds = random_instance(100 + seed)
    assert check_gradients(x, w, ds) <= 1e-4


def test_zero_upstream_zero_gradient():
    x, w, _ = random_instance(2)
    _, cache = attention_forward(x, w)
    for g in attention_backward(cache, np.zeros(len(x))).values():
        assert not g.any()


def test_duplicated_rows_duplicate_input_gradients():
    x, w, ds = random_instance(3)
    x2 = np.vstack([x[:1], x[:1], x[1:]])
    ds2 = np.concatenate([ds[:1], ds[:1], ds[1:]])
    _, cache = attention_forward(x2, w)
    gx = attention_backward(cache, ds2)["x"]
    np.testing.assert_allclose(gx[0], gx[1], rtol=1e-12, atol=1e-15)


def test_backward_shape_check():
    x, w, _ = random_instance(5)
    _, cache = attention_forward(x, w)
    with pytest.raises(ShapeMismatch):
        attention_backward(cache, np.zeros(len(x) + 1))


# -- training ---------------------------------------------------------------

def toy_dataset(seed=0, videos=6):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(videos):
        n = int(rng.integers(2, 8))
        x = rng.normal(size=(n, 5))
        out.append((x, 1 / (1 + np.exp(-x[:, 0]))))
    return out


def test_zero_learning_rate_keeps_weights():
    res = train_relation(toy_dataset(), lr=0.0, epochs=3, seed=1, d_att=4, h_r=4)
    for name in PARAM_NAMES:
        assert getattr(res.weights, name).tobytes() == getattr(res.initial_weights, name).tobytes()
    assert len(set(res.loss_trace)) == 1 and len(res.loss_trace) == 4


def test_zero_epochs_returns_init():
    res = train_relation(toy_dataset(), epochs=0, seed=1, d_att=4, h_r=4)
    init = RelationWeights.init(5, 4, 4, seed=1)
    for name in PARAM_NAMES:
        assert getattr(res.weights, name).tobytes() == getattr(init, name).tobytes()


def test_init_bounds():
    w = RelationWeights.init(9, 7, 5, seed=0)
    for name in ("w_q", "w_k", "w_v", "w_o", "w1", "w2"):
        assert np.abs(getattr(w, name)).max() <= 1 / 3
    assert not w.b1.any() and not w.b2.any()


def test_training_reduces_loss_deterministically():
    a = train_relation(toy_dataset(), lr=0.1, epochs=30, seed=0, d_att=4, h_r=8)
    b = train_relation(toy_dataset(), lr=0.1, epochs=30, seed=0, d_att=4, h_r=8)
    assert a.loss_trace == b.loss_trace
    assert a.loss_trace[-1] < a.loss_trace[0]


def test_divergence_is_reported():
    with pytest.raises(DivergenceError):
        train_relation(toy_dataset(), lr=1e200, epochs=5, seed=0, d_att=4, h_r=4)


def test_training_validates_targets():
    with pytest.raises(ValueError):
        train_relation([(np.zeros((2, 3)), np.array([0.5, 1.5]))], epochs=1)
    with pytest.raises(ValueError):
        train_relation([], epochs=1)


def test_weights_round_trip(tmp_path):
    w = RelationWeights.init(6, 3, 4, seed=9)
    w.save(tmp_path / "r")
    again = RelationWeights.load(tmp_path / "r")
    for name in PARAM_NAMES:
        np.testing.assert_array_equal(getattr(again, name), getattr(w, name).astype(np.float32))
    again.save(tmp_path / "r2")
    for p in (tmp_path / "r").iterdir():
        assert (tmp_path / "r2" / p.name).read_bytes() == p.read_bytes()


# -- rescoring --------------------------------------------------------------

def test_combine_modes():
    props = [prop(0.1, 0.3, 0.9), prop(0.5, 0.8, 0.5)]
    out = apply_refined(props, [0.4, 0.9], "multiply")
    assert [p.score for p in out] == pytest.approx([0.45, 0.36])
    assert out[0].segment == props[1].segment
    out = apply_refined(props, [0.4, 0.9], "replace")
    assert sorted(p.score for p in out) == [0.4, 0.9]
    out = apply_refined(props, [0.4, 0.9], "average")
    assert sorted(p.score for p in out) == pytest.approx([0.65, 0.7])


def test_unit_refinement_keeps_ranking():
    props = [prop(0.1, 0.3, 0.9), prop(0.5, 0.8, 0.5), prop(0.2, 0.9, 0.7)]
    out = apply_refined(props, [1.0, 1.0, 1.0], "multiply")
    assert [p.segment for p in out] == [props[0].segment, props[2].segment, props[1].segment]


def test_rescore_proposals(small_synth):
    vid = sorted(small_synth.features)[0]
    seq = small_synth.features[vid]
    props = [prop(0.1, 0.3, 0.9), prop(0.5, 0.8, 0.5), prop(0.2, 0.9, 0.7)]
    w = RelationWeights.init(feature_dim(2), 4, 4, seed=0)
    out = rescore_proposals(props, seq, w, k=2)
    assert len(out) == 3 and all(0 < p.refined_score < 1 for p in out)
    with pytest.raises(ShapeMismatch):
        rescore_proposals(props, seq, w, k=3)
    with pytest.raises(ValueError):
        rescore_proposals([], seq, w, k=2)
