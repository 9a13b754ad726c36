import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from prn.augment import ShiftSpec, StepTooLarge, augment_features, temporal_shift
from prn.ingest import FeatureSequence


def test_noop_spec():
    x = np.random.default_rng(0).normal(size=(5, 4))
    out = temporal_shift(FeatureSequence("v", x), ShiftSpec(0.0, 0.0, 1))
    np.testing.assert_array_equal(out.data, x)


def test_hand_applied_shift():
    x = np.arange(12, dtype=float).reshape(3, 4) + 1
    out = temporal_shift(FeatureSequence("v", x), ShiftSpec(0.25, 0.25, 1)).data
    np.testing.assert_array_equal(out[:, 0], [0, x[0, 0], x[1, 0]])
    np.testing.assert_array_equal(out[:, 1], [x[1, 1], x[2, 1], 0])
    np.testing.assert_array_equal(out[:, 2:], x[:, 2:])


def test_zero_fixed_point():
    out = temporal_shift(FeatureSequence("v", np.zeros((6, 9))), ShiftSpec())
    assert not out.data.any()


def test_step_too_large():
    with pytest.raises(StepTooLarge):
        temporal_shift(FeatureSequence("v", np.ones((3, 4))), ShiftSpec(0.25, 0.25, 3))


@pytest.mark.parametrize("f,b,step", [(0.6, 0.5, 1), (-0.1, 0.2, 1), (0.2, 0.2, 0)])
def test_bad_spec(f, b, step):
    with pytest.raises(ValueError):
        ShiftSpec(f, b, step)


specs = st.builds(lambda f, b, s: ShiftSpec(f, b * (1 - f), s),
                  st.floats(0, 1), st.floats(0, 1), st.integers(1, 4))


@given(arrays(np.float64, st.tuples(st.integers(5, 20), st.integers(1, 12)), elements=st.floats(-10, 10)), specs)
def test_shift_properties(x, spec):
    t, c = x.shape
    out = temporal_shift(FeatureSequence("v", x), spec).data
    assert out.shape == x.shape
    a, b = spec.channel_split(c)
    np.testing.assert_array_equal(out[:, b:], x[:, b:])
    k = spec.step
    for ch in range(a):
        assert sorted(out[:, ch]) == sorted(list(x[: t - k, ch]) + [0.0] * k)
    for ch in range(a, b):
        assert sorted(out[:, ch]) == sorted(list(x[k:, ch]) + [0.0] * k)


@given(arrays(np.float64, st.tuples(st.integers(3, 20), st.integers(1, 6)), elements=st.floats(-10, 10)),
       st.integers(1, 2))
def test_forward_then_backward_loses_tail(x, step):
    t, c = x.shape
    fwd = temporal_shift(FeatureSequence("v", x), ShiftSpec(1.0, 0.0, step))
    back = temporal_shift(fwd, ShiftSpec(0.0, 1.0, step)).data
    expected = x.copy()
    expected[t - step:] = 0.0
    np.testing.assert_array_equal(back, expected)


def test_augment_modes():
    feats = {"v": FeatureSequence("v", np.ones((4, 4)))}
    both = augment_features(feats, ShiftSpec(), "append-as-extra-sample")
    assert sorted(both) == ["v", "v__shift"]
    assert both["v"] is feats["v"]
    only = augment_features(feats, ShiftSpec(), "replace")
    assert sorted(only) == ["v"] and only["v"].data[0, 0] == 0.0
    with pytest.raises(ValueError):
        augment_features(feats, ShiftSpec(), "sideways")
