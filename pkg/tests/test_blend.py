import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blendnet import autodiff as ad
from blendnet import oracles
from blendnet.autodiff import ShapeError, Tensor
from blendnet.autodiff.gradcheck import check_gradients, pinned_sensitivity
from blendnet.blend import (
    BlendConfig,
    BlendOrder,
    EmbeddingStrategy,
    ScmWeights,
    TcmWeights,
    blend_block,
    scm_forward,
    spatial_attention,
    tcm_forward,
    temporal_attention_map,
    temporal_softmax,
)


def random_scm(rng, c, r=2, std=1.0):
    return ScmWeights.init(c, r, rng=rng, std=std)


def random_tcm(rng, c, T, std=0.5):
    return TcmWeights.init(c, T, rng=rng, std=std)


def frames(rng, T, c, h, w, grad=False):
    return [Tensor(rng.standard_normal((c, h, w)), requires_grad=grad) for _ in range(T)]


# ---------------------------------------------------------------- SCM

def test_scm_zero_input_gives_zero():
    w = random_scm(np.random.default_rng(0), 4)
    assert not scm_forward(Tensor(np.zeros((4, 3, 3))), w).data.any()


def test_scm_zero_transform_is_identity():
    rng = np.random.default_rng(1)
    w = random_scm(rng, 4)
    w.w3.data[:] = 0.0
    x = Tensor(rng.standard_normal((4, 3, 3)))
    np.testing.assert_array_equal(scm_forward(x, w).data, x.data)


def test_scm_matches_loop_oracle():
    rng = np.random.default_rng(2)
    w = random_scm(rng, 4)
    x = rng.standard_normal((4, 3, 3))
    ref = np.array(oracles.scm_loop(x.tolist(), w.w1.data.tolist(), w.w2.data.tolist(), w.w3.data.tolist()))
    assert np.max(np.abs(scm_forward(Tensor(x), w).data - ref)) < 1e-10


def test_scm_channel_mismatch():
    w = random_scm(np.random.default_rng(3), 4)
    with pytest.raises(ShapeError):
        scm_forward(Tensor(np.zeros((6, 2, 2))), w)


def test_scm_context_is_permutation_invariant():
    rng = np.random.default_rng(4)
    w = random_scm(rng, 4)
    x = rng.standard_normal((4, 3, 5))
    perm = rng.permutation(15)
    xp = x.reshape(4, 15)[:, perm].reshape(4, 3, 5)
    delta = scm_forward(Tensor(x), w).data - x
    delta_p = scm_forward(Tensor(xp), w).data - xp
    np.testing.assert_allclose(delta_p.reshape(4, 15), delta.reshape(4, 15)[:, perm], atol=1e-13)


# ---------------------------------------------------------------- temporal softmax / attention map

def test_temporal_softmax_examples():
    same = temporal_softmax(Tensor(np.full((4, 2, 3), 0.7))).data
    np.testing.assert_allclose(same, 0.25, atol=1e-15)
    single = temporal_softmax(Tensor(np.random.default_rng(5).standard_normal((1, 3, 3)))).data
    assert np.all(single == 1.0)
    pair = temporal_softmax(Tensor(np.array([0.0, math.log(3)]).reshape(2, 1, 1))).data.ravel()
    np.testing.assert_allclose(pair, [0.25, 0.75], atol=1e-15)


def test_temporal_softmax_empty_raises():
    with pytest.raises(ValueError):
        temporal_softmax(Tensor(np.zeros((0, 2, 2))))


def test_attention_map_examples():
    ones = Tensor(np.ones((1, 3, 4)))
    np.testing.assert_array_equal(temporal_attention_map(ones, 0).data, np.ones((3, 4)))
    T = 3
    uniform = Tensor(np.full((T, 4, 4), 1.0 / T))
    np.testing.assert_allclose(temporal_attention_map(uniform, 1).data, 1.0 / T**2, rtol=1e-15)


def test_attention_map_matches_loop_oracle():
    rng = np.random.default_rng(6)
    weights = temporal_softmax(Tensor(rng.standard_normal((3, 4, 5)))).data
    for t in range(3):
        ref = np.array(oracles.attention_map_loop(weights.tolist(), t))
        assert np.max(np.abs(temporal_attention_map(Tensor(weights), t).data - ref)) < 1e-12


# ---------------------------------------------------------------- TCM

def test_tcm_zero_transforms_is_identity():
    rng = np.random.default_rng(7)
    w = random_tcm(rng, 3, 3)
    for o in w.w5:
        w.w5[o].data[:] = 0.0
        w.w6[o].data[:] = 0.0
    xs = frames(rng, 3, 3, 2, 2)
    np.testing.assert_array_equal(tcm_forward(xs, w).data, xs[1].data)


def test_tcm_single_frame_zero_weights_is_identity():
    rng = np.random.default_rng(8)
    w = random_tcm(rng, 2, 1)
    for bank in (w.w4, w.w5, w.w6):
        bank[0].data[:] = 0.0
    xs = frames(rng, 1, 2, 3, 3)
    np.testing.assert_array_equal(tcm_forward(xs, w).data, xs[0].data)


def tcm_reference(xs, w):
    w4s, w5s, w6s = w.resolve(len(xs))
    return np.array(oracles.tcm_loop([x.data.tolist() for x in xs], [a.data.tolist() for a in w4s],
                                     [a.data.tolist() for a in w5s], [a.data.tolist() for a in w6s]))


def test_tcm_matches_loop_oracle():
    rng = np.random.default_rng(9)
    w = random_tcm(rng, 2, 3)
    xs = frames(rng, 3, 2, 2, 2)
    assert np.max(np.abs(tcm_forward(xs, w).data - tcm_reference(xs, w))) < 1e-10


def test_tcm_inconsistent_frames_raise():
    rng = np.random.default_rng(10)
    w = random_tcm(rng, 2, 3)
    xs = frames(rng, 3, 2, 2, 2)
    xs[2] = Tensor(np.zeros((2, 3, 2)))
    with pytest.raises(ShapeError):
        tcm_forward(xs, w)


def test_tcm_nearest_offset_reuse():
    w = random_tcm(np.random.default_rng(11), 2, 3)
    w4s, _, w6s = w.resolve(7)
    assert [x is w.w4[-1] for x in w4s] == [True, True, True, False, False, False, False]
    assert w6s[6] is w.w6[1] and w6s[3] is w.w6[0]
    w4s, _, _ = w.resolve(1)
    assert w4s == [w.w4[0]]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_tcm_oracle_random_shapes(seed):
    rng = np.random.default_rng(seed)
    T = int(rng.choice([1, 3, 5]))
    c, h, wd = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
    w = random_tcm(rng, c, int(rng.choice([1, 3, 5])))
    xs = frames(rng, T, c, h, wd)
    assert np.max(np.abs(tcm_forward(xs, w).data - tcm_reference(xs, w))) < 1e-10


# ---------------------------------------------------------------- normalisation properties

@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_attention_weights_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    T, c = int(rng.integers(1, 8)), int(rng.integers(1, 6))
    h, wd = int(rng.integers(1, 7)), int(rng.integers(1, 7))
    scale = 10.0 ** rng.uniform(-2, 2)
    weights = temporal_softmax(Tensor(scale * rng.standard_normal((T, h, wd)))).data
    assert np.max(np.abs(weights.sum(axis=0) - 1.0)) <= 1e-12
    x = Tensor(scale * rng.standard_normal((c, h, wd)))
    alpha = spatial_attention(x, ScmWeights.init(c, 1, rng=rng, std=1.0)).data
    assert abs(alpha.sum() - 1.0) <= 1e-12


# ---------------------------------------------------------------- gradients

@pytest.mark.parametrize("strategy", list(EmbeddingStrategy))
def test_tcm_gradients_finite_differences(strategy):
    rng = np.random.default_rng(12)
    w = random_tcm(rng, 3, 3)
    xs = frames(rng, 3, 3, 2, 3, grad=True)
    probe = Tensor(rng.standard_normal((3, 2, 3)))
    params = list(w.named().values())

    def loss():
        return ad.sum_(ad.mul(tcm_forward(xs, w, strategy), probe))

    trainable = params + (xs if strategy is EmbeddingStrategy.POSITIONAL else [xs[1]])
    assert check_gradients(loss, trainable) < 1e-4


def test_scm_gradients_finite_differences():
    rng = np.random.default_rng(13)
    w = random_scm(rng, 4)
    x = Tensor(rng.standard_normal((4, 3, 2)), requires_grad=True)
    probe = Tensor(rng.standard_normal((4, 3, 2)))
    assert check_gradients(lambda: ad.sum_(ad.mul(scm_forward(x, w), probe)),
                           [x, w.w1, w.w2, w.w3]) < 1e-4


def test_main_and_refs_blocks_reference_gradients():
    rng = np.random.default_rng(14)
    w = random_tcm(rng, 3, 3)
    xs = frames(rng, 3, 3, 2, 2, grad=True)
    probe = Tensor(rng.standard_normal((3, 2, 2)))

    def loss(strategy):
        return ad.sum_(ad.mul(tcm_forward(xs, w, strategy), probe))

    loss(EmbeddingStrategy.MAIN_AND_REFS).backward()
    assert xs[0].grad is None and xs[2].grad is None
    assert xs[1].grad is not None and np.any(xs[1].grad)
    idx = np.arange(xs[0].data.size)
    pinned = pinned_sensitivity(lambda: loss(EmbeddingStrategy.MAIN_AND_REFS), xs[0].data, idx)
    assert np.max(np.abs(pinned)) <= 1e-9
    positional = pinned_sensitivity(lambda: loss(EmbeddingStrategy.POSITIONAL), xs[0].data, idx)
    assert np.max(np.abs(positional)) > 1e-6


# ---------------------------------------------------------------- blend block

def test_blend_block_orders():
    rng = np.random.default_rng(15)
    c = 4
    scm, tcm = random_scm(rng, c), random_tcm(rng, c, 3)
    xs = frames(rng, 3, c, 3, 3)
    none = blend_block(xs, scm, tcm, BlendConfig(T=3, order=BlendOrder.NONE))
    assert none is xs[1]
    composed = blend_block(xs, scm, tcm, BlendConfig(T=3, order=BlendOrder.TCM_THEN_SCM))
    np.testing.assert_array_equal(composed.data, scm_forward(tcm_forward(xs, tcm), scm).data)
    swapped = blend_block(xs, scm, tcm, BlendConfig(T=3, order=BlendOrder.SCM_THEN_TCM))
    np.testing.assert_array_equal(swapped.data, tcm_forward([scm_forward(x, scm) for x in xs], tcm).data)
    scm.w3.data[:] = 0.0
    only = blend_block(xs, scm, tcm, BlendConfig(T=3, order=BlendOrder.SCM_ONLY))
    np.testing.assert_array_equal(only.data, xs[1].data)


def test_blend_config_validation():
    with pytest.raises(ValueError):
        BlendConfig(T=4)
    with pytest.raises(ValueError):
        BlendConfig(order="sideways")
    cfg = BlendConfig(T=3, order="tcm_only", insertion_point="after_1x1")
    assert cfg.order is BlendOrder.TCM_ONLY
    with pytest.raises(ValueError):
        cfg.check_channels(6)
