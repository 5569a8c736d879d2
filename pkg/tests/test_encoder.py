import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import assert_gradcheck
from stpformer import tensor as T
from stpformer.encoder import EncoderBlockParams, encoder_block_forward, head_width, masked_attention_head
from stpformer.errors import ConfigError, DimensionError
from stpformer.gradcheck import check
from stpformer.graph import AttentionMasks, build_adjacency, hop_masks, ring_graph
from stpformer.params import zero_like
from stpformer.tensor import Tensor


def head_weights(rng, D=6, d0=3):
    return [Tensor(rng.normal(size=(D, d0))) for _ in range(3)]


def test_all_ones_mask_equals_unmasked():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(5, 6)))
    w = head_weights(rng)
    masked = masked_attention_head(x, np.ones((5, 5)), *w).data
    assert np.array_equal(masked, masked_attention_head(x, None, *w).data)


def test_uniform_scores_identity_mask():
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(4, 6)))
    zero = Tensor(np.zeros((6, 3)))
    w_v = Tensor(rng.normal(size=(6, 3)))
    out = masked_attention_head(x, np.eye(4), zero, zero, w_v).data
    assert np.allclose(out, (x.data @ w_v.data) / 4, rtol=0, atol=1e-15)


def test_zero_mask_zero_output():
    rng = np.random.default_rng(2)
    out = masked_attention_head(Tensor(rng.normal(size=(4, 6))), np.zeros((4, 4)), *head_weights(rng)).data
    assert not out.any()


def test_additive_mode_renormalizes():
    rng = np.random.default_rng(3)
    mask = hop_masks(build_adjacency(4, [(0, 1), (1, 2), (2, 3)]), 1, 1).m_spat
    _, w = masked_attention_head(Tensor(rng.normal(size=(4, 6))), mask, *head_weights(rng),
                                 mask_mode="additive", return_weights=True)
    assert np.abs(w.data.sum(axis=-1) - 1).max() < 1e-12
    assert (w.data[mask == 0] < 1e-300).all()


def test_mask_size_mismatch():
    rng = np.random.default_rng(4)
    with pytest.raises(DimensionError):
        masked_attention_head(Tensor(rng.normal(size=(4, 6))), np.ones((3, 3)), *head_weights(rng))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 7))
def test_masked_weights_exact_zero_and_unmasked_stochastic(seed, n):
    rng = np.random.default_rng(seed)
    mask = (rng.random((n, n)) < 0.5).astype(float)
    x = Tensor(rng.normal(size=(n, 6)) * 3)
    w = head_weights(rng)
    _, wm = masked_attention_head(x, mask, *w, return_weights=True)
    _, wu = masked_attention_head(x, None, *w, return_weights=True)
    assert (wm.data[mask == 0] == 0).all()
    assert np.abs(wu.data.sum(axis=-1) - 1).max() <= 1e-12


def test_head_width_divisibility():
    assert head_width(32, 2, 2, 4) == 4
    with pytest.raises(ConfigError):
        head_width(10, 1, 1, 1)


def _block(seed=0, D=8):
    return EncoderBlockParams.init(np.random.default_rng(seed), D)


def test_block_shape_and_zero_params():
    rng = np.random.default_rng(5)
    masks = hop_masks(ring_graph(5), 1, 2)
    x = Tensor(rng.normal(size=(2, 3, 5, 8)))
    assert encoder_block_forward(x, masks, _block(), 1, 1, 2).shape == (2, 3, 5, 8)
    p = zero_like(_block())
    p.ln1_g.data[...] = 1
    p.ln2_g.data[...] = 1
    g, b = Tensor(np.ones(8)), Tensor(np.zeros(8))
    expect = T.layer_norm(T.layer_norm(x, g, b), g, b).data
    assert np.allclose(encoder_block_forward(x, masks, p, 1, 1, 2).data, expect, rtol=0, atol=1e-12)


def test_temporal_only_block_is_per_node():
    rng = np.random.default_rng(6)
    masks = hop_masks(ring_graph(4), 1, 2)
    p = _block(1)
    x = rng.normal(size=(1, 3, 4, 8))
    full = encoder_block_forward(Tensor(x), masks, p, 0, 0, 4).data
    for n in range(4):
        alone = encoder_block_forward(Tensor(x[:, :, n:n + 1]), AttentionMasks(np.ones((1, 1)), np.ones((1, 1))),
                                      p, 0, 0, 4).data
        assert np.allclose(full[:, :, n:n + 1], alone, rtol=0, atol=1e-13)


def test_spatial_heads_use_masks():
    rng = np.random.default_rng(7)
    g = build_adjacency(4, [(0, 1), (1, 2), (2, 3)])
    trace = {}
    encoder_block_forward(Tensor(rng.normal(size=(1, 2, 4, 8))), hop_masks(g, 1, 2), _block(2), 1, 1, 2,
                          trace=trace)
    w = trace["spatial_weights"].data       # B, m, heads(geo, spat), N, N
    assert w[..., 0, 0, 3].max() == 0       # geo head: 3 hops > d_geo
    assert w[..., 1, 0, 2].max() == 0       # spat head: 2 hops > d_spat
    assert w[..., 0, 0, 2].min() > 0


def test_node_equivariance():
    rng = np.random.default_rng(8)
    g = build_adjacency(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
    perm = np.array([3, 0, 4, 1, 2])
    m = hop_masks(g, 1, 2)
    mp = AttentionMasks(m.m_spat[np.ix_(perm, perm)], m.m_geo[np.ix_(perm, perm)])
    x = rng.normal(size=(1, 3, 5, 8))
    p = _block(3)
    a = encoder_block_forward(Tensor(x), m, p, 1, 1, 2).data
    b = encoder_block_forward(Tensor(x[:, :, perm]), mp, p, 1, 1, 2).data
    assert np.allclose(a[:, :, perm], b, rtol=0, atol=1e-12)


def test_block_gradients():
    rng = np.random.default_rng(9)
    p = _block(4)
    masks = hop_masks(ring_graph(4), 1, 2)
    x = Tensor(rng.normal(size=(1, 3, 4, 8)), requires_grad=True)
    probe = Tensor(rng.normal(size=(1, 3, 4, 8)))
    tensors = [x, p.w_q, p.w_k, p.w_v, p.w_o, p.ffn_w1, p.ffn_b1, p.ffn_w2, p.ffn_b2,
               p.ln1_g, p.ln1_b, p.ln2_g, p.ln2_b]
    for mode in ("multiply", "additive"):
        _, records = check(lambda: T.sum_(T.mul(encoder_block_forward(x, masks, p, 1, 1, 2, mode), probe)),
                           tensors, n_probes=150, rng=np.random.default_rng(0))
        assert_gradcheck(records)


def test_bad_mask_mode():
    with pytest.raises(ConfigError):
        encoder_block_forward(Tensor(np.zeros((1, 2, 3, 8))), hop_masks(ring_graph(3)), _block(), 1, 1, 2, "soft")
