"""Pattern modules: spatial-sequence aggregator (SSA), temporal-position
aggregator (TPA) and spatial-temporal graph matching (STGM)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .params import const, xavier
from .tensor import Tensor


def attention(q, k, v, scaled=True):
    """softmax(q k^T [/ sqrt(d)]) v over the last two axes.

    Returns (output, weights).
    """
    scores = T.matmul(q, T.swap_last(k))
    if scaled:
        scores = T.scale(scores, 1.0 / math.sqrt(q.shape[-1]))
    weights = T.softmax(scores)
    return T.matmul(weights, v), weights


def multihead_self_attention(x, w_q, w_k, w_v, w_o, n_heads):
    """Standard multi-head self-attention over axis -2 of x[B, S, D]."""
    B, S, D = x.shape
    if D % n_heads:
        raise DimensionError(f"width {D} not divisible by {n_heads} heads")
    dh = D // n_heads

    def split(t):
        return T.permute(T.reshape(t, (B, S, n_heads, dh)), (0, 2, 1, 3))

    q, k, v = split(T.linear(x, w_q)), split(T.linear(x, w_k)), split(T.linear(x, w_v))
    out, _ = attention(q, k, v)
    out = T.reshape(T.permute(out, (0, 2, 1, 3)), (B, S, D))
    return T.linear(out, w_o)


# ----------------------------------------------------------------------- SSA

@dataclass
class SsaParams:
    w_ih: Tensor   # D x 4D, gate blocks i|f|g|o
    w_hh: Tensor   # D x 4D
    b: Tensor      # 4D
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    w_g: Tensor    # D x D gate matrix

    @classmethod
    def init(cls, rng, width):
        b = np.zeros(4 * width)
        b[width:2 * width] = 1.0  # forget gate
        return cls(
            w_ih=xavier(rng, width, 4 * width),
            w_hh=xavier(rng, width, 4 * width),
            b=Tensor(b, requires_grad=True),
            w_q=xavier(rng, width, width),
            w_k=xavier(rng, width, width),
            w_v=xavier(rng, width, width),
            w_o=xavier(rng, width, width),
            w_g=xavier(rng, width, width),
        )


def lstm_cell_step(x, h, c, p):
    """One LSTM step built from primitive ops; x, h, c share shape (..., D)."""
    H = p.w_hh.shape[0]
    bias = T.reshape(p.b, (1,) * (x.ndim - 1) + (4 * H,))
    z = T.add(T.add(T.linear(x, p.w_ih), T.linear(h, p.w_hh)), bias)
    i = T.sigmoid(T.slice_last(z, 0, H))
    f = T.sigmoid(T.slice_last(z, H, 2 * H))
    g = T.tanh(T.slice_last(z, 2 * H, 3 * H))
    o = T.sigmoid(T.slice_last(z, 3 * H, 4 * H))
    c_new = T.add(T.mul(f, c), T.mul(i, g))
    h_new = T.mul(o, T.tanh(c_new))
    return h_new, c_new


def ssa_forward(x, p, n_heads=4, chunk_frames=False, return_gate=False):
    """x (B, m, N, D) -> S (B, m, N, D).

    The m*N frame is flattened time-major into one token sequence, run
    through an LSTM and multi-head self-attention (summed), then gated by a
    feature-axis softmax.  ``chunk_frames`` restricts attention to tokens of
    the same time step.
    """
    B, m, N, D = x.shape
    seq = T.reshape(x, (B, m * N, D))
    h_lstm = T.lstm_scan(seq, p.w_ih, p.w_hh, p.b)
    if chunk_frames:
        frames = T.reshape(x, (B * m, N, D))
        h_att = T.reshape(multihead_self_attention(frames, p.w_q, p.w_k, p.w_v, p.w_o, n_heads), (B, m * N, D))
    else:
        h_att = multihead_self_attention(seq, p.w_q, p.w_k, p.w_v, p.w_o, n_heads)
    hidden = T.add(h_lstm, h_att)
    gate = T.softmax(T.linear(hidden, T.permute(p.w_g, (1, 0))))
    s = T.reshape(T.mul(gate, hidden), (B, m, N, D))
    return (s, gate) if return_gate else s


# ---------------------------------------------------------------------- STGM

@dataclass
class StgmParams:
    w_t: Tensor   # D x D
    w_s: Tensor   # D x D
    w_h: Tensor   # 2D x D
    alpha_q: Tensor
    alpha_k: Tensor
    alpha_v: Tensor
    beta_q: Tensor
    beta_k: Tensor
    beta_v: Tensor

    @classmethod
    def init(cls, rng, width):
        sq = [xavier(rng, width, width) for _ in range(8)]
        return cls(w_t=sq[0], w_s=sq[1], w_h=xavier(rng, 2 * width, width),
                   alpha_q=sq[2], alpha_k=sq[3], alpha_v=sq[4],
                   beta_q=sq[5], beta_k=sq[6], beta_v=sq[7])


def stgm_forward(x_pos, p, stages=4, trace=None):
    """Bidirectional spatial/temporal matching on x_pos (..., m, D).

    alpha: spatial queries attend to temporal keys/values, concat with the
           spatial branch and project by W_H (2D x D) -> S_sgm
    beta:  temporal queries attend to S_sgm, residual with T_pos -> T_sgm
    gamma: S_enh = softmax(S_sgm T_sgm^T) T_sgm (unscaled)
    delta: T_fused = softmax(T_sgm S_enh^T) S_enh + T_sgm (unscaled)

    ``stages=2`` stops after beta and returns T_sgm.  ``trace``, if a dict,
    receives the intermediate tensors and attention maps.
    """
    if x_pos.ndim < 2:
        raise DimensionError(f"x_pos must be (..., m, D), got {x_pos.shape}")
    if p.w_h.shape[0] != 2 * p.w_t.shape[1]:
        raise DimensionError(f"W_H must be 2D x D, got {p.w_h.shape}")
    t_pos = T.linear(x_pos, p.w_t)
    s_pos = T.linear(x_pos, p.w_s)

    a_out, a_w = attention(T.linear(s_pos, p.alpha_q), T.linear(t_pos, p.alpha_k), T.linear(t_pos, p.alpha_v))
    s_sgm = T.linear(T.concat([s_pos, a_out], axis=-1), p.w_h)

    b_out, b_w = attention(T.linear(t_pos, p.beta_q), T.linear(s_sgm, p.beta_k), T.linear(s_sgm, p.beta_v))
    t_sgm = T.add(b_out, t_pos)
    if trace is not None:
        trace.update(t_pos=t_pos, s_pos=s_pos, s_sgm=s_sgm, t_sgm=t_sgm, alpha=a_w, beta=b_w)
    if stages == 2:
        return t_sgm
    if stages != 4:
        raise ValueError(f"stages must be 2 or 4, got {stages}")

    s_enh, g_w = attention(s_sgm, t_sgm, t_sgm, scaled=False)
    d_out, d_w = attention(t_sgm, s_enh, s_enh, scaled=False)
    t_fused = T.add(d_out, t_sgm)
    if trace is not None:
        trace.update(s_enh=s_enh, t_fused=t_fused, gamma=g_w, delta=d_w)
    return t_fused


# ----------------------------------------------------------------------- TPA

@dataclass
class TpaParams:
    pos_emb: Tensor   # m x D
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    out_proj: Tensor  # D x D

    @classmethod
    def init(cls, rng, m, width, step_std=0.02):
        # Gaussian random walk along time, one walk per feature
        walk = np.cumsum(rng.normal(0.0, step_std, size=(m, width)), axis=0)
        return cls(
            pos_emb=Tensor(walk, requires_grad=True),
            ffn_w1=xavier(rng, width, width),
            ffn_b1=const((width,)),
            ffn_w2=xavier(rng, width, width),
            ffn_b2=const((width,)),
            out_proj=xavier(rng, width, width),
        )


def tpa_forward(x, p, s, use_tpa=True, use_stgm=True, stgm_stages=4, trace=None):
    """x (B, m, N, D) -> T (B, m, N, D), constant along the node axis."""
    B, m, N, D = x.shape
    if not use_tpa:
        return Tensor(np.zeros((B, m, N, D)))
    if p.pos_emb.shape != (m, D):
        raise DimensionError(f"pos_emb {p.pos_emb.shape} != ({m}, {D})")
    pooled = T.mean(x, axis=2)
    x_pos = T.add(pooled, T.reshape(p.pos_emb, (1, m, D)))
    z = T.linear(T.relu(T.linear(x_pos, p.ffn_w1, p.ffn_b1)), p.ffn_w2, p.ffn_b2)
    h = stgm_forward(z, s, stages=stgm_stages, trace=trace) if use_stgm else z
    out = T.linear(h, p.out_proj)
    if trace is not None:
        trace.update(x_pos=x_pos, h_tpa=h)
    return T.expand(T.reshape(out, (B, m, 1, D)), (B, m, N, D))
