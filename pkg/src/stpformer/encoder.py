"""Encoder block with geographic, spatial and temporal attention heads.

Geographical and spatial heads attend over nodes within each time step and
are masked by hop-distance masks; temporal heads attend over time within
each node.  Heads are concatenated (geo, spat, temp), projected by W_O, and
followed by a position-wise FFN, each with residual + layer norm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .params import const, xavier
from .tensor import Tensor

MASK_MODES = ("multiply", "additive")
_NEG = -1e9


@dataclass
class EncoderBlockParams:
    w_q: Tensor   # D x D; column block j is head j's D x d0 matrix
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    ffn_w1: Tensor  # D x 4D
    ffn_b1: Tensor
    ffn_w2: Tensor  # 4D x D
    ffn_b2: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor

    @classmethod
    def init(cls, rng, width):
        return cls(
            w_q=xavier(rng, width, width), w_k=xavier(rng, width, width),
            w_v=xavier(rng, width, width), w_o=xavier(rng, width, width),
            ffn_w1=xavier(rng, width, 4 * width), ffn_b1=const((4 * width,)),
            ffn_w2=xavier(rng, 4 * width, width), ffn_b2=const((width,)),
            ln1_g=const((width,), 1.0), ln1_b=const((width,)),
            ln2_g=const((width,), 1.0), ln2_b=const((width,)),
        )


def head_width(width, h_geo, h_spat, h_temp):
    n = h_geo + h_spat + h_temp
    if n <= 0 or width % n:
        raise ConfigError(f"width {width} is not divisible by total head count {n}")
    return width // n


def _apply_mask(scores_or_weights, mask, mode):
    if mode == "multiply":
        return T.mul(scores_or_weights, mask)
    return T.add(scores_or_weights, Tensor((1.0 - mask.data) * _NEG))


def masked_attention_head(x_t, mask, w_q, w_k, w_v, mask_mode="multiply", return_weights=False):
    """Single head over rows of x_t (..., N, D).

    multiply mode: (softmax(QK^T/sqrt(d0)) * mask) V, no renormalization.
    additive mode: softmax(QK^T/sqrt(d0) - inf*(1-mask)) V.
    """
    q, k, v = T.linear(x_t, w_q), T.linear(x_t, w_k), T.linear(x_t, w_v)
    n = x_t.shape[-2]
    scores = T.scale(T.matmul(q, T.swap_last(k)), 1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
        if mask.shape != (n, n):
            raise DimensionError(f"mask {mask.shape} does not match {n} tokens")
        mask_t = Tensor(mask.reshape((1,) * (scores.ndim - 2) + (n, n)))
        if mask_mode == "additive":
            weights = T.softmax(_apply_mask(scores, mask_t, "additive"))
        else:
            weights = _apply_mask(T.softmax(scores), mask_t, "multiply")
    else:
        weights = T.softmax(scores)
    out = T.matmul(weights, v)
    return (out, weights) if return_weights else out


def encoder_block_forward(x, masks, p, h_geo, h_spat, h_temp, mask_mode="multiply", trace=None):
    """x (B, m, N, D) -> H (B, m, N, D)."""
    if mask_mode not in MASK_MODES:
        raise ConfigError(f"mask_mode must be one of {MASK_MODES}")
    B, m, N, D = x.shape
    d0 = head_width(D, h_geo, h_spat, h_temp)
    q, k, v = T.linear(x, p.w_q), T.linear(x, p.w_k), T.linear(x, p.w_v)
    scale = 1.0 / math.sqrt(d0)
    parts = []

    hs = h_geo + h_spat
    if hs:
        def spatial(t):
            t = T.slice_last(t, 0, hs * d0)
            return T.permute(T.reshape(t, (B, m, N, hs, d0)), (0, 1, 3, 2, 4))

        scores = T.scale(T.matmul(spatial(q), T.swap_last(spatial(k))), scale)  # B,m,hs,N,N
        head_masks = np.stack([masks.m_geo] * h_geo + [masks.m_spat] * h_spat)
        if head_masks.shape[1:] != (N, N):
            raise DimensionError(f"masks are {head_masks.shape[1:]}, expected ({N}, {N})")
        mask_t = Tensor(head_masks.reshape(1, 1, hs, N, N))
        if mask_mode == "additive":
            w_sp = T.softmax(_apply_mask(scores, mask_t, "additive"))
        else:
            w_sp = _apply_mask(T.softmax(scores), mask_t, "multiply")
        out = T.matmul(w_sp, spatial(v))
        parts.append(T.reshape(T.permute(out, (0, 1, 3, 2, 4)), (B, m, N, hs * d0)))
        if trace is not None:
            trace["spatial_weights"] = w_sp

    if h_temp:
        def temporal(t):
            t = T.slice_last(t, hs * d0, D)
            return T.permute(T.reshape(t, (B, m, N, h_temp, d0)), (0, 2, 3, 1, 4))  # B,N,ht,m,d0

        scores = T.scale(T.matmul(temporal(q), T.swap_last(temporal(k))), scale)
        w_tm = T.softmax(scores)
        out = T.matmul(w_tm, temporal(v))  # B,N,ht,m,d0
        parts.append(T.reshape(T.permute(out, (0, 3, 1, 2, 4)), (B, m, N, h_temp * d0)))
        if trace is not None:
            trace["temporal_weights"] = w_tm

    heads = parts[0] if len(parts) == 1 else T.concat(parts, axis=-1)
    h = T.layer_norm(T.add(x, T.linear(heads, p.w_o)), p.ln1_g, p.ln1_b)
    ffn = T.linear(T.relu(T.linear(h, p.ffn_w1, p.ffn_b1)), p.ffn_w2, p.ffn_b2)
    return T.layer_norm(T.add(h, ffn), p.ln2_g, p.ln2_b)
