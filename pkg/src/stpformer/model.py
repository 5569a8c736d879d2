"""Model assembly: configuration, attention mixer, output head, forward pass."""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .embedding import EmbeddingParams, embed, sinusoidal_pe
from .encoder import MASK_MODES, EncoderBlockParams, encoder_block_forward, head_width
from .errors import ConfigError, NumericalError
from .graph import hop_masks, normalized_laplacian, topk_eigenvectors
from .params import ParameterStore, const, normal, xavier
from .pattern import SsaParams, StgmParams, TpaParams, ssa_forward, tpa_forward
from .tensor import Tensor


@dataclass
class ModelConfig:
    m: int = 12
    h: int = 12
    n_nodes: int = 8
    d_in: int = 1
    d_out: int | None = None
    D: int = 32
    L: int = 2
    k: int = 8
    d_spat: int = 1
    d_geo: int = 3
    h_spat: int = 2
    h_geo: int = 2
    h_temp: int = 4
    ssa_heads: int = 4
    steps_per_day: int = 288
    use_tpa: bool = True
    use_stgm: bool = True
    use_ssa: bool = True
    mask_mode: str = "multiply"
    eig_order: str = "smallest"
    stgm_stages: int = 4
    ssa_chunk: bool = False

    def __post_init__(self):
        if self.d_out is None:
            self.d_out = self.d_in

    def validate(self):
        for name in ("m", "h", "n_nodes", "d_in", "d_out", "D", "k", "d_spat", "d_geo",
                     "ssa_heads", "steps_per_day"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.L < 1:
            raise ConfigError("L must be >= 1 (the mixer sums at least one encoder layer)")
        if self.k > self.n_nodes:
            raise ConfigError(f"k={self.k} exceeds n_nodes={self.n_nodes}")
        if self.d_spat > self.d_geo:
            raise ConfigError("d_spat must not exceed d_geo")
        if min(self.h_spat, self.h_geo, self.h_temp) < 0:
            raise ConfigError("head counts must be >= 0")
        head_width(self.D, self.h_geo, self.h_spat, self.h_temp)
        if self.D % self.ssa_heads:
            raise ConfigError(f"D={self.D} not divisible by ssa_heads={self.ssa_heads}")
        if self.use_stgm and not self.use_tpa:
            raise ConfigError("use_stgm requires use_tpa (STGM is a sub-module of TPA)")
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {MASK_MODES}")
        if self.eig_order not in ("smallest", "largest"):
            raise ConfigError("eig_order must be 'smallest' or 'largest'")
        if self.stgm_stages not in (2, 4):
            raise ConfigError("stgm_stages must be 2 or 4")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class MixerParams:
    proj_w: list   # L x (D x D), 1x1 conv kernels [C_out, C_in]
    proj_b: list   # L x (D,)
    head_w1: Tensor  # d_out x D
    head_b1: Tensor
    head_w2: Tensor  # m x h, temporal map
    head_b2: Tensor

    @classmethod
    def init(cls, rng, cfg):
        return cls(
            proj_w=[xavier(rng, cfg.D, cfg.D) for _ in range(cfg.L)],
            proj_b=[const((cfg.D,)) for _ in range(cfg.L)],
            # small kernel + unit bias: the single-channel ReLU starts active
            head_w1=normal(rng, (cfg.d_out, cfg.D)),
            head_b1=const((cfg.d_out,), 1.0),
            head_w2=xavier(rng, cfg.m, cfg.h),
            head_b2=const((cfg.h,)),
        )


@dataclass
class ModelParams:
    embed: EmbeddingParams
    ssa: SsaParams
    tpa: TpaParams
    stgm: StgmParams
    blocks: list = field(default_factory=list)
    mixer: MixerParams | None = None

    @classmethod
    def init(cls, cfg, seed=1):
        rng = np.random.default_rng(seed)
        return cls(
            embed=EmbeddingParams.init(rng, cfg.d_in, cfg.D, cfg.k, cfg.steps_per_day),
            ssa=SsaParams.init(rng, cfg.D),
            tpa=TpaParams.init(rng, cfg.m, cfg.D),
            stgm=StgmParams.init(rng, cfg.D),
            blocks=[EncoderBlockParams.init(rng, cfg.D) for _ in range(cfg.L)],
            mixer=MixerParams.init(rng, cfg),
        )


def attention_mixer_forward(x_emb, t, s, blocks, p, masks, cfg, trace=None):
    """X_mix = x_emb + T + S, run the encoder stack, 1x1-project each layer
    output in (B, D, N, m) layout and sum: returns S_mix (B, D, N, m).

    ``t`` or ``s`` may be None (module disabled).
    """
    if len(blocks) < 1:
        raise ConfigError("the mixer needs at least one encoder block")
    x = x_emb
    for part in (t, s):
        if part is not None:
            x = T.add(x, part)
    if trace is not None:
        trace["x_mix"] = x
    s_mix = None
    h = x
    for layer, bp in enumerate(blocks):
        h = encoder_block_forward(h, masks, bp, cfg.h_geo, cfg.h_spat, cfg.h_temp, cfg.mask_mode)
        m_l = T.channel_project(T.permute(h, (0, 3, 2, 1)), p.proj_w[layer], p.proj_b[layer])
        if trace is not None:
            trace[f"h{layer}"] = h
        s_mix = m_l if s_mix is None else T.add(s_mix, m_l)
    return s_mix


def output_head(s_mix, p):
    """S_mix (B, D, N, m) -> Y (B, h, N, d_out)."""
    u = T.relu(T.channel_project(s_mix, p.head_w1, p.head_b1))   # B, d_out, N, m
    y = T.linear(u, p.head_w2, p.head_b2)                         # B, d_out, N, h
    return T.permute(y, (0, 3, 2, 1))


def _check(stage, t):
    if not np.isfinite(t.data).all():
        raise NumericalError(stage)
    return t


class STPFormer:
    """Parameters plus graph-derived constants for one configuration."""

    def __init__(self, cfg, graph, seed=1, params=None):
        self.cfg = cfg.validate()
        if graph.n_nodes != cfg.n_nodes:
            raise ConfigError(f"graph has {graph.n_nodes} nodes, config says {cfg.n_nodes}")
        self.graph = graph
        self.basis = topk_eigenvectors(normalized_laplacian(graph), cfg.k, cfg.eig_order)
        self.masks = hop_masks(graph, cfg.d_spat, cfg.d_geo)
        self.tpe = Tensor(sinusoidal_pe(cfg.m, cfg.D))
        self.u_spe = Tensor(self.basis.u_spe)
        self.params = params if params is not None else ModelParams.init(cfg, seed)
        self.store = ParameterStore(self.params)

    def forward(self, x, week_idx, day_idx, trace=None):
        """x (B, m, N, d_in) normalized window batch; week_idx/day_idx (B, m)."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim == 3:
            x = T.reshape(x, (1,) + x.shape)
            week_idx, day_idx = np.atleast_2d(week_idx), np.atleast_2d(day_idx)
        _check("input", x)
        cfg, p = self.cfg, self.params
        x_emb = _check("embedding", embed(p.embed, x, week_idx, day_idx, self.u_spe, self.tpe))
        t = s = None
        if cfg.use_tpa:
            t = _check("tpa", tpa_forward(x_emb, p.tpa, p.stgm, True, cfg.use_stgm, cfg.stgm_stages, trace))
        if cfg.use_ssa:
            s = _check("ssa", ssa_forward(x_emb, p.ssa, cfg.ssa_heads, cfg.ssa_chunk))
        if trace is not None:
            trace.update(x_emb=x_emb, t=t, s=s)
        s_mix = _check("mixer", attention_mixer_forward(x_emb, t, s, p.blocks, p.mixer, self.masks, cfg, trace))
        return _check("output", output_head(s_mix, p.mixer))

    __call__ = forward


def model_forward(window, week_idx, day_idx, model):
    return model.forward(window, week_idx, day_idx)
