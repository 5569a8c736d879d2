"""Data embedding: input projection plus spectral, weekly, daily and
sinusoidal components, summed with explicit broadcasting."""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, InputError
from .params import normal, xavier, const
from .tensor import Tensor


@dataclass(frozen=True)
class TimestampMeta:
    start: dt.datetime
    interval_minutes: int

    def __post_init__(self):
        if self.interval_minutes <= 0 or 1440 % self.interval_minutes:
            raise InputError(f"interval_minutes={self.interval_minutes} must divide 1440")

    @property
    def steps_per_day(self):
        return 1440 // self.interval_minutes

    @property
    def steps_per_week(self):
        return 7 * self.steps_per_day

    @property
    def offset(self):
        """Steps elapsed since the Monday 00:00 preceding ``start``."""
        minutes = self.start.weekday() * 1440 + self.start.hour * 60 + self.start.minute
        return minutes // self.interval_minutes

    @classmethod
    def from_iso(cls, text, interval_minutes):
        return cls(dt.datetime.fromisoformat(text), int(interval_minutes))


def periodic_indices(meta, t):
    """(week_idx, day_idx) for step ``t``; works elementwise on int arrays.

    Monday is weekday 0.
    """
    if np.any(np.asarray(t) < 0):
        raise InputError("step index must be >= 0")
    s = meta.offset + np.asarray(t, dtype=np.int64)
    day_idx = s % meta.steps_per_day
    week_idx = (s // meta.steps_per_day) % 7
    if np.ndim(t) == 0:
        return int(week_idx), int(day_idx)
    return week_idx, day_idx


def sinusoidal_pe(m, width):
    """Fixed positional code, row t, column i:
    sin(t / 10000^(2i/D)) for even i, cos(t / 10000^(2(i-1)/D)) for odd i.
    """
    if width < 1:
        raise DimensionError("width must be >= 1")
    t = np.arange(m, dtype=np.float64)[:, None]
    i = np.arange(width)
    expo = np.where(i % 2 == 0, 2 * i, 2 * (i - 1)) / width
    angle = t / np.power(10000.0, expo)[None, :]
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


@dataclass
class EmbeddingParams:
    w_data: Tensor      # d_in x D
    b_data: Tensor      # D
    w_spe: Tensor       # k x D
    b_spe: Tensor       # D
    table_week: Tensor  # 7 x D
    table_day: Tensor   # steps_per_day x D

    @classmethod
    def init(cls, rng, d_in, width, k, steps_per_day):
        return cls(
            w_data=xavier(rng, d_in, width),
            b_data=const((width,)),
            w_spe=xavier(rng, k, width),
            b_spe=const((width,)),
            table_week=normal(rng, (7, width)),
            table_day=normal(rng, (steps_per_day, width)),
        )


def spectral_embed(u_spe, p):
    """U_spe @ W_spe + b_spe -> (N, D)."""
    u = u_spe if isinstance(u_spe, Tensor) else Tensor(getattr(u_spe, "u_spe", u_spe))
    if u.shape[1] != p.w_spe.shape[0]:
        raise DimensionError(f"spectral basis has {u.shape[1]} columns, W_spe expects {p.w_spe.shape[0]}")
    return T.linear(u, p.w_spe, p.b_spe)


def integrate_embeddings(x_raw, proj_w, proj_b, spe=None, week=None, day=None, tpe=None):
    """Sum the embedding parts with explicit broadcasts.

    x_raw: (B, m, N, d_in); spe: (N, D) shared over time; week, day:
    (B, m, D) shared over nodes; tpe: (m, D) shared over batch and nodes.
    Returns (B, m, N, D).
    """
    if x_raw.ndim != 4:
        raise DimensionError(f"x_raw must be (B, m, N, d_in), got {x_raw.shape}")
    B, m, N, _ = x_raw.shape
    out = T.linear(x_raw, proj_w, proj_b)
    D = out.shape[-1]
    if spe is not None:
        if spe.shape != (N, D):
            raise DimensionError(f"spectral part {spe.shape} != ({N}, {D})")
        out = T.add(out, T.reshape(spe, (1, 1, N, D)))
    for part in (week, day):
        if part is not None:
            if part.shape != (B, m, D):
                raise DimensionError(f"periodic part {part.shape} != ({B}, {m}, {D})")
            out = T.add(out, T.reshape(part, (B, m, 1, D)))
    if tpe is not None:
        if tpe.shape != (m, D):
            raise DimensionError(f"positional part {tpe.shape} != ({m}, {D})")
        out = T.add(out, T.reshape(tpe, (1, m, 1, D)))
    return out


def embed(p, x_raw, week_idx, day_idx, u_spe, tpe):
    """Full embedding layer for a batch: x_raw (B, m, N, d_in) -> (B, m, N, D)."""
    spe = spectral_embed(u_spe, p)
    week = T.take_rows(p.table_week, week_idx)
    day = T.take_rows(p.table_day, day_idx)
    return integrate_embeddings(x_raw, p.w_data, p.b_data, spe, week, day,
                                tpe if isinstance(tpe, Tensor) else Tensor(tpe))
