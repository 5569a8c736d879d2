"""Dataset format, normalization, windowing, synthetic data and the
historical-average baseline."""
from __future__ import annotations

import csv
import datetime as dt
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .embedding import TimestampMeta, periodic_indices
from .errors import ConfigError, DataSizeError, InputError, MetaError, VersionError
from .graph import RoadGraph, build_adjacency, hop_distances, ring_graph

FORMAT_VERSION = 1
DEFAULT_SPLIT = (0.6, 0.2, 0.2)
SPLIT_NAMES = ("train", "val", "test")


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x):
        return (x - self.mean) / self.std

    def invert(self, z):
        return z * self.std + self.mean


@dataclass
class DatasetBundle:
    series: np.ndarray            # (T, N, d_in) raw scale, float64
    meta: TimestampMeta
    graph: RoadGraph
    split_ratio: tuple = DEFAULT_SPLIT
    norm: NormStats | None = None

    def __post_init__(self):
        self.series = np.asarray(self.series, dtype=np.float64)
        if self.series.ndim != 3:
            raise InputError(f"series must be (T, N, d), got {self.series.shape}")
        if self.series.shape[1] != self.graph.n_nodes:
            raise InputError(f"series has {self.series.shape[1]} nodes, graph has {self.graph.n_nodes}")

    @property
    def n_steps(self):
        return self.series.shape[0]

    @property
    def n_nodes(self):
        return self.series.shape[1]

    @property
    def n_features(self):
        return self.series.shape[2]

    @property
    def splits(self):
        return split_ranges(self.n_steps, self.split_ratio)


@dataclass
class WindowPair:
    input: np.ndarray
    target: np.ndarray
    t_anchor: int


def split_ranges(n_steps, ratio=DEFAULT_SPLIT):
    """Chronological contiguous [start, stop) ranges for train/val/test."""
    ratio = np.asarray(ratio, dtype=np.float64)
    if ratio.shape != (3,) or (ratio < 0).any() or ratio.sum() <= 0:
        raise ConfigError(f"split ratio must be three nonnegative numbers, got {ratio.tolist()}")
    cum = np.cumsum(ratio) / ratio.sum()
    a, b = int(round(n_steps * cum[0])), int(round(n_steps * cum[1]))
    return {"train": (0, a), "val": (a, b), "test": (b, n_steps)}


# --------------------------------------------------------------- on-disk I/O

def save_dataset(bundle, path):
    os.makedirs(path, exist_ok=True)
    g = bundle.graph
    meta = {
        "version": FORMAT_VERSION,
        "n_nodes": bundle.n_nodes,
        "n_steps": bundle.n_steps,
        "n_features": bundle.n_features,
        "interval_minutes": bundle.meta.interval_minutes,
        "start_timestamp": bundle.meta.start.isoformat(),
        "layout": "time,node,feature",
        "kind": g.kind,
    }
    if g.kind == "grid":
        meta["grid"] = {"rows": g.grid[0], "cols": g.grid[1]}
    with open(os.path.join(path, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    bundle.series.astype("<f4").tofile(os.path.join(path, "data.f32"))
    edge_path = os.path.join(path, "edges.csv")
    if g.kind == "graph":
        src, dst = np.nonzero(g.adjacency)
        with open(edge_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["src", "dst"])
            w.writerows(zip(src.tolist(), dst.tolist()))
    elif os.path.exists(edge_path):
        os.remove(edge_path)
    return path


def _read_meta(path):
    try:
        with open(os.path.join(path, "meta.json")) as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise MetaError(f"{path}: meta.json not found") from None
    except json.JSONDecodeError as exc:
        raise MetaError(f"{path}: meta.json is not valid JSON ({exc})") from None
    if not isinstance(meta, dict):
        raise MetaError(f"{path}: meta.json must hold an object")
    if meta.get("version") != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported dataset version {meta.get('version')!r}")
    required = ("n_nodes", "n_steps", "n_features", "interval_minutes", "start_timestamp", "layout", "kind")
    missing = [k for k in required if k not in meta]
    if missing:
        raise MetaError(f"{path}: meta.json lacks {missing}")
    if meta["layout"] != "time,node,feature":
        raise MetaError(f"{path}: unsupported layout {meta['layout']!r}")
    if meta["kind"] not in ("graph", "grid"):
        raise MetaError(f"{path}: unknown kind {meta['kind']!r}")
    return meta


def load_dataset(path, split_ratio=DEFAULT_SPLIT):
    meta = _read_meta(path)
    try:
        n, t, d = int(meta["n_nodes"]), int(meta["n_steps"]), int(meta["n_features"])
        ts = TimestampMeta.from_iso(meta["start_timestamp"], meta["interval_minutes"])
    except (TypeError, ValueError, InputError) as exc:
        raise MetaError(f"{path}: malformed meta.json ({exc})") from None
    data_path = os.path.join(path, "data.f32")
    if not os.path.exists(data_path):
        raise DataSizeError(f"{path}: data.f32 not found")
    raw = np.fromfile(data_path, dtype="<f4")
    if raw.size != t * n * d:
        raise DataSizeError(f"{path}: data.f32 holds {raw.size} floats, meta declares {t}*{n}*{d}={t * n * d}")

    if meta["kind"] == "grid":
        grid = meta.get("grid") or {}
        try:
            rows, cols = int(grid["rows"]), int(grid["cols"])
        except (KeyError, TypeError, ValueError):
            raise MetaError(f"{path}: grid kind needs grid.rows and grid.cols") from None
        if rows * cols != n:
            raise MetaError(f"{path}: grid {rows}x{cols} does not match n_nodes={n}")
        graph = build_adjacency(grid=(rows, cols))
    else:
        edges = []
        try:
            with open(os.path.join(path, "edges.csv"), newline="") as fh:
                reader = csv.reader(fh)
                header = next(reader, None)
                if header != ["src", "dst"]:
                    raise MetaError(f"{path}: edges.csv header must be 'src,dst'")
                for row in reader:
                    if row:
                        edges.append((int(row[0]), int(row[1])))
        except FileNotFoundError:
            raise MetaError(f"{path}: graph kind needs edges.csv") from None
        except (ValueError, IndexError):
            raise MetaError(f"{path}: malformed edges.csv") from None
        try:
            graph = build_adjacency(n, edges)
        except InputError as exc:
            raise MetaError(f"{path}: {exc}") from None
    series = raw.astype(np.float64).reshape(t, n, d)
    return DatasetBundle(series, ts, graph, tuple(split_ratio))


# ------------------------------------------------------------ normalization

def zscore(bundle):
    """Per-feature z-score with training-split statistics (population std).

    A feature that is constant on the training split keeps std=1.
    Returns (normalized series, NormStats); also stores the stats on the bundle.
    """
    a, b = bundle.splits["train"]
    if b <= a:
        raise ConfigError("training split is empty")
    train = bundle.series[a:b].reshape(-1, bundle.n_features)
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    stats = NormStats(mean.reshape(1, 1, -1), std.reshape(1, 1, -1))
    bundle.norm = stats
    return stats.apply(bundle.series), stats


# ---------------------------------------------------------------- windowing

def window_anchors(split, m, h, name="split"):
    start, stop = split
    count = stop - start - m - h + 1
    if count < 1:
        raise ConfigError(f"{name} split has {stop - start} steps, needs at least m+h={m + h}")
    return np.arange(start + m - 1, start + m - 1 + count)


def make_windows(bundle, m, h, series=None):
    """WindowPairs per split; inputs come from ``series`` (defaults to raw),
    targets are always raw scale."""
    src = bundle.series if series is None else series
    out = {}
    for name, rng in bundle.splits.items():
        anchors = window_anchors(rng, m, h, name)
        out[name] = [WindowPair(src[a - m + 1:a + 1], bundle.series[a + 1:a + 1 + h], int(a)) for a in anchors]
    return out


@dataclass
class PreparedData:
    """Everything the training loop needs, stored as arrays plus anchors."""
    normalized: np.ndarray
    raw: np.ndarray
    week_idx: np.ndarray
    day_idx: np.ndarray
    norm: NormStats
    anchors: dict = field(default_factory=dict)
    m: int = 12
    h: int = 12

    def batch(self, anchors):
        anchors = np.asarray(anchors)
        offs_in = np.arange(-self.m + 1, 1)
        offs_out = np.arange(1, self.h + 1)
        rows_in = anchors[:, None] + offs_in[None, :]
        rows_out = anchors[:, None] + offs_out[None, :]
        return (self.normalized[rows_in], self.week_idx[rows_in], self.day_idx[rows_in], self.raw[rows_out])


def prepare(bundle, m, h, norm=None):
    if norm is None:
        normalized, norm = zscore(bundle)
    else:
        bundle.norm = norm
        normalized = norm.apply(bundle.series)
    week, day = periodic_indices(bundle.meta, np.arange(bundle.n_steps))
    anchors = {name: window_anchors(r, m, h, name) for name, r in bundle.splits.items()}
    return PreparedData(normalized, bundle.series, week, day, norm, anchors, m, h)


# ---------------------------------------------------------------- synthetic

@dataclass
class SynthParams:
    seed: int = 1
    n_nodes: int = 8
    days: int = 14
    interval_minutes: int = 5
    topology: str = "ring"
    grid_rows: int = 0
    grid_cols: int = 0
    base: float = 10.0
    amplitude: float = 3.0
    harmonic: float = 0.5
    phase_step: int = 3
    noise_sigma: float = 0.5
    noise_rho: float = 0.95
    n_features: int = 1
    start_timestamp: str = "2024-01-01T00:00:00"

    @property
    def n_steps(self):
        return self.days * (1440 // self.interval_minutes)


def daily_pattern(tau, steps_per_day, amplitude, harmonic):
    phase = 2.0 * np.pi * np.asarray(tau, dtype=np.float64) / steps_per_day
    return amplitude * (np.sin(phase) + harmonic * np.sin(2.0 * phase + 0.7))


def synth_generate(params=None, **overrides):
    """Deterministic ring/grid traffic-like series.

    Node n follows a daily two-harmonic profile delayed by
    ``phase_step * hop(0, n)`` steps, plus stationary AR(1) Gaussian noise
    with marginal std ``noise_sigma`` and lag-one correlation ``noise_rho``
    (``noise_rho=0`` gives i.i.d. noise).
    """
    p = params if params is not None else SynthParams()
    if overrides:
        p = SynthParams(**{**p.__dict__, **overrides})
    if p.topology == "ring":
        graph = ring_graph(p.n_nodes)
    elif p.topology == "grid":
        if p.grid_rows * p.grid_cols != p.n_nodes:
            raise ConfigError(f"grid {p.grid_rows}x{p.grid_cols} does not give {p.n_nodes} nodes")
        graph = build_adjacency(grid=(p.grid_rows, p.grid_cols))
    else:
        raise ConfigError(f"unknown topology {p.topology!r}")
    if not 0.0 <= p.noise_rho < 1.0:
        raise ConfigError("noise_rho must lie in [0, 1)")
    meta = TimestampMeta(dt.datetime.fromisoformat(p.start_timestamp), p.interval_minutes)
    spd = meta.steps_per_day
    n_steps = p.n_steps
    hops = hop_distances(graph)[0]
    hops = np.where(np.isfinite(hops), hops, 0.0)

    t = np.arange(n_steps)[:, None] + meta.offset
    tau = t - p.phase_step * hops[None, :]
    clean = p.base + daily_pattern(tau, spd, p.amplitude, p.harmonic)

    rng = np.random.default_rng(p.seed)
    shocks = rng.normal(0.0, p.noise_sigma, size=(n_steps, p.n_nodes, p.n_features))
    noise = np.empty_like(shocks)
    noise[0] = shocks[0]
    innov = np.sqrt(1.0 - p.noise_rho ** 2)
    for i in range(1, n_steps):
        noise[i] = p.noise_rho * noise[i - 1] + innov * shocks[i]
    series = clean[:, :, None] + noise
    return DatasetBundle(series, meta, graph)


# ---------------------------------------------------------------- baseline

def historical_average_baseline(bundle, m, h, split="test"):
    """Training-split mean at the same daily index, per node and feature.

    Returns (predictions (n_windows, h, N, d), targets of the same shape).
    """
    spd = bundle.meta.steps_per_day
    a, b = bundle.splits["train"]
    if b - a < spd:
        raise ConfigError(f"training split covers {b - a} steps, baseline needs a full day ({spd})")
    _, day = periodic_indices(bundle.meta, np.arange(bundle.n_steps))
    profile = np.zeros((spd, bundle.n_nodes, bundle.n_features))
    for d in range(spd):
        rows = np.flatnonzero(day[a:b] == d) + a
        profile[d] = bundle.series[rows].mean(axis=0)
    anchors = window_anchors(bundle.splits[split], m, h, split)
    rows_out = anchors[:, None] + np.arange(1, h + 1)[None, :]
    return profile[day[rows_out]], bundle.series[rows_out]
