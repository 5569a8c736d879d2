import datetime as dt
import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import abs_normal_mean_mc, best_lag
from stpformer.data import (DatasetBundle, NormStats, historical_average_baseline, load_dataset, make_windows,
                            prepare, save_dataset, split_ranges, synth_generate, window_anchors, zscore)
from stpformer.embedding import TimestampMeta
from stpformer.errors import ConfigError, DataSizeError, LoadError, MetaError, VersionError
from stpformer.graph import build_adjacency, ring_graph
from stpformer.training import compute_metrics

MONDAY = dt.datetime(2024, 1, 1)


def fixture_bundle(T=10, N=2, d=1, seed=0):
    series = np.random.default_rng(seed).normal(size=(T, N, d)).astype(np.float32).astype(np.float64)
    return DatasetBundle(series, TimestampMeta(MONDAY, 60), build_adjacency(N, [(0, 1)]))


def test_minimal_fixture_roundtrip(tmp_path):
    b = fixture_bundle()
    save_dataset(b, tmp_path)
    got = load_dataset(tmp_path)
    assert got.graph.adjacency.tolist() == [[0, 1], [0, 0]]
    assert np.array_equal(got.series, b.series)
    with open(tmp_path / "meta.json") as fh:
        meta = json.load(fh)
    assert meta["version"] == 1 and meta["layout"] == "time,node,feature" and meta["kind"] == "graph"
    assert (tmp_path / "edges.csv").read_text().splitlines()[0] == "src,dst"


def test_save_load_save_bytes(tmp_path):
    save_dataset(synth_generate(n_nodes=5, days=2, interval_minutes=30), tmp_path / "a")
    save_dataset(load_dataset(tmp_path / "a"), tmp_path / "b")
    for name in ("meta.json", "data.f32", "edges.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_element_count_mismatch(tmp_path):
    save_dataset(fixture_bundle(), tmp_path)
    with open(tmp_path / "data.f32", "ab") as fh:
        fh.write(b"\0\0\0\0")
    with pytest.raises(DataSizeError):
        load_dataset(tmp_path)


def test_distinct_load_errors(tmp_path):
    save_dataset(fixture_bundle(), tmp_path)
    meta = json.loads((tmp_path / "meta.json").read_text())
    (tmp_path / "meta.json").write_text(json.dumps({**meta, "version": 2}))
    with pytest.raises(VersionError):
        load_dataset(tmp_path)
    (tmp_path / "meta.json").write_text("{not json")
    with pytest.raises(MetaError):
        load_dataset(tmp_path)
    (tmp_path / "meta.json").write_text(json.dumps({**meta, "interval_minutes": 7}))
    with pytest.raises(MetaError):
        load_dataset(tmp_path)
    assert issubclass(DataSizeError, LoadError) and issubclass(MetaError, LoadError)


def test_grid_meta(tmp_path):
    g = build_adjacency(grid=(15, 5))
    b = DatasetBundle(np.zeros((4, 75, 2)), TimestampMeta(MONDAY, 30), g)
    save_dataset(b, tmp_path)
    assert not os.path.exists(tmp_path / "edges.csv")
    got = load_dataset(tmp_path)
    assert got.n_nodes == 75 and got.graph.grid == (15, 5) and got.meta.steps_per_day == 48


def test_grid_mismatch_rejected(tmp_path):
    save_dataset(DatasetBundle(np.zeros((4, 6, 1)), TimestampMeta(MONDAY, 30), build_adjacency(grid=(2, 3))),
                 tmp_path)
    meta = json.loads((tmp_path / "meta.json").read_text())
    meta["grid"] = {"rows": 4, "cols": 2}
    (tmp_path / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(MetaError):
        load_dataset(tmp_path)


# ----------------------------------------------------------- normalization

def test_zscore_population_std():
    series = np.array([1.0, 2.0, 3.0, 0, 0]).reshape(5, 1, 1)
    b = DatasetBundle(series, TimestampMeta(MONDAY, 60), build_adjacency(1, []), (3, 1, 1))
    _, stats = zscore(b)
    assert stats.mean.ravel()[0] == 2.0 and abs(stats.std.ravel()[0] - np.sqrt(2 / 3)) < 1e-15


def test_zscore_constant_feature_passthrough():
    series = np.stack([np.full(10, 4.0), np.arange(10.0)], axis=-1)[:, None, :]
    b = DatasetBundle(series, TimestampMeta(MONDAY, 60), build_adjacency(1, []))
    z, stats = zscore(b)
    assert stats.mean.ravel()[0] == 4.0 and stats.std.ravel()[0] == 1.0
    assert np.array_equal(z[..., 0], series[..., 0] - 4.0)


def test_zscore_train_only_and_invertible():
    b = synth_generate(n_nodes=3, days=2, interval_minutes=60)
    z, stats = zscore(b)
    a, e = b.splits["train"]
    assert np.allclose(b.series[a:e].mean(axis=(0, 1)), stats.mean.ravel())
    assert np.abs(stats.invert(z) - b.series).max() < 1e-12


# -------------------------------------------------------------- windowing

def test_window_counts():
    assert len(window_anchors((0, 100), 12, 12)) == 77
    assert len(window_anchors((5, 29), 12, 12)) == 1
    with pytest.raises(ConfigError, match="val"):
        window_anchors((0, 23), 12, 12, "val")


def test_first_window_alignment():
    b = synth_generate(n_nodes=3, days=3, interval_minutes=60)
    w = make_windows(b, 4, 3)["train"][0]
    assert w.t_anchor == 3
    assert np.array_equal(w.input, b.series[0:4]) and np.array_equal(w.target, b.series[4:7])


def test_no_window_crosses_split():
    b = synth_generate(n_nodes=3, days=4, interval_minutes=60)
    wins = make_windows(b, 5, 4)
    for name, (s, e) in b.splits.items():
        for w in wins[name]:
            assert s <= w.t_anchor - 4 and w.t_anchor + 4 < e


@settings(max_examples=50, deadline=None)
@given(st.integers(30, 500), st.floats(0.1, 0.8), st.floats(0.05, 0.3))
def test_split_ranges_ordered_disjoint(n, r1, r2):
    r = split_ranges(n, (r1, r2, max(1.0 - r1 - r2, 0.05)))
    assert r["train"][0] == 0 and r["test"][1] == n
    assert r["train"][1] == r["val"][0] and r["val"][1] == r["test"][0]
    assert all(a <= b for a, b in r.values())


def test_prepare_batch_layout():
    b = synth_generate(n_nodes=3, days=3, interval_minutes=60)
    data = prepare(b, 4, 2)
    a = data.anchors["train"][:2]
    x, week, day, target = data.batch(a)
    assert x.shape == (2, 4, 3, 1) and week.shape == (2, 4) and target.shape == (2, 2, 3, 1)
    assert np.array_equal(target[0], b.series[a[0] + 1:a[0] + 3])
    assert day[0].tolist() == [0, 1, 2, 3]


# -------------------------------------------------------------- synthetic

def test_synth_steps_and_determinism():
    a, b = synth_generate(), synth_generate()
    assert a.n_steps == 4032 and a.n_nodes == 8
    assert np.array_equal(a.series, b.series)
    assert not np.array_equal(a.series, synth_generate(seed=2).series)


def test_synth_noiseless_is_daily_periodic():
    b = synth_generate(noise_sigma=0.0)
    spd = b.meta.steps_per_day
    assert np.abs(b.series[spd:] - b.series[:-spd]).max() < 1e-9


def test_synth_phase_lag_between_neighbors():
    b = synth_generate(noise_sigma=0.0, phase_step=3)
    for n in range(1, 4):
        # node n trails node n-1 by phase_step steps
        assert best_lag(b.series[:, n - 1, 0], b.series[:, n, 0], 12) == 3


def test_synth_noise_marginal_and_correlation():
    b = synth_generate(noise_sigma=0.5, noise_rho=0.95, days=60)
    noise = b.series - synth_generate(noise_sigma=0.0, days=60).series
    assert abs(noise.std() - 0.5) < 0.03
    e = noise[:, :, 0]
    rho = (e[1:] * e[:-1]).mean() / (e * e).mean()
    assert abs(rho - 0.95) < 0.02


def test_synth_grid_topology():
    b = synth_generate(n_nodes=6, topology="grid", grid_rows=2, grid_cols=3, days=1)
    assert b.graph.kind == "grid"
    with pytest.raises(ConfigError):
        synth_generate(n_nodes=6, topology="grid", grid_rows=2, grid_cols=2)


# -------------------------------------------------------------- baseline

def test_baseline_noiseless_is_exact():
    b = synth_generate(noise_sigma=0.0)
    pred, target = historical_average_baseline(b, 12, 12)
    assert compute_metrics(pred, target)[0] < 1e-9


def test_baseline_constant_series():
    b = DatasetBundle(np.full((96, 2, 1), 7.5), TimestampMeta(MONDAY, 60), ring_graph(2))
    pred, target = historical_average_baseline(b, 4, 4)
    assert (pred == 7.5).all() and compute_metrics(pred, target)[0] == 0


def test_baseline_needs_a_day():
    b = DatasetBundle(np.zeros((30, 2, 1)), TimestampMeta(MONDAY, 60), ring_graph(2))
    with pytest.raises(ConfigError):
        historical_average_baseline(b, 2, 2)


def test_baseline_mae_matches_monte_carlo():
    expected = abs_normal_mean_mc(0.5)
    assert abs(expected - 0.5 * np.sqrt(2 / np.pi)) < 2e-3
    pred, target = historical_average_baseline(synth_generate(noise_rho=0.0), 12, 12)
    # training mean per daily slot carries its own noise (8 samples/slot),
    # inflating the error by about sqrt(1 + 1/8)
    assert abs(compute_metrics(pred, target)[0] - expected * np.sqrt(1 + 1 / 8)) < 0.02
