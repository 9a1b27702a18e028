import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fednilm import data
from fednilm.data import (DEFAULT_APPLIANCES, DISHWASHER, FRIDGE, WASHING_MACHINE, StateSeries,
                          TimeSeries)
from fednilm.errors import DataError


def brute_force_threshold(seq, min_on, min_off):
    """Independent oracle: per-sample scans instead of run lists."""
    n = len(seq)
    merged = list(seq)
    for t in range(n):
        if seq[t] == 0:
            left = next((i for i in range(t - 1, -1, -1) if seq[i] == 1), None)
            right = next((i for i in range(t + 1, n) if seq[i] == 1), None)
            if left is not None and right is not None and right - left - 1 < min_off:
                merged[t] = 1
    out = list(merged)
    for t in range(n):
        if merged[t] == 1:
            a = t
            while a > 0 and merged[a - 1] == 1:
                a -= 1
            b = t
            while b < n - 1 and merged[b + 1] == 1:
                b += 1
            if b - a + 1 < min_on:
                out[t] = 0
    return out


ALL_12 = np.array(list(itertools.product((0, 1), repeat=12)), dtype=np.int8)


@pytest.mark.parametrize("spec", [FRIDGE, DISHWASHER, WASHING_MACHINE], ids=lambda s: s.name)
def test_thresholding_matches_brute_force_oracle(spec):
    min_on = math.ceil(spec.min_on_s / 30.0)
    min_off = math.ceil(spec.min_off_s / 30.0)
    for seq in ALL_12:
        got = data.activation_time_threshold(StateSeries(seq, 30.0), spec).values
        assert got.tolist() == brute_force_threshold(seq.tolist(), min_on, min_off), seq


def test_thresholding_examples():
    s = StateSeries(np.array([1, 0, 1, 1, 1], dtype=np.int8), 30.0)
    assert data.activation_time_threshold(s, DISHWASHER).values.tolist() == [1, 1, 1, 1, 1]
    s = StateSeries(np.array([0, 0, 1, 0, 0], dtype=np.int8), 30.0)
    assert data.activation_time_threshold(s, DISHWASHER).values.tolist() == [0] * 5
    s = StateSeries((np.random.default_rng(0).random(500) < 0.5).astype(np.int8), 6.0)
    assert np.array_equal(data.activation_time_threshold(s, FRIDGE).values, s.values)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 1), max_size=60), st.sampled_from([FRIDGE, DISHWASHER, WASHING_MACHINE]),
       st.sampled_from([6.0, 8.0, 30.0]))
def test_thresholding_is_idempotent(seq, spec, period):
    s = StateSeries(np.array(seq, dtype=np.int8), period)
    once = data.activation_time_threshold(s, spec)
    twice = data.activation_time_threshold(once, spec)
    assert np.array_equal(once.values, twice.values)


def test_duration_samples_ceil():
    assert data.duration_samples(60, 30) == 2
    assert data.duration_samples(5, 30) == 1
    assert data.duration_samples(61, 30) == 3
    assert data.duration_samples(0, 30) == 0


def test_threshold_states_boundary():
    tr = TimeSeries(30.0, np.array([60.0, 40.0, 50.0, 0.0]))
    assert data.threshold_states(tr, FRIDGE).values.tolist() == [1, 0, 1, 0]


def write_csv(path, rows):
    path.write_text("".join(f"{t},{w}\n" for t, w in rows))
    return path


def test_ingest_csv_examples(tmp_path):
    p = write_csv(tmp_path / "a.csv", [(0, 100), (6, 200), (12, 300)])
    assert data.ingest_csv(p, 6).values.tolist() == [100, 200, 300]
    p = write_csv(tmp_path / "b.csv", [(0, 100), (12, 300)])
    assert data.ingest_csv(p, 6).values.tolist() == [100, 100, 300]
    p = write_csv(tmp_path / "c.csv", [(0, 500), (6, 20)])
    assert data.ingest_csv(p, 6, max_power_w=300).values.tolist() == [300, 20]


def test_ingest_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("0,100\n6,abc\n")
    with pytest.raises(DataError, match=":2:"):
        data.ingest_csv(p, 6)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(DataError, match="empty"):
        data.ingest_csv(empty, 6)


def test_resample_examples():
    ts = TimeSeries(6.0, np.array([1.0, 2, 3, 4, 5]))
    assert data.resample_mean(ts, 30).values.tolist() == [3.0]
    assert np.array_equal(data.resample_mean(ts, 6).values, ts.values)
    assert data.resample_mean(TimeSeries(6.0, np.arange(11.0)), 30).values.size == 2
    with pytest.raises(DataError):
        data.resample_mean(ts, 31)


def test_normalize_examples():
    ts = TimeSeries(30.0, np.array([2500.0, 400.0]))
    assert data.normalize(ts, 400).values.tolist() == pytest.approx([1.05, 0.0], abs=1e-15)
    back = data.denormalize(data.normalize(ts, 400), 400)
    assert np.allclose(back.values, ts.values, rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 5000), min_size=5, max_size=50), st.floats(0, 3000))
def test_resample_and_normalize_commute(values, mean):
    ts = TimeSeries(6.0, np.array(values))
    a = data.normalize(data.resample_mean(ts, 30), mean).values
    b = data.resample_mean(data.normalize(ts, mean), 30).values
    assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_make_windows_examples():
    agg = TimeSeries(30.0, np.arange(240.0))
    st_ = StateSeries((np.arange(240) % 2).astype(np.int8), 30.0)
    X, Y = data.make_windows(agg, [st_], 120, 120)
    assert X.shape == (2, 120) and Y.shape == (2, 1, 120)
    X, Y = data.make_windows(agg, [st_], 120, 7)
    k, j = 5, 13
    assert X[k, j] == agg.values[k * 7 + j]
    assert Y[k, 0, j] == st_.values[k * 7 + j]
    X, _ = data.make_windows(TimeSeries(30.0, np.zeros(120)), [], 120)
    assert X.shape[0] == 1
    with pytest.raises(DataError):
        data.make_windows(TimeSeries(30.0, np.zeros(100)), [], 120)


def test_split_examples():
    tr, va, te = data.split_dataset(10)
    assert tr.tolist() == list(range(8)) and va.tolist() == [8] and te.tolist() == [9]
    assert [len(x) for x in data.split_dataset(11)] == [9, 1, 1]
    with pytest.raises(DataError):
        data.split_dataset(9)


def test_split_disjoint_and_covering():
    for K in range(10, 1001):
        tr, va, te = data.split_dataset(K)
        assert np.array_equal(np.concatenate([tr, va, te]), np.arange(K))
        assert len(va) == len(te) == K // 10


def test_generate_client_identity_and_determinism():
    profile = data.default_profile(residual_noise_w=15.0)
    apps = list(DEFAULT_APPLIANCES.values())
    traces, agg, res = data.generate_client(profile, apps, 2, seed=7)
    total = sum(t.values for t in traces.values())
    assert np.array_equal(agg.values, total + res.values)
    traces2, agg2, _ = data.generate_client(profile, apps, 2, seed=7)
    assert np.array_equal(agg.values, agg2.values)
    for k in traces:
        assert np.array_equal(traces[k].values, traces2[k].values)
        assert traces[k].values.max() <= DEFAULT_APPLIANCES[k].max_power_w


def test_generate_client_all_off_is_zero():
    profile = data.SynthProfile(appliances={}, residual_noise_w=0.0, base_load_w=0.0,
                                sample_period_s=6.0)
    _, agg, _ = data.generate_client(profile, [FRIDGE], 1, seed=0)
    assert not agg.values.any()
    with pytest.raises(DataError):
        data.generate_client(profile, [], 1, seed=0)


def test_preprocess_uses_training_mean():
    profile = data.default_profile()
    apps = list(DEFAULT_APPLIANCES.values())
    traces, agg, _ = data.generate_client(profile, apps, 3, seed=1)
    ds = data.preprocess_client(0, agg, traces, apps)
    assert ds.windows.shape == (72, 120) and ds.states.shape == (72, 3, 120)
    raw = ds.windows * data.NORM_SCALE_W + ds.norm_mean_w
    assert raw[ds.train_idx].mean() == pytest.approx(ds.norm_mean_w, rel=1e-12)
    assert ds.appliance_names == ("fridge", "dishwasher", "washing_machine")
