"""Smart-meter data: synthetic households, CSV ingestion and preprocessing.

Preprocessing follows the usual NILM recipe: clamp readings to the appliance
max power, average down to the target period, centre and scale the aggregate
by 2000 W, derive ON/OFF states by power threshold plus minimum ON/OFF
durations, then cut fixed windows and split them chronologically.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DataError

NORM_SCALE_W = 2000.0


@dataclass(frozen=True)
class ApplianceSpec:
    name: str
    max_power_w: float
    power_threshold_w: float
    min_on_s: float
    min_off_s: float

    def __post_init__(self):
        if not self.power_threshold_w < self.max_power_w:
            raise DataError(f"{self.name}: power threshold must be below max power")
        if self.min_on_s < 0 or self.min_off_s < 0:
            raise DataError(f"{self.name}: durations must be non-negative")


FRIDGE = ApplianceSpec("fridge", 300.0, 50.0, 1.0, 0.0)
DISHWASHER = ApplianceSpec("dishwasher", 2500.0, 20.0, 60.0, 60.0)
WASHING_MACHINE = ApplianceSpec("washing_machine", 2500.0, 20.0, 60.0, 5.0)
DEFAULT_APPLIANCES = {a.name: a for a in (FRIDGE, DISHWASHER, WASHING_MACHINE)}


@dataclass
class TimeSeries:
    sample_period_s: float
    values: np.ndarray
    start_epoch_s: float = 0.0

    def __post_init__(self):
        if not self.sample_period_s > 0:
            raise DataError("sample_period_s must be positive")
        self.values = np.asarray(self.values, dtype=np.float64)

    def __len__(self):
        return self.values.size


@dataclass
class StateSeries:
    values: np.ndarray
    sample_period_s: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int8)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class CyclicModel:
    """Thermostat-style square wave (fridges, freezers)."""
    period_s: float
    duty: float
    on_power_w: float
    jitter: float = 0.1
    off_power_w: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.duty < 1.0:
            raise DataError("duty must be in (0, 1)")


@dataclass(frozen=True)
class ActivationModel:
    """Sparse multi-phase program runs (dishwashers, washing machines)."""
    rate_per_day: float
    phase_powers_w: tuple[float, ...]
    phase_durations_s: tuple[float, ...]
    jitter: float = 0.1

    def __post_init__(self):
        if len(self.phase_powers_w) != len(self.phase_durations_s):
            raise DataError("phase_powers_w and phase_durations_s differ in length")


@dataclass(frozen=True)
class SynthProfile:
    appliances: dict = field(default_factory=dict)  # name -> CyclicModel | ActivationModel
    residual_noise_w: float = 10.0
    base_load_w: float = 80.0
    sample_period_s: float = 6.0


def default_profile(fridge_period_s=2400.0, fridge_duty=0.4, fridge_power_w=120.0,
                    dishwasher_rate=1.0, washer_rate=0.8, residual_noise_w=10.0,
                    base_load_w=80.0, sample_period_s=6.0) -> SynthProfile:
    return SynthProfile(
        appliances={
            "fridge": CyclicModel(fridge_period_s, fridge_duty, fridge_power_w, jitter=0.1),
            "dishwasher": ActivationModel(
                dishwasher_rate, (2000.0, 800.0, 2000.0), (1200.0, 1800.0, 900.0)),
            "washing_machine": ActivationModel(
                washer_rate, (500.0, 250.0, 600.0), (600.0, 2400.0, 600.0)),
        },
        residual_noise_w=residual_noise_w,
        base_load_w=base_load_w,
        sample_period_s=sample_period_s,
    )


def _cyclic_trace(model: CyclicModel, n, period_s, rng):
    out = np.full(n, model.off_power_w)
    t = rng.uniform(0, model.period_s)
    horizon = n * period_s
    while t < horizon:
        cycle = model.period_s * (1.0 + model.jitter * rng.uniform(-1, 1))
        on = cycle * model.duty
        i0, i1 = int(t // period_s), int(min(t + on, horizon) // period_s)
        out[i0:i1] = model.on_power_w
        t += cycle
    return out


def _activation_trace(model: ActivationModel, n, period_s, rng):
    out = np.zeros(n)
    horizon = n * period_s
    count = rng.poisson(model.rate_per_day * horizon / 86400.0)
    for start in np.sort(rng.uniform(0, horizon, size=count)):
        t = start
        for power, dur in zip(model.phase_powers_w, model.phase_durations_s):
            d = dur * (1.0 + model.jitter * rng.uniform(-1, 1))
            i0, i1 = int(t // period_s), int(min(t + d, horizon) // period_s)
            out[i0:i1] = power
            t += d
    return out


def generate_client(profile: SynthProfile, appliances, days: int, seed):
    """Synthesise one household.

    Returns ``(traces, aggregate, residual)`` where ``traces`` maps appliance
    name to its :class:`TimeSeries`; ``aggregate == sum(traces) + residual``
    holds exactly, sample by sample.
    """
    appliances = list(appliances)
    if not appliances:
        raise DataError("at least one appliance is required")
    if days < 1:
        raise DataError("days must be >= 1")
    period = profile.sample_period_s
    n = int(round(days * 86400 / period))
    root = np.random.SeedSequence(seed)
    streams = root.spawn(len(appliances) + 1)
    traces = {}
    total = np.zeros(n)
    for spec, ss in zip(appliances, streams):
        rng = np.random.default_rng(ss)
        model = profile.appliances.get(spec.name)
        if model is None:
            values = np.zeros(n)
        elif isinstance(model, CyclicModel):
            values = _cyclic_trace(model, n, period, rng)
        else:
            values = _activation_trace(model, n, period, rng)
        values = np.minimum(values, spec.max_power_w)
        traces[spec.name] = TimeSeries(period, values)
        total = total + values
    rng = np.random.default_rng(streams[-1])
    residual = np.maximum(profile.base_load_w + profile.residual_noise_w * rng.standard_normal(n), 0.0)
    aggregate = TimeSeries(period, total + residual)
    return traces, aggregate, TimeSeries(period, residual)


def ingest_csv(path, sample_period_s, max_power_w=None) -> TimeSeries:
    """Read header-less ``epoch_seconds,watts`` rows.

    Missing timestamps are forward-filled onto the regular grid and readings
    above ``max_power_w`` are clamped to it.
    """
    times, watts = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                t, w = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: cannot parse row {row!r}") from None
            if not (math.isfinite(t) and math.isfinite(w)):
                raise DataError(f"{path}:{lineno}: non-finite value")
            times.append(t)
            watts.append(w)
    if not times:
        raise DataError(f"{path}: empty file")
    times = np.asarray(times)
    watts = np.asarray(watts)
    if np.any(np.diff(times) <= 0):
        raise DataError(f"{path}: timestamps must be strictly increasing")
    slots = np.round((times - times[0]) / sample_period_s).astype(np.int64)
    values = np.full(slots[-1] + 1, np.nan)
    values[slots] = watts
    # forward fill
    idx = np.where(np.isnan(values), 0, np.arange(values.size))
    np.maximum.accumulate(idx, out=idx)
    values = values[idx]
    values = np.maximum(values, 0.0)
    if max_power_w is not None:
        values = np.minimum(values, max_power_w)
    return TimeSeries(sample_period_s, values, float(times[0]))


def clamp_max_power(ts: TimeSeries, max_power_w: float) -> TimeSeries:
    return TimeSeries(ts.sample_period_s, np.clip(ts.values, 0.0, max_power_w), ts.start_epoch_s)


def resample_mean(ts: TimeSeries, target_period_s: float) -> TimeSeries:
    ratio = target_period_s / ts.sample_period_s
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9:
        raise DataError(
            f"target period {target_period_s}s is not an integer multiple of {ts.sample_period_s}s")
    if factor == 1:
        return TimeSeries(ts.sample_period_s, ts.values.copy(), ts.start_epoch_s)
    n = ts.values.size // factor
    out = ts.values[:n * factor].reshape(n, factor).mean(axis=1)
    return TimeSeries(float(target_period_s), out, ts.start_epoch_s)


def normalize(ts: TimeSeries, mean_w: float) -> TimeSeries:
    return TimeSeries(ts.sample_period_s, (ts.values - mean_w) / NORM_SCALE_W, ts.start_epoch_s)


def denormalize(ts: TimeSeries, mean_w: float) -> TimeSeries:
    return TimeSeries(ts.sample_period_s, ts.values * NORM_SCALE_W + mean_w, ts.start_epoch_s)


def threshold_states(trace: TimeSeries, spec: ApplianceSpec) -> StateSeries:
    return StateSeries((trace.values >= spec.power_threshold_w).astype(np.int8), trace.sample_period_s)


def duration_samples(seconds: float, period_s: float) -> int:
    return int(math.ceil(seconds / period_s - 1e-12))


def activation_time_threshold(states: StateSeries, spec: ApplianceSpec) -> StateSeries:
    """Enforce minimum OFF gaps (merge first), then minimum ON durations."""
    v = np.ascontiguousarray(states.values, dtype=np.int8)
    if v.size and not np.all((v == 0) | (v == 1)):
        raise DataError("states must be binary")
    min_off = duration_samples(spec.min_off_s, states.sample_period_s)
    min_on = duration_samples(spec.min_on_s, states.sample_period_s)
    v = kernels.merge_short_gaps(v, min_off)
    v = kernels.remove_short_on(v, min_on)
    return StateSeries(v, states.sample_period_s)


def make_windows(aggregate: TimeSeries, states, window_len: int, stride: int | None = None):
    """Cut aligned windows: ``X[k, j] = aggregate[k*stride + j]``."""
    stride = stride or window_len
    T = aggregate.values.size
    for s in states:
        if s.values.size != T or s.sample_period_s != aggregate.sample_period_s:
            raise DataError("aggregate and state series must share length and period")
    if T < window_len:
        raise DataError(f"series of length {T} is shorter than window_len={window_len}")
    K = (T - window_len) // stride + 1
    starts = np.arange(K) * stride
    idx = starts[:, None] + np.arange(window_len)[None, :]
    X = aggregate.values[idx]
    if states:
        S = np.stack([s.values for s in states])  # (I, T)
        Y = S[:, idx].transpose(1, 0, 2).astype(np.int8)
    else:
        Y = np.zeros((K, 0, window_len), dtype=np.int8)
    return X, Y


def split_dataset(K: int, ratios=(0.8, 0.1, 0.1)):
    """Chronological split; val and test take floor(ratio*K), train keeps the rest."""
    if K < 10:
        raise DataError(f"need at least 10 windows to split, got {K}")
    n_val = int(math.floor(ratios[1] * K + 1e-9))
    n_test = int(math.floor(ratios[2] * K + 1e-9))
    n_train = K - n_val - n_test
    idx = np.arange(K)
    return idx[:n_train], idx[n_train:n_train + n_val], idx[n_train + n_val:]


@dataclass
class ClientDataset:
    client_id: int
    windows: np.ndarray          # (K, window_len) normalised aggregate
    states: np.ndarray           # (K, I, window_len) binary
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    norm_mean_w: float
    appliance_names: tuple[str, ...]
    norm_scale_w: float = NORM_SCALE_W

    def part(self, name: str):
        idx = {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[name]
        return self.windows[idx], self.states[idx]

    @property
    def train_size(self) -> int:
        return int(self.train_idx.size)


def preprocess_client(client_id, aggregate: TimeSeries, traces: dict, appliances,
                      target_period_s=30.0, window_len=120, stride=None,
                      split_ratios=(0.8, 0.1, 0.1)) -> ClientDataset:
    """Full pipeline from raw watt series to a split, windowed dataset.

    The normalisation mean is taken over the samples that fall in training
    windows only.
    """
    appliances = list(appliances)
    agg = resample_mean(aggregate, target_period_s)
    states = []
    for spec in appliances:
        tr = resample_mean(clamp_max_power(traces[spec.name], spec.max_power_w), target_period_s)
        st = activation_time_threshold(threshold_states(tr, spec), spec)
        states.append(st)
    T = min([len(agg)] + [len(s) for s in states])
    agg = TimeSeries(agg.sample_period_s, agg.values[:T], agg.start_epoch_s)
    states = [StateSeries(s.values[:T], s.sample_period_s) for s in states]
    X_raw, Y = make_windows(agg, states, window_len, stride)
    train, val, test = split_dataset(X_raw.shape[0], split_ratios)
    mean_w = float(X_raw[train].mean())
    X = (X_raw - mean_w) / NORM_SCALE_W
    return ClientDataset(int(client_id), X, Y, train, val, test, mean_w,
                         tuple(a.name for a in appliances))


def pool_datasets(datasets, client_id=-1) -> ClientDataset:
    """Union of the clients' splits (each client keeps its own normalisation)."""
    if not datasets:
        raise DataError("nothing to pool")
    Xs, Ys, tr, va, te = [], [], [], [], []
    offset = 0
    for d in datasets:
        Xs.append(d.windows)
        Ys.append(d.states)
        tr.append(d.train_idx + offset)
        va.append(d.val_idx + offset)
        te.append(d.test_idx + offset)
        offset += d.windows.shape[0]
    return ClientDataset(client_id, np.concatenate(Xs), np.concatenate(Ys),
                         np.concatenate(tr), np.concatenate(va), np.concatenate(te),
                         float("nan"), datasets[0].appliance_names)
