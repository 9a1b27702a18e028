"""Experiment configuration, seeding, scenario dispatch and report emission."""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import attack as attackmod
from . import data as datamod
from . import dp as dpmod
from . import fl
from .errors import ConfigError, DataError
from .metrics import METRICS, average_scores, evaluate
from .nn import NetworkSpec, build_network

SCENARIOS = ("local", "centralized", "fedavg", "fedprox", "gdpfl", "ldpfl")
SCENARIO_MODE = {"gdpfl": "global", "ldpfl": "local"}
OUTPUT_DIR_ENV = "FEDNILM_OUTPUT_DIR"

# fridge variants for the heterogeneous synthetic cohort: (period_s, duty, power_w)
FRIDGE_GROUPS = ((2400.0, 0.4, 120.0), (3600.0, 0.3, 90.0), (1800.0, 0.5, 160.0))


@dataclass
class DataConfig:
    source: str = "synthetic"
    clients: int = 9
    groups: int = 3
    days: int = 30
    source_period_s: float = 6.0
    target_period_s: float = 30.0
    window_len: int = 120
    stride: int | None = None
    split: list = field(default_factory=lambda: [0.8, 0.1, 0.1])
    appliances: list = field(default_factory=lambda: ["fridge", "dishwasher", "washing_machine"])
    appliance_overrides: dict = field(default_factory=dict)
    dishwasher_rate: float = 1.0
    washer_rate: float = 0.8
    residual_noise_w: float = 10.0
    base_load_w: float = 80.0
    csv_clients: list = field(default_factory=list)

    def appliance_specs(self) -> list[datamod.ApplianceSpec]:
        specs = []
        for name in self.appliances:
            base = datamod.DEFAULT_APPLIANCES.get(name)
            over = dict(self.appliance_overrides.get(name, {}))
            if base is None:
                try:
                    specs.append(datamod.ApplianceSpec(name=name, **over))
                except TypeError as exc:
                    raise ConfigError(f"appliance {name!r} has no defaults; give all thresholds") from exc
            else:
                specs.append(replace(base, **over))
        return specs


@dataclass
class AttackConfig:
    enabled: bool = True
    per_round: bool = False


@dataclass
class ExperimentConfig:
    scenario: str = "fedavg"
    data: DataConfig = field(default_factory=DataConfig)
    net: NetworkSpec = field(default_factory=NetworkSpec)
    fl: fl.FLConfig = field(default_factory=fl.FLConfig)
    privacy: dpmod.PrivacyConfig = field(default_factory=dpmod.PrivacyConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    master_seed: int = 0
    output_dir: str = "runs/default"
    workers: int = 1
    base_dir: str = field(default=".", compare=False)

    def validate(self) -> "ExperimentConfig":
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        expected = SCENARIO_MODE.get(self.scenario, "none")
        if self.privacy.mode != expected:
            raise ConfigError(
                f"scenario {self.scenario!r} requires privacy mode {expected!r}, got {self.privacy.mode!r}")
        if self.data.source not in ("synthetic", "csv"):
            raise ConfigError("data.source must be 'synthetic' or 'csv'")
        if self.data.source == "csv" and not self.data.csv_clients:
            raise ConfigError("data.source 'csv' needs a csv_clients manifest")
        self.privacy.validate()
        self.net.validate()
        self.fl.validate()
        if self.net.window_len != self.data.window_len:
            raise ConfigError("net.window_len and data.window_len differ")
        if self.net.appliance_count != len(self.data.appliances):
            raise ConfigError("net.appliance_count must equal the number of appliances")
        if self.data.source == "synthetic" and (self.data.clients < 1 or self.data.days < 1):
            raise ConfigError("synthetic data needs clients >= 1 and days >= 1")
        sp = self.data.split
        if len(sp) != 3 or any(not 0 <= float(x) < 1 for x in sp) or abs(sum(sp) - 1) > 1e-9:
            raise ConfigError("data.split must be three fractions in [0, 1) summing to 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.data.appliance_specs()
        return self

    def to_dict(self) -> dict:
        out = {
            "scenario": self.scenario,
            "master_seed": self.master_seed,
            "output_dir": self.output_dir,
            "workers": self.workers,
            "data": asdict(self.data),
            "net": asdict(self.net),
            "fl": asdict(self.fl),
            "privacy": asdict(self.privacy),
            "attack": asdict(self.attack),
        }
        out["net"]["encoder_channels"] = list(self.net.encoder_channels)
        out["net"]["pooling_bins"] = list(self.net.pooling_bins)
        return out


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_SECTION_TYPES = {"data": DataConfig, "net": NetworkSpec, "fl": fl.FLConfig,
                  "privacy": dpmod.PrivacyConfig, "attack": AttackConfig}
_TOP_KEYS = {"scenario", "master_seed", "output_dir", "workers"} | set(_SECTION_TYPES)
_PRIVACY_ALIASES = {"epsilon": "epsilon_budget"}


def _section(name, cls, raw):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    raw = dict(raw)
    if name == "privacy":
        for alias, real in _PRIVACY_ALIASES.items():
            if alias in raw:
                raw[real] = raw.pop(alias)
    allowed = {f.name for f in fields(cls)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(sorted(unknown))}")
    if name == "net":
        for key in ("encoder_channels", "pooling_bins"):
            if key in raw:
                raw[key] = tuple(raw[key])
    return cls(**raw)


def config_from_dict(raw: dict, base_dir=".") -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    scenario = raw.get("scenario", "fedavg")
    sections = {name: _section(name, cls, raw.get(name)) for name, cls in _SECTION_TYPES.items()}
    privacy = sections["privacy"]
    raw_privacy = raw.get("privacy") or {}
    if "mode" not in raw_privacy:
        privacy.mode = SCENARIO_MODE.get(scenario, "none")
    if "max_rounds" not in raw_privacy:
        privacy.max_rounds = sections["fl"].global_rounds
    fl_cfg = sections["fl"]
    fl_cfg.strategy = "fedprox" if scenario == "fedprox" else "fedavg"
    data_cfg = sections["data"]
    net = sections["net"]
    if "net" not in raw or "appliance_count" not in (raw.get("net") or {}):
        net = replace(net, appliance_count=len(data_cfg.appliances))
    if "net" not in raw or "window_len" not in (raw.get("net") or {}):
        net = replace(net, window_len=data_cfg.window_len)
    if data_cfg.source == "synthetic":
        fl_cfg.client_count = data_cfg.clients
    else:
        fl_cfg.client_count = len(data_cfg.csv_clients)
    cfg = ExperimentConfig(
        scenario=scenario, data=data_cfg, net=net, fl=fl_cfg, privacy=privacy,
        attack=sections["attack"], master_seed=int(raw.get("master_seed", 0)),
        output_dir=str(raw.get("output_dir", "runs/default")), workers=int(raw.get("workers", 1)),
        base_dir=str(base_dir))
    return cfg.validate()


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw or {}, base_dir=path.parent)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


# ---------------------------------------------------------------------------
# seeds
# ---------------------------------------------------------------------------

_STREAMS = {"data": 1, "train": 2, "dp": 3, "attack": 4, "init": 5}


def _seed(master, stream, index=0) -> int:
    ss = np.random.SeedSequence(int(master), spawn_key=(_STREAMS[stream], int(index)))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def derive_seeds(master_seed: int, N: int) -> dict:
    """Independent seed streams; client ``i``'s seeds never depend on ``N``."""
    return {
        "data": [_seed(master_seed, "data", i) for i in range(N)],
        "train": [_seed(master_seed, "train", i) for i in range(N)],
        "attack": [_seed(master_seed, "attack", i) for i in range(N)],
        "dp": _seed(master_seed, "dp"),
        "init": _seed(master_seed, "init"),
        "centralized": _seed(master_seed, "train", 1_000_000),
    }


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def synthetic_profile(dc: DataConfig, client_index: int) -> datamod.SynthProfile:
    group = client_index * dc.groups // max(dc.clients, 1) if dc.groups > 1 else 0
    period, duty, power = FRIDGE_GROUPS[group % len(FRIDGE_GROUPS)]
    return datamod.default_profile(
        fridge_period_s=period, fridge_duty=duty, fridge_power_w=power,
        dishwasher_rate=dc.dishwasher_rate, washer_rate=dc.washer_rate,
        residual_noise_w=dc.residual_noise_w, base_load_w=dc.base_load_w,
        sample_period_s=dc.source_period_s)


def build_datasets(cfg: ExperimentConfig, seeds=None) -> list[datamod.ClientDataset]:
    dc = cfg.data
    specs = dc.appliance_specs()
    out = []
    if dc.source == "synthetic":
        seeds = seeds or derive_seeds(cfg.master_seed, dc.clients)
        for i in range(dc.clients):
            traces, agg, _ = datamod.generate_client(synthetic_profile(dc, i), specs, dc.days,
                                                     seeds["data"][i])
            out.append(datamod.preprocess_client(i, agg, traces, specs, dc.target_period_s,
                                                 dc.window_len, dc.stride, tuple(dc.split)))
        return out
    base = Path(cfg.base_dir)
    for i, entry in enumerate(dc.csv_clients):
        cid = int(entry.get("id", i))
        period = float(entry.get("source_period_s", dc.source_period_s))
        try:
            agg_path = base / entry["aggregate"]
            app_paths = entry["appliances"]
        except KeyError as exc:
            raise ConfigError(f"csv client {cid}: missing {exc.args[0]!r}") from None
        agg = datamod.ingest_csv(agg_path, period)
        traces = {}
        for spec in specs:
            if spec.name not in app_paths:
                raise ConfigError(f"csv client {cid}: no trace for appliance {spec.name!r}")
            traces[spec.name] = datamod.ingest_csv(base / app_paths[spec.name], period, spec.max_power_w)
        T = min([len(agg)] + [len(t) for t in traces.values()])
        agg = datamod.TimeSeries(period, agg.values[:T])
        traces = {k: datamod.TimeSeries(period, v.values[:T]) for k, v in traces.items()}
        out.append(datamod.preprocess_client(cid, agg, traces, specs, dc.target_period_s,
                                             dc.window_len, dc.stride, tuple(dc.split)))
    return out


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    config: dict
    rounds: list
    client_scores: dict
    scores: dict
    attack: dict
    attack_clients: dict
    attack_rounds: list
    ledger: dict
    params_sha256: str
    wall_time_s: float = 0.0
    content_hash: str = ""

    def hashable(self) -> dict:
        return {
            "rounds": self.rounds,
            "client_scores": self.client_scores,
            "scores": self.scores,
            "attack": self.attack,
            "attack_clients": self.attack_clients,
            "attack_rounds": self.attack_rounds,
            "ledger": self.ledger.get("records", []),
            "params_sha256": self.params_sha256,
        }

    def compute_hash(self) -> str:
        blob = json.dumps(_jsonable(self.hashable()), sort_keys=True, allow_nan=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _params_digest(params_list) -> str:
    h = hashlib.sha256()
    for p in params_list:
        h.update(np.ascontiguousarray(p.values).tobytes())
    return h.hexdigest()


def scores_csv(table: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["appliance", "Accuracy", "F1", "Precision", "Recall"])
    for name, s in table.items():
        w.writerow([name] + [repr(float(s[m])) for m in METRICS])
    return buf.getvalue()


def _records_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def write_report(report: RunReport, out_dir, fmt="csv") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    if fmt == "csv":
        (out / "rounds.csv").write_text(_records_csv(
            report.rounds, ["round", "client_id", "train_loss", "val_loss", "val_f1", "epsilon_spent"]))
        (out / "scores.csv").write_text(scores_csv(report.scores))
        eps = report.config.get("privacy", {}).get("epsilon_budget")
        (out / "attack.csv").write_text(_records_csv(
            [dict(scenario=report.config["scenario"], epsilon=eps, **report.attack)] if report.attack else [],
            ["scenario", "epsilon", "asr", "tpr", "fpr"]))
        (out / "ledger.csv").write_text(_records_csv(
            report.ledger.get("records", []), ["round", "delta_eps", "cumulative_eps", "exhausted"]))
    elif fmt != "json":
        raise ConfigError(f"unknown output format {fmt!r}")
    return out


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------


def _attack_all(params_by_client, spec, datasets, seeds):
    results = {}
    for d in datasets:
        res = attackmod.attack_client(params_by_client[d.client_id], spec, d,
                                      seed=seeds["attack"][d.client_id])
        results[d.client_id] = asdict(res)
    return results


def run_scenario(cfg: ExperimentConfig, workers=None, datasets=None) -> RunReport:
    """Build data, train per the scenario, score, attack; returns the report (no files written)."""
    cfg.validate()
    started = time.perf_counter()
    workers = cfg.workers if workers is None else workers
    try:
        datasets = datasets if datasets is not None else build_datasets(cfg)
    except (DataError, OSError) as exc:
        raise DataError(f"[{cfg.scenario}] {exc}") from exc
    N = len(datasets)
    seeds = derive_seeds(cfg.master_seed, max(N, max(d.client_id for d in datasets) + 1))
    spec = cfg.net
    init = build_network(spec, seeds["init"])
    client_seeds = {d.client_id: seeds["train"][d.client_id] for d in datasets}
    rounds, attack_rounds, ledger = [], [], None

    if cfg.scenario == "local":
        params_by_client = {
            d.client_id: fl.run_local(cfg.fl, spec, init, d, seed=client_seeds[d.client_id],
                                      epochs=cfg.fl.centralized_epochs)
            for d in datasets
        }
        final = [params_by_client[d.client_id] for d in datasets]
    elif cfg.scenario == "centralized":
        params = fl.run_centralized(cfg.fl, spec, init, datasets, seed=seeds["centralized"])
        params_by_client = {d.client_id: params for d in datasets}
        final = [params]
    else:
        callback = None
        if cfg.attack.enabled and cfg.attack.per_round:
            def callback(r, global_params, uploads):
                res = _attack_all(uploads, spec, datasets, seeds)
                attack_rounds.append({"round": r, **attackmod.mean_attack(
                    attackmod.AttackResult(**v) for v in res.values())})
        state, ledger, rounds = fl.run_federated(
            cfg.fl, spec, init, datasets, dp=cfg.privacy, client_seeds=client_seeds,
            dp_seed=seeds["dp"], workers=workers, round_callback=callback)
        params_by_client = {d.client_id: state.params for d in datasets}
        final = [state.params]

    client_scores = {d.client_id: evaluate(params_by_client[d.client_id], spec, d) for d in datasets}
    avg = average_scores(list(client_scores.values()))
    attack_clients, attack_mean = {}, {}
    if cfg.attack.enabled:
        attack_clients = _attack_all(params_by_client, spec, datasets, seeds)
        attack_mean = attackmod.mean_attack(attackmod.AttackResult(**v) for v in attack_clients.values())
    ledger_dict = {}
    if ledger is not None:
        ledger_dict = {"records": ledger.records(), "epsilon_spent": ledger.epsilon_spent,
                       "budget": ledger.budget, "exhausted": ledger.exhausted,
                       "heuristic": ledger.heuristic, "disabled": ledger.disabled,
                       "sigma": cfg.privacy.resolved_sigma(),
                       "rounds_completed": len([r for r in rounds if r["client_id"] == "global"])}
    report = RunReport(
        config=cfg.to_dict(), rounds=rounds, client_scores=client_scores, scores=avg,
        attack=attack_mean, attack_clients=attack_clients, attack_rounds=attack_rounds,
        ledger=ledger_dict, params_sha256=_params_digest(final))
    report.content_hash = report.compute_hash()
    report.wall_time_s = time.perf_counter() - started
    return report


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

AXES = {
    "epsilon": ("privacy", "epsilon_budget"),
    "sigma": ("privacy", "sigma"),
    "clip_norm": ("privacy", "clip_norm"),
    "delta": ("privacy", "delta"),
    "mu": ("fl", "mu"),
    "lr": ("fl", "lr"),
    "global_rounds": ("fl", "global_rounds"),
    "local_epochs": ("fl", "local_epochs"),
    "master_seed": (None, "master_seed"),
}


def parse_axis(text: str):
    """``"epsilon=4,8,12"`` -> ``("epsilon", [4.0, 8.0, 12.0])``."""
    if "=" not in text:
        raise ConfigError(f"axis must look like name=v1,v2,..., got {text!r}")
    name, _, vals = text.partition("=")
    name = name.strip()
    if name not in AXES:
        raise ConfigError(f"unknown sweep axis {name!r}; choose from {', '.join(AXES)}")
    try:
        values = [float(v) for v in vals.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"non-numeric sweep value in {text!r}") from None
    if not values:
        raise ConfigError("sweep axis has no values")
    return name, values


def with_axis(cfg: ExperimentConfig, axis: str, value, scenario=None) -> ExperimentConfig:
    new = copy.deepcopy(cfg)
    if scenario is not None and scenario != new.scenario:
        new.scenario = scenario
        new.privacy.mode = SCENARIO_MODE.get(scenario, "none")
        new.fl.strategy = "fedprox" if scenario == "fedprox" else "fedavg"
    section, key = AXES[axis]
    target = new if section is None else getattr(new, section)
    cast = type(getattr(target, key)) if getattr(target, key) is not None else float
    if cast is int:
        value = int(value)
    setattr(target, key, value)
    if axis == "global_rounds":
        new.privacy.max_rounds = new.fl.global_rounds
    return new.validate()


def _effective_key(cfg: ExperimentConfig) -> str:
    d = cfg.to_dict()
    d.pop("output_dir", None)
    d.pop("workers", None)
    if d["privacy"]["mode"] == "none":
        d["privacy"] = None
    return json.dumps(d, sort_keys=True)


def sweep(cfg: ExperimentConfig, axis: str, values, scenarios=None, workers=None):
    """One run per (scenario, value); identical effective configs are run once."""
    scenarios = list(scenarios or [cfg.scenario])
    cache, reports, table = {}, [], []
    for scenario in scenarios:
        for value in values:
            run_cfg = with_axis(cfg, axis, value, scenario)
            key = _effective_key(run_cfg)
            if key not in cache:
                cache[key] = run_scenario(run_cfg, workers=workers)
            report = cache[key]
            reports.append((scenario, value, report))
            row = {"scenario": scenario, axis: value}
            for app, s in report.scores.items():
                for m in METRICS:
                    row[f"{app}_{m}"] = s[m]
            row.update({k: report.attack.get(k, math.nan) for k in ("asr", "tpr", "fpr")})
            row["content_hash"] = report.content_hash
            table.append(row)
    return reports, table


def write_sweep(reports, table, out_dir, axis, fmt="csv") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for scenario, value, report in reports:
        write_report(report, out / f"{scenario}_{axis}_{value:g}", fmt)
    if table:
        columns = list(table[0].keys())
        (out / "sweep.csv").write_text(_records_csv(table, columns))
        (out / f"asr_vs_{axis}.csv").write_text(
            _records_csv(table, ["scenario", axis, "asr", "tpr", "fpr"]))
    (out / "sweep.json").write_text(json.dumps(_jsonable(table), indent=2))
    return out


def resolve_output_dir(cfg: ExperimentConfig, cli_value=None) -> str:
    return cli_value or os.environ.get(OUTPUT_DIR_ENV) or cfg.output_dir
