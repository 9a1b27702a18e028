import copy
import json

import numpy as np
import pytest
import yaml

from fednilm import experiment as ex
from fednilm.errors import ConfigError

TINY = {
    "scenario": "fedavg",
    "master_seed": 5,
    "data": {"clients": 2, "days": 3},
    "net": {"encoder_channels": [4, 8], "encoder_downsample": 2, "decoder_channels": 4},
    "fl": {"global_rounds": 2, "local_epochs": 1, "lr": 0.1},
}


def tiny(**over):
    raw = copy.deepcopy(TINY)
    for key, value in over.items():
        if isinstance(value, dict):
            raw.setdefault(key, {}).update(value)
        else:
            raw[key] = value
    return ex.config_from_dict(raw)


def test_defaults_follow_the_reference_table():
    cfg = ex.config_from_dict({})
    assert (cfg.fl.batch_size, cfg.fl.global_rounds, cfg.fl.local_epochs) == (32, 10, 8)
    assert (cfg.fl.mu, cfg.fl.lr, cfg.fl.momentum) == (0.01, 1e-4, 0.5)
    assert cfg.net.dropout_p == 0.1
    assert (cfg.privacy.clip_norm, cfg.privacy.delta) == (4.0, 1e-5)
    assert cfg.privacy.mode == "none" and cfg.scenario == "fedavg"


def test_empty_privacy_block_gives_mode_none():
    assert ex.config_from_dict({"scenario": "fedavg", "privacy": {}}).privacy.mode == "none"


def test_gdpfl_needs_epsilon():
    with pytest.raises(ConfigError, match="epsilon"):
        ex.config_from_dict({"scenario": "gdpfl"})


def test_round_trip(tmp_path):
    cfg = tiny(scenario="ldpfl", privacy={"epsilon": 8})
    path = tmp_path / "c.yaml"
    path.write_text(ex.dump_config(cfg))
    again = ex.parse_config(path)
    assert again == cfg
    assert ex.dump_config(again) == ex.dump_config(cfg)


@pytest.mark.parametrize("raw, match", [
    ({"bogus": 1}, "unknown top-level"),
    ({"fl": {"rounds": 3}}, "unknown key"),
    ({"data": {"source": "csv"}}, "csv_clients"),
    ({"data": {"split": [0.5, 0.5]}}, "split"),
    ({"net": {"encoder_downsample": 3}}, "power of two"),
    ({"fl": "nope"}, "mapping"),
])
def test_config_errors(raw, match):
    with pytest.raises(ConfigError, match=match):
        ex.config_from_dict(raw)


def test_every_mismatched_scenario_mode_pair_is_rejected():
    expected = {"gdpfl": "global", "ldpfl": "local"}
    for scenario in ex.SCENARIOS:
        for mode in ("none", "global", "local"):
            raw = {"scenario": scenario, "privacy": {"mode": mode, "epsilon": 4}}
            if expected.get(scenario, "none") == mode:
                ex.config_from_dict(raw)
            else:
                with pytest.raises(ConfigError, match="requires privacy mode"):
                    ex.config_from_dict(raw)


def test_missing_file_and_bad_yaml(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        ex.parse_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("fl: [unclosed\n")
    with pytest.raises(ConfigError):
        ex.parse_config(bad)


def test_example_config_parses():
    from pathlib import Path

    cfg = ex.parse_config(Path(__file__).parent.parent / "configs" / "fedavg_synthetic.yaml")
    assert cfg.scenario == "fedavg" and cfg.data.clients == 9


def test_derive_seeds():
    a = ex.derive_seeds(1, 5)
    assert a == ex.derive_seeds(1, 5)
    assert len(set(a["train"])) == 5 and len(set(a["data"])) == 5
    b = ex.derive_seeds(1, 3)
    for stream in ("data", "train", "attack"):
        assert b[stream] == a[stream][:3]
    assert ex.derive_seeds(2, 5)["train"] != a["train"]
    streams = set(a["data"]) | set(a["train"]) | set(a["attack"]) | {a["dp"], a["init"]}
    assert len(streams) == 3 * 5 + 2


@pytest.fixture(scope="module")
def fedavg_report():
    return ex.run_scenario(tiny())


def test_rerun_gives_same_hash(fedavg_report):
    again = ex.run_scenario(tiny())
    assert again.content_hash == fedavg_report.content_hash
    assert len(fedavg_report.content_hash) == 64


def test_worker_count_does_not_change_hash(fedavg_report):
    assert ex.run_scenario(tiny(), workers=2).content_hash == fedavg_report.content_hash


def test_fedprox_mu_zero_hash_equals_fedavg(fedavg_report):
    assert ex.run_scenario(tiny(scenario="fedprox", fl={"mu": 0.0})).content_hash == fedavg_report.content_hash
    assert ex.run_scenario(tiny(scenario="fedprox")).content_hash != fedavg_report.content_hash


@pytest.mark.parametrize("scenario", ["gdpfl", "ldpfl"])
def test_zero_sigma_hash_equals_fedavg(fedavg_report, scenario):
    rep = ex.run_scenario(tiny(scenario=scenario, privacy={"epsilon": 4, "sigma": 0.0}))
    assert rep.content_hash == fedavg_report.content_hash
    assert rep.ledger["disabled"]


def test_seed_changes_hash(fedavg_report):
    assert ex.run_scenario(tiny(master_seed=6)).content_hash != fedavg_report.content_hash


def test_report_contents(fedavg_report):
    r = fedavg_report
    assert set(r.scores) == {"fridge", "dishwasher", "washing_machine"}
    assert set(r.client_scores) == {0, 1}
    assert set(r.attack) == {"asr", "tpr", "fpr"}
    assert [x["client_id"] for x in r.rounds].count("global") == 2
    assert r.ledger == {}


def test_gdpfl_ledger_and_budget():
    rep = ex.run_scenario(tiny(scenario="gdpfl", privacy={"epsilon": 8}))
    recs = rep.ledger["records"]
    assert [x["round"] for x in recs] == [1, 2]
    assert recs[-1]["cumulative_eps"] <= 8 and not rep.ledger["exhausted"]
    assert rep.ledger["rounds_completed"] == 2
    tight = ex.run_scenario(tiny(scenario="gdpfl", privacy={"epsilon": 1, "sigma": 1.0}))
    assert tight.ledger["exhausted"] and tight.ledger["rounds_completed"] == 0


def test_ldpfl_ledger_is_labelled_heuristic():
    rep = ex.run_scenario(tiny(scenario="ldpfl", privacy={"epsilon": 8}))
    assert rep.ledger["heuristic"] and rep.ledger["rounds_completed"] == 2


@pytest.mark.parametrize("scenario", ["local", "centralized"])
def test_baselines_run(scenario):
    rep = ex.run_scenario(tiny(scenario=scenario, fl={"centralized_epochs": 1}))
    assert rep.rounds == [] and set(rep.client_scores) == {0, 1}


def test_write_report_files(tmp_path, fedavg_report):
    ex.write_report(fedavg_report, tmp_path / "csv", "csv")
    names = sorted(p.name for p in (tmp_path / "csv").iterdir())
    assert names == ["attack.csv", "ledger.csv", "report.json", "rounds.csv", "scores.csv"]
    header = (tmp_path / "csv" / "scores.csv").read_text().splitlines()[0]
    assert header == "appliance,Accuracy,F1,Precision,Recall"
    data = json.loads((tmp_path / "csv" / "report.json").read_text())
    assert data["content_hash"] == fedavg_report.content_hash
    ex.write_report(fedavg_report, tmp_path / "json", "json")
    assert [p.name for p in (tmp_path / "json").iterdir()] == ["report.json"]


def test_parse_axis():
    assert ex.parse_axis("epsilon=4,8,12") == ("epsilon", [4.0, 8.0, 12.0])
    for bad in ("epsilon", "zeta=1", "epsilon=a", "epsilon="):
        with pytest.raises(ConfigError):
            ex.parse_axis(bad)


def test_sweep_of_one_equals_single_run(fedavg_report):
    reports, table = ex.sweep(tiny(), "master_seed", [5])
    assert len(table) == 1
    assert reports[0][2].content_hash == fedavg_report.content_hash


def test_sweep_table(tmp_path):
    cfg = tiny(scenario="gdpfl", privacy={"epsilon": 4})
    reports, table = ex.sweep(cfg, "epsilon", [4.0, 12.0], scenarios=["fedavg", "gdpfl"])
    assert len(table) == 4
    assert [row["epsilon"] for row in table] == [4.0, 12.0, 4.0, 12.0]
    # the privacy axis does not touch a non-private run, so both fedavg rows share one run
    assert table[0]["content_hash"] == table[1]["content_hash"]
    assert table[2]["content_hash"] != table[3]["content_hash"]
    for row, (_, _, rep) in zip(table, reports):
        assert row["asr"] == rep.attack["asr"]
        assert row["fridge_f1"] == rep.scores["fridge"]["f1"]
    single = ex.run_scenario(ex.with_axis(cfg, "epsilon", 12.0))
    assert single.content_hash == table[3]["content_hash"]
    ex.write_sweep(reports, table, tmp_path, "epsilon")
    assert (tmp_path / "asr_vs_epsilon.csv").read_text().splitlines()[0] == "scenario,epsilon,asr,tpr,fpr"
    assert (tmp_path / "gdpfl_epsilon_12" / "report.json").is_file()


def test_output_dir_resolution(monkeypatch):
    cfg = tiny()
    monkeypatch.delenv(ex.OUTPUT_DIR_ENV, raising=False)
    assert ex.resolve_output_dir(cfg) == cfg.output_dir
    monkeypatch.setenv(ex.OUTPUT_DIR_ENV, "/tmp/env-out")
    assert ex.resolve_output_dir(cfg) == "/tmp/env-out"
    assert ex.resolve_output_dir(cfg, "cli") == "cli"


def test_csv_manifest(tmp_path):
    rng = np.random.default_rng(0)
    n = 14400  # one day at 6 s
    t = np.arange(n) * 6
    fridge = np.where((t // 1200) % 2 == 0, 120.0, 0.0)
    agg = fridge + 80 + rng.normal(0, 5, n)
    for name, v in (("agg", agg), ("fridge", fridge)):
        (tmp_path / f"{name}.csv").write_text("".join(f"{a},{b}\n" for a, b in zip(t, v)))
    raw = {"data": {"source": "csv", "appliances": ["fridge"],
                    "csv_clients": [{"id": 0, "aggregate": "agg.csv", "appliances": {"fridge": "fridge.csv"}}]}}
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(raw))
    cfg = ex.parse_config(tmp_path / "c.yaml")
    (ds,) = ex.build_datasets(cfg)
    assert ds.windows.shape == (24, 120) and ds.states.shape == (24, 1, 120)
    assert ds.states.mean() == pytest.approx(0.5, abs=0.02)
