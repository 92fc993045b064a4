import csv
import json
import math

import pytest

from dphtc import harness as H
from dphtc.harness import ConfigError, ExperimentConfig, HarnessError, apply_overrides

from conftest import tiny_config


# -- config ----------------------------------------------------------------


def test_config_round_trip():
    config = tiny_config(**{"variation.levels": 1, "dp.clip_norm": 0.5})
    again = ExperimentConfig.from_json(config.to_json())
    assert again == config
    assert again.attack.classifier.head_widths == (8, 4)


def test_overrides_parse_json_values():
    config = H.load_config(None, ["trainer.lr=0.05", "sweep=[2, 0.5]", "model.kind=cnn", "dp.patience=null"])
    assert config.trainer.lr == 0.05 and config.sweep == [2, 0.5]
    assert config.model.kind == "cnn" and config.dp.patience is None


@pytest.mark.parametrize("bad", [["trainer.nope=1"], ["nope.lr=1"], ["trainer.lr"], ["model.kind=rnn"]])
def test_bad_overrides(bad):
    with pytest.raises(ConfigError):
        H.load_config(None, bad)


def test_unknown_keys_in_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"trainer": {"lr": 0.1, "momentum": 0.9}}))
    with pytest.raises(ConfigError, match="momentum"):
        H.load_config(path)


def test_presets():
    config = H.apply_preset(ExperimentConfig(), "reuters-transformer")
    assert config.model.kind == "transformer"
    assert config.dp.microbatch_size == 4 and config.dp.clip_norm == 12.86
    assert len(H.PRESETS) == 9
    with pytest.raises(ConfigError, match="unknown preset"):
        H.apply_preset(ExperimentConfig(), "imdb-bow")


# -- data and variations ---------------------------------------------------


def test_file_backed_data_builds_vocabulary_from_train(tmp_path, sample_tree):
    rows = [{"text": f"w{i} shared", "labels": ["3", "3.2"]} for i in range(20)]
    (tmp_path / "d.jsonl").write_text("\n".join(json.dumps(r) for r in rows))
    sample_tree.dump(tmp_path / "t.tsv")
    config = tiny_config(**{"data.source": "jsonl", "data.path": str(tmp_path / "d.jsonl"),
                            "data.taxonomy": str(tmp_path / "t.tsv")})
    ds = H.prepare_data(config)
    assert len(ds.train) == 16
    assert ds.vocab.size == 2 + 16 + 1  # PAD, UNK, one token per train doc, "shared"


def test_subsample_fraction_and_count():
    assert len(H.prepare_data(tiny_config(**{"variation.subsample": 0.25})).train) == 32
    assert len(H.prepare_data(tiny_config(**{"variation.subsample": 10})).train) == 10
    with pytest.raises(ConfigError):
        H.prepare_data(tiny_config(**{"variation.subsample": 1000}))


def test_variation_needs_exactly_one_flag(tmp_path):
    with pytest.raises(ConfigError, match="exactly one"):
        H.run_variation(tiny_config(), tmp_path)
    with pytest.raises(ConfigError, match="exactly one"):
        H.run_variation(tiny_config(**{"variation.levels": 1, "variation.scratch": True}), tmp_path)


def test_overfit_runs_at_least_as_long_as_early_stopping():
    config = tiny_config(**{"trainer.max_epochs": 6})
    ds = H.prepare_data(config)
    _, stopped, _ = H.train_target(config, ds)
    _, overfit, _ = H.train_target(apply_overrides(config, {"variation.overfit_epochs": 6}), ds)
    assert overfit.epochs == 6 >= stopped.epochs


def test_levels_variation_truncates_heads():
    config = tiny_config(**{"variation.levels": 1})
    ds = H.prepare_data(config)
    model = H.build_model(config, ds)
    assert model.levels == 1 and len(model.head_groups()) == 1


def test_scratch_ignores_embeddings(tmp_path):
    (tmp_path / "v.txt").write_text("t3 " + " ".join(["1.0"] * 8) + "\n")
    config = tiny_config(**{"data.embeddings": str(tmp_path / "v.txt")})
    assert H.prepare_data(config).embeddings is not None
    assert H.prepare_data(apply_overrides(config, {"variation.scratch": True})).embeddings is None


def test_subsample_variation_records_ratio(tmp_path):
    config = tiny_config(**{"variation.subsample": 0.5, "sweep": []})
    manifest = H.run_variation(config, tmp_path)
    assert manifest.data["variation"] == "subsample"
    assert manifest.data["train_records"] == 64 and manifest.data["ratio"] == 32


# -- experiments -----------------------------------------------------------


@pytest.fixture(scope="module")
def sweep_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    config = tiny_config(**{"sweep": [3.0, 1.0]})
    return config, H.run_experiment(config, out)


def test_manifest_lists_every_artefact(sweep_run):
    _, manifest = sweep_run
    names = [r["name"] for r in manifest.runs()]
    assert names == ["baseline", "z1", "z3"]
    for run in manifest.runs():
        for key in ("checkpoint", "header", "train_report", "eval", "per_level", "attack_report"):
            assert (manifest.directory / run[key]).exists(), (run["name"], key)
        assert ("privacy" in run) == (run["noise_multiplier"] > 0)
    assert "failed_stage" not in manifest.data
    assert manifest.data["clip_norm"] > 0
    assert set(manifest.data["times"]) >= {"data", "baseline.train", "z1.total"}


def test_privacy_report_matches_training(sweep_run):
    config, manifest = sweep_run
    z1 = manifest.runs()[1]
    privacy = manifest.load(z1, "privacy")
    report = manifest.load(z1, "train_report")
    assert privacy["steps"] == report["steps"]
    assert privacy["delta"] == 1 / manifest.data["records"]["train"]
    attack = manifest.load(z1, "attack_report")
    assert attack["epsilon"] == privacy["epsilon"]


def test_no_private_runs_for_zero_sweep(tmp_path):
    manifest = H.run_experiment(tiny_config(sweep=[0.0]), tmp_path)
    assert [r["name"] for r in manifest.runs()] == ["baseline"]
    assert not list(tmp_path.glob("*/privacy.json"))


def test_failure_writes_partial_manifest(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("attack exploded")

    monkeypatch.setattr(H, "attack_target", boom)
    with pytest.raises(HarnessError) as info:
        H.run_experiment(tiny_config(), tmp_path)
    assert info.value.stage == "attack[baseline]"
    data = json.loads(open(info.value.manifest).read())
    assert data["failed_stage"] == "attack[baseline]" and "attack exploded" in data["error"]
    assert "eval" in data["runs"][0] and "attack_report" not in data["runs"][0]


def test_plot_data(sweep_run, tmp_path):
    _, manifest = sweep_run
    assert H.emit_plot_data([]) == []
    rows = H.emit_plot_data([manifest], tmp_path / "p.csv")
    assert [r["run"] for r in rows] == ["baseline", "z1", "z3"]
    assert rows[0]["epsilon"] == "NONE" and rows[0]["bound"] == "NONE"
    assert rows[1]["epsilon"] > rows[2]["epsilon"]
    assert all(math.isinf(r["bound"]) or r["bound"] >= 0 for r in rows[1:])
    with open(tmp_path / "p.csv") as fh:
        table = list(csv.DictReader(fh))
    assert list(table[0]) == list(H.PLOT_COLUMNS) and len(table) == 3


def test_calibration_uses_an_early_stopped_run(monkeypatch):
    config = tiny_config()
    ds = H.prepare_data(config)
    _, base, _ = H.train_target(config, ds)
    assert H.calibrate(config, ds, base) == sorted(base.grad_norms)[(len(base.grad_norms) - 1) // 2]

    seen = []
    real = H.calibrate_clipping_norm
    monkeypatch.setattr(H, "calibrate_clipping_norm", lambda *a, **k: seen.append(a[3]) or real(*a, **k))
    overfit = apply_overrides(config, {"variation.overfit_epochs": 4})
    _, base, _ = H.train_target(overfit, ds)
    assert H.calibrate(overfit, ds, base) > 0
    assert seen and seen[0].patience == config.trainer.patience
