"""Config-driven experiments: train, account, attack and evaluate per noise level.

Run directory layout::

    <out>/config.json
    <out>/baseline/            non-private target
        model.npz model.json train_report.json grad_norms.csv
        eval.json per_level.csv attack_report.json
    <out>/z<value>/            one per noise multiplier in the sweep
        ... same files, plus privacy.json (no grad_norms.csv)
    <out>/manifest-<hash>.json

Every report except the manifest is a pure function of the config, so a
rerun with the same config writes byte-identical files. Wall-clock times
live only in the manifest.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import time
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import attack as A
from .accountant import audit
from .data import (
    DataError, Record, SplitSpec, SynthSpec, Vocabulary, build_vocabulary, encode_documents,
    ingest, load_embeddings, split_records, synth_corpus, synth_vocabulary, tokenize,
)
from .metrics import evaluate, per_level_accuracy, write_per_level_csv
from .models import EncoderConfig, HtcModel, absent_levels
from .optim import DpConfig, TrainConfig, TrainReport, calibrate_clipping_norm, lower_median, train
from .taxonomy import Taxonomy, balanced_tree

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class HarnessError(RuntimeError):
    def __init__(self, stage: str, message: str, manifest: str | None = None):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.manifest = manifest


# -- configuration ---------------------------------------------------------


@dataclass
class SynthConfig:
    branching: list[int] = field(default_factory=lambda: [3, 3, 3])
    n: int = 2000
    vocab_size: int = 2000
    seed: int = 0
    tokens_per_node: int = 4
    topic_tokens: list[float] = field(default_factory=lambda: [3.0, 1.5, 1.0])
    length: list[int] = field(default_factory=lambda: [12, 24])
    zipf_exponent: float = 1.0
    partial_depth: float = 0.0

    def spec(self) -> SynthSpec:
        return SynthSpec(self.tokens_per_node, tuple(self.topic_tokens), tuple(self.length),
                         self.zipf_exponent, self.partial_depth)


@dataclass
class DataConfig:
    source: str = "synth"  # "synth" or an ingest adapter name
    path: str | None = None
    taxonomy: str | None = None
    embeddings: str | None = None
    max_len: int = 64
    min_count: int = 1
    fractions: list[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    counts: list[int] | None = None  # explicit train/validation/test sizes
    split_seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)


@dataclass
class DpTrainerConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 30
    patience: int | None = 3
    clip_norm: float | str = "auto"  # "auto": lower median of baseline step norms
    microbatch_size: int = 1


@dataclass
class AttackOptions:
    known_fraction: float = 0.5
    with_htc_features: bool = False
    gradient_groups: list[str] | None = None  # None: every head weight matrix
    max_per_group: int | None = 500
    save_features: bool = False
    classifier: A.AttackConfig = field(default_factory=A.AttackConfig)


@dataclass
class VariationConfig:
    overfit_epochs: int | None = None
    subsample: float | None = None  # fraction of the training split (<= 1) or a record count
    levels: int | None = None
    scratch: bool = False

    def active(self) -> list[str]:
        flags = {
            "overfit": self.overfit_epochs is not None,
            "subsample": self.subsample is not None,
            "levels": self.levels is not None,
            "scratch": self.scratch,
        }
        return [k for k, on in flags.items() if on]


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: EncoderConfig = field(default_factory=EncoderConfig)
    levels: int | None = None  # trained levels K; None: the full taxonomy depth
    trainer: TrainConfig = field(default_factory=TrainConfig)
    dp: DpTrainerConfig = field(default_factory=DpTrainerConfig)
    sweep: list[float] = field(default_factory=lambda: [0.1, 0.5, 1.0, 3.0])
    attack: AttackOptions = field(default_factory=AttackOptions)
    variation: VariationConfig = field(default_factory=VariationConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return _to_jsonable(dataclasses.asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _build(cls, d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


# Learning rate, batch size, clipping norm and microbatch size per dataset
# and encoder, as tuned for the full-scale corpora.
PRESETS: dict[str, dict[str, Any]] = {
    f"{ds}-{enc}": {
        "trainer.lr": lr, "trainer.batch_size": 32,
        "dp.lr": dp_lr, "dp.batch_size": dp_b, "dp.clip_norm": c, "dp.microbatch_size": mb,
        "model.kind": enc,
    }
    for ds, enc, lr, dp_lr, dp_b, c, mb in [
        ("bestbuy", "bow", 0.001, 0.01, 64, 0.19, 1),
        ("bestbuy", "cnn", 0.001, 0.001, 64, 1.48, 1),
        ("bestbuy", "transformer", 0.005, 0.015, 64, 2.07, 1),
        ("reuters", "bow", 0.001, 0.008, 64, 0.33, 1),
        ("reuters", "cnn", 0.001, 0.001, 64, 6.28, 1),
        ("reuters", "transformer", 0.005, 0.005, 32, 12.86, 4),
        ("dbpedia", "bow", 0.001, 0.016, 64, 0.03, 1),
        ("dbpedia", "cnn", 0.001, 0.001, 64, 0.21, 1),
        ("dbpedia", "transformer", 0.005, 0.01, 32, 1.6, 4),
    ]
}


def _to_jsonable(x):
    if isinstance(x, dict):
        return {k: _to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_to_jsonable(v) for v in x]
    return x


def _build(cls, d: dict):
    if not isinstance(d, dict):
        raise ConfigError(f"expected an object for {cls.__name__}, got {type(d).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in d:
            continue
        value, hint = d[f.name], hints[f.name]
        if dataclasses.is_dataclass(hint):
            value = _build(hint, value)
        elif typing.get_origin(hint) is tuple and isinstance(value, list):
            value = tuple(value)
        kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from exc


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config: ExperimentConfig, overrides: Sequence[str] | dict[str, Any]) -> ExperimentConfig:
    """Set dotted keys, e.g. ``trainer.lr=0.01`` or ``sweep=[0.5,1]``."""
    d = config.to_dict()
    items = overrides.items() if isinstance(overrides, dict) else [_split_override(o) for o in overrides]
    for key, value in items:
        node = d
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"unknown config key {key!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return ExperimentConfig.from_dict(d)


def _split_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, value = text.split("=", 1)
    return key.strip(), parse_value(value)


def apply_preset(config: ExperimentConfig, name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return apply_overrides(config, PRESETS[name])


def load_config(path: str | Path | None, overrides: Sequence[str] = (), preset: str | None = None) -> ExperimentConfig:
    config = ExperimentConfig() if path is None else ExperimentConfig.from_json(Path(path).read_text())
    if preset:
        config = apply_preset(config, preset)
    return apply_overrides(config, overrides) if overrides else config


# -- data ------------------------------------------------------------------


@dataclass
class Dataset:
    taxonomy: Taxonomy
    vocab: Vocabulary
    train: list[Record]
    validation: list[Record]
    test: list[Record]
    embeddings: np.ndarray | None = None


def prepare_data(config: ExperimentConfig) -> Dataset:
    """Load or synthesise records, split them, and apply data-side variations."""
    dc = config.data
    if dc.source == "synth":
        s = dc.synth
        taxonomy = balanced_tree(s.branching)
        vocab = synth_vocabulary(s.vocab_size)
        records = synth_corpus(taxonomy, s.n, s.vocab_size, s.seed, s.spec())
        records = [Record(r.tokens[:dc.max_len], r.label, r.source_id) for r in records]
    else:
        if dc.path is None or dc.taxonomy is None:
            raise ConfigError("file-backed data needs data.path and data.taxonomy")
        taxonomy = Taxonomy.load(dc.taxonomy)
        docs = ingest(dc.path, taxonomy, dc.source).documents
        if not docs:
            raise DataError(f"no usable documents in {dc.path}")
        vocab = None
        records = None
    spec = SplitSpec(tuple(dc.fractions), tuple(dc.counts) if dc.counts else None, dc.split_seed)
    if dc.source == "synth":
        splits = split_records(records, spec)
    else:
        # Vocabulary comes from the training documents only.
        order = split_records(list(range(len(docs))), spec)
        train_docs = [docs[i] for i in order.train]
        vocab = build_vocabulary((tokenize(d.text) for d in train_docs), dc.min_count)

        def enc(idx):
            return encode_documents([docs[i] for i in idx], taxonomy, vocab, dc.max_len)

        splits = type(order)(enc(order.train), enc(order.validation), enc(order.test))

    train_set = splits.train
    sub = config.variation.subsample
    if sub is not None:
        count = int(round(sub * len(train_set))) if sub <= 1 else int(sub)
        if not 1 <= count <= len(train_set):
            raise ConfigError(f"subsample {sub} gives {count} of {len(train_set)} training records")
        pick = np.random.default_rng(config.seed).permutation(len(train_set))[:count]
        train_set = [train_set[i] for i in sorted(pick)]

    embeddings = None
    if dc.embeddings is not None and not config.variation.scratch:
        rng = np.random.default_rng(config.seed)
        embeddings = load_embeddings(dc.embeddings, vocab, config.model.embed_dim, rng)
    return Dataset(taxonomy, vocab, train_set, splits.validation, splits.test, embeddings)


def trained_levels(config: ExperimentConfig, taxonomy: Taxonomy) -> int:
    if config.variation.levels is not None:
        return config.variation.levels
    return config.levels if config.levels is not None else taxonomy.depth


def build_model(config: ExperimentConfig, ds: Dataset) -> HtcModel:
    levels = trained_levels(config, ds.taxonomy)
    return HtcModel(
        config.model, ds.taxonomy, ds.vocab.size, levels,
        absent=absent_levels(ds.train, levels), embeddings=ds.embeddings, seed=config.seed,
    )


def trainer_config(config: ExperimentConfig, private: bool) -> TrainConfig:
    base = config.trainer
    if private:
        d = config.dp
        base = TrainConfig(d.lr, d.batch_size, d.max_epochs, d.patience, base.beta1, base.beta2, base.eps)
    if config.variation.overfit_epochs is not None:
        base = dataclasses.replace(base, max_epochs=config.variation.overfit_epochs, patience=None)
    return base


# -- stages ----------------------------------------------------------------


def calibrate(config: ExperimentConfig, ds: Dataset, baseline: TrainReport | None = None) -> float:
    """AUTO clipping norm from a non-private run with early stopping active.

    The baseline's own norms are reused unless a variation disabled early
    stopping for it, in which case a separate calibration run is made.
    """
    if baseline is not None and trainer_config(config, False).patience is not None:
        return lower_median(baseline.grad_norms)
    cal = config.trainer if config.trainer.patience is not None else dataclasses.replace(config.trainer, patience=3)
    c, _ = calibrate_clipping_norm(lambda: build_model(config, ds), ds.train, ds.validation, cal, config.seed)
    return c


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text + ("" if text.endswith("\n") else "\n"))


def train_target(
    config: ExperimentConfig, ds: Dataset, noise_multiplier: float = 0.0, clip_norm: float | None = None
) -> tuple[HtcModel, TrainReport, DpConfig | None]:
    model = build_model(config, ds)
    if noise_multiplier == 0:
        report = train(model, ds.train, ds.validation, trainer_config(config, False), seed=config.seed)
        return model, report, None
    if clip_norm is None:
        raise ConfigError("a private run needs a clipping norm")
    dp = DpConfig(noise_multiplier, clip_norm, config.dp.microbatch_size)
    report = train(model, ds.train, ds.validation, trainer_config(config, True), dp=dp, seed=config.seed)
    return model, report, dp


def evaluate_target(model: HtcModel, ds: Dataset, out: Path) -> dict:
    preds = model.predict(ds.test)
    truths = [r.label for r in ds.test]
    result = evaluate([p.path for p in preds], truths, ds.taxonomy)
    _write(out / "eval.json", result.to_json())
    rows = {}
    for name, split in (("train", ds.train), ("validation", ds.validation), ("test", ds.test)):
        p = model.predict(split) if split is not ds.test else preds
        rows[name] = per_level_accuracy([x.path for x in p], [r.label for r in split], model.levels)
    write_per_level_csv(out / "per_level.csv", rows)
    return dataclasses.asdict(result)


def attack_target(model: HtcModel, ds: Dataset, config: ExperimentConfig, epsilon: float | None, out: Path) -> A.AttackReport:
    opts = config.attack
    split = A.build_attack_splits(ds.train, ds.test, opts.known_fraction, config.seed, opts.max_per_group)
    kwargs = {"with_htc_features": opts.with_htc_features, "gradient_groups": opts.gradient_groups}
    train_feats = (A.extract_all(model, split.train_members, 1, **kwargs)
                   + A.extract_all(model, split.train_nonmembers, 0, **kwargs))
    test_feats = (A.extract_all(model, split.test_members, 1, **kwargs)
                  + A.extract_all(model, split.test_nonmembers, 0, **kwargs))
    if opts.save_features:
        A.save_features(train_feats, out / "attack_train.jsonl")
        A.save_features(test_feats, out / "attack_test.jsonl")
    classifier = A.train_attack_model(train_feats, seed=config.seed, config=opts.classifier)
    report = A.evaluate_attack(classifier, test_feats, epsilon)
    _write(out / "attack_report.json", report.to_json())
    return report


# -- manifests -------------------------------------------------------------


@dataclass
class RunManifest:
    path: Path
    data: dict

    @property
    def directory(self) -> Path:
        return self.path.parent

    def runs(self) -> list[dict]:
        return self.data["runs"]

    def load(self, run: dict, key: str) -> dict | None:
        rel = run.get(key)
        if rel is None:
            return None
        return json.loads((self.directory / rel).read_text())

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        path = Path(path)
        return cls(path, json.loads(path.read_text()))


def _write_manifest(out: Path, body: dict, times: dict) -> RunManifest:
    digest = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]
    path = out / f"manifest-{digest}.json"
    if not path.exists():
        _write(path, json.dumps({**body, "times": times}, indent=2, sort_keys=True))
    return RunManifest.read(path)


def _run_name(z: float) -> str:
    return "baseline" if z == 0 else f"z{z:g}"


def run_experiment(config: ExperimentConfig, out: str | Path, extra: dict | None = None) -> RunManifest:
    """Baseline plus one DP target per positive z: train, account, attack, evaluate.

    A stage failure writes a partial manifest and raises :class:`HarnessError`.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "config.json", config.to_json())
    body: dict[str, Any] = {"config": config.to_dict(), "config_path": "config.json", "runs": []}
    if extra:
        body.update(extra)
    times: dict[str, float] = {}
    stage = "data"

    def timed(name):
        times[name] = round(time.perf_counter() - started, 3)

    try:
        started = time.perf_counter()
        ds = prepare_data(config)
        timed("data")
        n = len(ds.train)
        body["records"] = {"train": n, "validation": len(ds.validation), "test": len(ds.test)}
        body["levels"] = trained_levels(config, ds.taxonomy)
        clip_norm = config.dp.clip_norm
        z_values = [0.0] + sorted(z for z in config.sweep if z > 0)
        for z in z_values:
            name = _run_name(z)
            run_dir = out / name
            run: dict[str, Any] = {"name": name, "noise_multiplier": z}
            body["runs"].append(run)
            started = time.perf_counter()

            stage = f"train[{name}]"
            if z == 0:
                model, report, _ = train_target(config, ds)
                if clip_norm == "auto" and any(z > 0 for z in z_values):
                    stage = "calibrate"
                    clip_norm = calibrate(config, ds, report)
                run_dir.mkdir(parents=True, exist_ok=True)
                report.write_grad_norms(run_dir / "grad_norms.csv")
                run["grad_norms"] = f"{name}/grad_norms.csv"
            else:
                model, report, _ = train_target(config, ds, z, float(clip_norm))
            model.save(run_dir, ds.vocab.digest())
            _write(run_dir / "train_report.json", report.to_json())
            run.update(checkpoint=f"{name}/model.npz", header=f"{name}/model.json",
                       train_report=f"{name}/train_report.json")
            timed(f"{name}.train")

            epsilon = None
            if z > 0:
                stage = f"audit[{name}]"
                privacy = audit(z, float(clip_norm), trainer_config(config, True).batch_size, n,
                                report.epochs, steps=report.steps)
                _write(run_dir / "privacy.json", json.dumps(privacy, indent=2, sort_keys=True))
                run["privacy"] = f"{name}/privacy.json"
                epsilon = math.inf if privacy["epsilon"] == "inf" else privacy["epsilon"]

            stage = f"evaluate[{name}]"
            evaluate_target(model, ds, run_dir)
            run.update(eval=f"{name}/eval.json", per_level=f"{name}/per_level.csv")

            stage = f"attack[{name}]"
            attack_target(model, ds, config, epsilon, run_dir)
            run["attack_report"] = f"{name}/attack_report.json"
            timed(f"{name}.total")
        body["clip_norm"] = None if clip_norm == "auto" else clip_norm
    except Exception as exc:
        body["failed_stage"] = stage
        body["error"] = f"{type(exc).__name__}: {exc}"
        manifest = _write_manifest(out, body, times)
        raise HarnessError(stage, str(exc), str(manifest.path)) from exc
    return _write_manifest(out, body, times)


VARIATIONS = ("overfit", "subsample", "levels", "scratch")


def run_variation(config: ExperimentConfig, out: str | Path) -> RunManifest:
    """``run_experiment`` with exactly one variation flag set in ``config.variation``."""
    active = config.variation.active()
    if len(active) != 1:
        raise ConfigError(f"exactly one variation flag must be set, got {active or 'none'}")
    extra: dict[str, Any] = {"variation": active[0]}
    if active[0] == "subsample":
        ds_levels = trained_levels(config, balanced_tree(config.data.synth.branching)
                                   if config.data.source == "synth" else Taxonomy.load(config.data.taxonomy))
        n = len(prepare_data(config).train)
        extra.update(train_records=n, ratio=n / ds_levels)
    return run_experiment(config, out, extra)


def subsample_sweep(config: ExperimentConfig, fractions: Sequence[float], out: str | Path) -> list[RunManifest]:
    """One subsample variation per fraction, each in its own directory."""
    out = Path(out)
    manifests = []
    for frac in fractions:
        cfg = apply_overrides(config, {"variation.subsample": frac})
        manifests.append(run_variation(cfg, out / f"subsample{frac:g}"))
    return manifests


# -- plot data -------------------------------------------------------------


PLOT_COLUMNS = ("manifest", "run", "noise_multiplier", "epsilon", "accuracy", "f_h", "f_lca",
                "attack_auc", "attack_adv", "bound")


def emit_plot_data(manifests: Sequence[RunManifest], path: str | Path | None = None) -> list[dict]:
    """One row per (manifest, run) with privacy, utility and attack metrics."""
    rows = []
    for m in manifests:
        for run in m.runs():
            privacy = m.load(run, "privacy")
            ev = m.load(run, "eval") or {}
            atk = m.load(run, "attack_report") or {}
            rows.append({
                "manifest": m.path.name,
                "run": run["name"],
                "noise_multiplier": run["noise_multiplier"],
                "epsilon": "NONE" if privacy is None else privacy["epsilon"],
                "accuracy": ev.get("accuracy"),
                "f_h": ev.get("f_h"),
                "f_lca": ev.get("f_lca"),
                "attack_auc": atk.get("auc"),
                "attack_adv": atk.get("advantage"),
                "bound": "NONE" if atk.get("bound") is None else atk["bound"],
            })
    if path is not None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=PLOT_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
    return rows
