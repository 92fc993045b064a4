"""Command-line entry point: ``dphtc <subcommand> ...``.

Results go to stdout (JSON) or to files; failures print a JSON error object
to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

from . import harness as H
from .accountant import audit
from .data import decode_records, emit, synth_corpus, synth_vocabulary
from .models import HtcModel
from .taxonomy import balanced_tree


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config JSON (defaults used if omitted)")
    p.add_argument("--preset", choices=sorted(H.PRESETS), help="named hyperparameter preset")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a dotted config key; repeatable")


def _load(args) -> H.ExperimentConfig:
    return H.load_config(args.config, args.set, args.preset)


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_synth(args) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tax = balanced_tree(args.branching)
    records = synth_corpus(tax, args.n, args.vocab_size, args.seed)
    emit(decode_records(records, tax, synth_vocabulary(args.vocab_size)), out / "corpus.jsonl")
    tax.dump(out / "taxonomy.tsv")
    return {"corpus": str(out / "corpus.jsonl"), "taxonomy": str(out / "taxonomy.tsv"), "records": len(records)}


def cmd_train(args) -> dict:
    config = _load(args)
    ds = H.prepare_data(config)
    out = Path(args.out)
    clip = config.dp.clip_norm if args.clip_norm is None else args.clip_norm
    if args.z > 0 and clip == "auto":
        clip = H.calibrate(config, ds)
    model, report, _ = H.train_target(config, ds, args.z, None if args.z == 0 else float(clip))
    model.save(out, ds.vocab.digest())
    H._write(out / "train_report.json", report.to_json())
    result = {"checkpoint": str(out), "epochs": report.epochs, "steps": report.steps}
    if args.z == 0:
        report.write_grad_norms(out / "grad_norms.csv")
    else:
        privacy = audit(args.z, float(clip), H.trainer_config(config, True).batch_size, len(ds.train),
                        report.epochs, steps=report.steps)
        H._write(out / "privacy.json", json.dumps(privacy, indent=2, sort_keys=True))
        result["privacy"] = privacy
    return result


def cmd_audit(args) -> dict:
    return audit(args.z, args.clip_norm, args.batch_size, args.n, args.epochs, args.delta, steps=args.steps)


def _checkpoint(args, config):
    ds = H.prepare_data(config)
    model = HtcModel.load(args.checkpoint, ds.taxonomy, ds.vocab.digest())
    return ds, model


def cmd_attack(args) -> dict:
    config = _load(args)
    ds, model = _checkpoint(args, config)
    epsilon = args.epsilon
    privacy = Path(args.checkpoint) / "privacy.json"
    if epsilon is None and privacy.exists():
        eps = json.loads(privacy.read_text())["epsilon"]
        epsilon = math.inf if eps == "inf" else eps
    report = H.attack_target(model, ds, config, epsilon, Path(args.out or args.checkpoint))
    return json.loads(report.to_json())


def cmd_evaluate(args) -> dict:
    config = _load(args)
    ds, model = _checkpoint(args, config)
    return H.evaluate_target(model, ds, Path(args.out or args.checkpoint))


def cmd_sweep(args) -> dict:
    manifest = H.run_experiment(_load(args), args.out)
    return {"manifest": str(manifest.path)}


def cmd_variation(args) -> dict:
    config = _load(args)
    if args.kind == "subsample":
        if not args.value:
            raise CliError("subsample needs --value with one or more fractions")
        manifests = H.subsample_sweep(config, _floats(args.value), args.out)
        return {"manifests": [str(m.path) for m in manifests]}
    if args.kind == "scratch":
        override = {"variation.scratch": True}
    else:
        if not args.value:
            raise CliError(f"{args.kind} needs --value")
        key = "variation.overfit_epochs" if args.kind == "overfit" else "variation.levels"
        override = {key: int(args.value)}
    manifest = H.run_variation(H.apply_overrides(config, override), args.out)
    return {"manifest": str(manifest.path)}


def cmd_plot_data(args):
    manifests = [H.RunManifest.read(p) for p in args.manifests]
    if args.out:
        rows = H.emit_plot_data(manifests, args.out)
        return {"rows": len(rows), "csv": args.out}
    rows = H.emit_plot_data(manifests)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=H.PLOT_COLUMNS)
    writer.writeheader()
    writer.writerows(rows)
    sys.stdout.write(buf.getvalue())
    return None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dphtc", description="Differentially private hierarchical text classification")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic corpus and its taxonomy")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--branching", type=_ints, default=[3, 3, 3])
    p.add_argument("--vocab-size", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one target model")
    _config_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--z", type=float, default=0.0, help="noise multiplier; 0 trains non-privately")
    p.add_argument("--clip-norm", type=float, help="overrides dp.clip_norm")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("audit", help="epsilon of a Gaussian training run")
    p.add_argument("--z", type=float, required=True)
    p.add_argument("--clip-norm", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--delta", type=float, help="defaults to 1/n")
    p.add_argument("--steps", type=int, help="overrides epochs * floor(n / batch size)")
    p.set_defaults(func=cmd_audit)

    for name, func, text in (("attack", cmd_attack, "membership inference against a checkpoint"),
                             ("evaluate", cmd_evaluate, "utility metrics of a checkpoint")):
        p = sub.add_parser(name, help=text)
        _config_args(p)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--out", help="report directory (defaults to the checkpoint)")
        if name == "attack":
            p.add_argument("--epsilon", type=float, help="privacy budget for the bound")
        p.set_defaults(func=func)

    p = sub.add_parser("sweep", help="baseline plus every z in the sweep")
    _config_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("variation", help="one experiment variation")
    _config_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", required=True, choices=H.VARIATIONS)
    p.add_argument("--value", help="epochs, level count, or comma-separated subsample fractions")
    p.set_defaults(func=cmd_variation)

    p = sub.add_parser("plot-data", help="CSV table over run manifests")
    p.add_argument("manifests", nargs="*")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot_data)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
        result = args.func(args)
        if result is not None:
            _emit(result)
        return 0
    except Exception as exc:
        error = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, H.HarnessError):
            error.update(stage=exc.stage, manifest=exc.manifest)
        sys.stderr.write(json.dumps(error, sort_keys=True) + "\n")
        return 2 if isinstance(exc, CliError) else 1


if __name__ == "__main__":
    sys.exit(main())
