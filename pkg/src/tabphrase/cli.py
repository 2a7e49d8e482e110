"""Command-line operator surface.

Commands: curate, pretrain, finetune, eval, fewshot, sweep. Configuration
comes from an optional JSON file plus flag overrides; every run persists its
fully resolved configuration next to its outputs, and that file is itself a
valid --config for an identical rerun.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .embedder import EmbedderConfig, POOLING_STRATEGIES, ProviderConfig
from .encoder import EncoderConfig
from .errors import ConfigError, DataError, NanProduced, TrainingError
from .eval import kfold_eval
from .ingest import (
    CurationPolicy,
    curate,
    discover_corpus,
    feature_importance_prune,
    load_table,
    save_table,
)
from .model import ModelConfig
from .objectives import ContrastiveConfig, MaskConfig
from .sweeps import SWEEP_AXES, run_sweep
from .trainer import TrainConfig, finetune, pretrain_mtm, pretrain_supcon
from .utils import RunLog, stable_json

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAINING = 4


def default_seed() -> int:
    raw = os.environ.get("TABPHRASE_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"TABPHRASE_SEED must be an integer, got '{raw}'") from exc


# -------------------------------------------------------------- config I/O


def _build(cls, section: dict, what: str):
    try:
        return cls(**section)
    except TypeError as exc:
        raise ConfigError(f"bad {what} section: {exc}") from exc


def model_config_from(raw: dict) -> ModelConfig:
    emb = dict(raw.get("embedder", {}))
    provider = _build(ProviderConfig, emb.pop("provider", {}), "provider")
    embedder = _build(EmbedderConfig, {**emb, "provider": provider}, "embedder")
    encoder = _build(EncoderConfig, raw.get("encoder", {}), "encoder")
    return ModelConfig(embedder=embedder, encoder=encoder)


def train_config_from(raw: dict) -> TrainConfig:
    raw = dict(raw)
    mask = _build(MaskConfig, raw.pop("mask", {}), "mask")
    contrastive = _build(ContrastiveConfig, raw.pop("contrastive", {}), "contrastive")
    return _build(TrainConfig, {**raw, "mask": mask, "contrastive": contrastive},
                  "train")


def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {path} ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file must hold a JSON object: {path}")
    return raw


def _apply_overrides(args, raw: dict) -> dict:
    """Flags beat file values; only flags the user actually set apply."""
    model = dict(raw.get("model", {}))
    embedder = dict(model.get("embedder", {}))
    provider = dict(embedder.get("provider", {}))
    encoder = dict(model.get("encoder", {}))
    train = dict(raw.get("train", {}))
    mask = dict(train.get("mask", {}))
    contrastive = dict(train.get("contrastive", {}))

    def put(target, key, value):
        if value is not None:
            target[key] = value

    put(train, "lr", getattr(args, "lr", None))
    put(train, "batch_size", getattr(args, "batch_size", None))
    put(train, "max_epochs", getattr(args, "epochs", None))
    put(train, "patience", getattr(args, "patience", None))
    put(train, "dropout", getattr(args, "dropout", None))
    put(train, "objective", getattr(args, "objective", None))
    put(train, "seed", getattr(args, "seed", None))
    put(mask, "p_mask", getattr(args, "mask_rate", None))
    put(contrastive, "k", getattr(args, "k", None))
    put(contrastive, "q", getattr(args, "q", None))
    put(contrastive, "tau", getattr(args, "tau", None))
    put(embedder, "pooling", getattr(args, "pooling", None))
    put(embedder, "model_dim", getattr(args, "model_dim", None))
    put(encoder, "model_dim", getattr(args, "model_dim", None))
    put(encoder, "num_layers", getattr(args, "layers", None))
    put(encoder, "num_heads", getattr(args, "heads", None))
    put(encoder, "ffn_hidden", getattr(args, "ffn_hidden", None))
    put(provider, "dim", getattr(args, "provider_dim", None))

    train.setdefault("seed", default_seed())
    if mask:
        train["mask"] = mask
    if contrastive:
        train["contrastive"] = contrastive
    if provider:
        embedder["provider"] = provider
    if embedder:
        model["embedder"] = embedder
    if encoder:
        model["encoder"] = encoder
    return {"model": model, "train": train}


def resolve(args, objective: str | None = None) -> tuple[ModelConfig, TrainConfig, dict]:
    raw = _apply_overrides(args, load_config_file(getattr(args, "config", None)))
    if objective is not None:
        raw["train"]["objective"] = raw["train"].get("objective", objective)
    model_config = model_config_from(raw["model"])
    train_config = train_config_from(raw["train"])
    resolved = {
        "command": args.command,
        "model": dataclasses.asdict(model_config),
        "train": dataclasses.asdict(train_config),
    }
    return model_config, train_config, resolved


def write_resolved(out_stem: Path, resolved: dict, extra: dict | None = None) -> Path:
    payload = dict(resolved)
    if extra:
        payload.update(extra)
    path = out_stem.parent / (out_stem.name + ".config.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(stable_json(payload) + "\n")
    return path


def _load_corpus(corpus_dir: str):
    pairs = discover_corpus(corpus_dir)
    if not pairs:
        raise DataError(f"no tables found in {corpus_dir}")
    return [load_table(csv, manifest) for csv, manifest in pairs]


# -------------------------------------------------------------- commands


def cmd_curate(args) -> int:
    policy_raw = load_config_file(args.config).get("curation", {})
    policy = _build(CurationPolicy, policy_raw, "curation")
    pairs = discover_corpus(args.corpus_dir)
    if not pairs:
        raise DataError(f"no tables found in {args.corpus_dir}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kept = 0
    with RunLog(out_dir / "curation.log.jsonl") as log:
        for csv_path, manifest_path in pairs:
            table = load_table(csv_path, manifest_path)
            result = curate(table, policy)
            if not result.kept:
                log.log("discarded", {"table": table.name, "code": result.code,
                                      "reason": result.reason})
                print(f"discard {table.name}: {result.reason}")
                continue
            cleaned = feature_importance_prune(result.table, policy) \
                if result.table.n_features > policy.max_features_before_prune \
                else result.table
            save_table(cleaned, out_dir / f"{table.name}.csv",
                       out_dir / f"{table.name}.json")
            log.log("kept", {"table": table.name,
                             "n_features": cleaned.n_features})
            print(f"keep    {table.name}: {cleaned.n_features} features, "
                  f"{cleaned.n_rows} rows")
            kept += 1
    print(f"{kept}/{len(pairs)} tables kept -> {out_dir}")
    if kept == 0:
        raise DataError("no tables survived curation")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    model_config, train_config, resolved = resolve(args, objective="mtm")
    if train_config.objective not in ("mtm", "supcon"):
        raise ConfigError(f"pretraining objective must be mtm or supcon, "
                          f"got '{train_config.objective}'")
    corpus = _load_corpus(args.corpus_dir)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_resolved(out, resolved, {"corpus_dir": args.corpus_dir})
    with RunLog(out.parent / (out.name + ".log.jsonl")) as log:
        train_fn = pretrain_mtm if train_config.objective == "mtm" else pretrain_supcon
        result = train_fn(corpus, train_config, model_config, log=log)
    save_checkpoint(out, result.checkpoint)
    print(f"checkpoint -> {out} (best epoch {result.best_epoch}, "
          f"loss {result.best_loss:.4f})")
    return EXIT_OK


def cmd_finetune(args) -> int:
    model_config, train_config, resolved = resolve(args, objective="finetune")
    dataset = load_table(args.data, args.manifest)
    start = load_checkpoint(args.checkpoint) if args.checkpoint else None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_resolved(out, resolved, {"data": args.data, "checkpoint": args.checkpoint})
    with RunLog(out.parent / (out.name + ".log.jsonl")) as log:
        result = finetune(start, dataset, train_config,
                          model_config=None if start else model_config, log=log)
    from .checkpoint import checkpoint_from_model

    save_checkpoint(out, checkpoint_from_model(result.model, {
        "objective": "finetune", "best_epoch": result.best_epoch,
        "val_auc": result.best_val_auc, "seed": train_config.seed,
    }))
    print(f"checkpoint -> {out}")
    print(f"best validation AUC {result.best_val_auc:.4f} "
          f"(epoch {result.best_epoch}, ran {result.epochs_run})")
    return EXIT_OK


def _eval_command(args, fewshot: int | None) -> int:
    model_config, train_config, resolved = resolve(args, objective="finetune")
    dataset = load_table(args.data, args.manifest)
    start = load_checkpoint(args.checkpoint) if args.checkpoint else None
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    write_resolved(report_path, resolved,
                   {"data": args.data, "checkpoint": args.checkpoint,
                    "fewshot": fewshot})
    with RunLog(report_path.parent / (report_path.name + ".log.jsonl")) as log:
        report = kfold_eval(dataset, train_config, start=start,
                            model_config=None if start else model_config,
                            fewshot=fewshot, log=log)
    report_path.write_text(report.to_text())
    plot_path = report_path.parent / (report_path.name + ".plot.jsonl")
    plot_path.write_text(report.plot_data())
    print(report.to_text(include_timing=True), end="")
    print(f"report -> {report_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    return _eval_command(args, fewshot=args.fewshot)


def cmd_fewshot(args) -> int:
    return _eval_command(args, fewshot=args.shots)


def cmd_sweep(args) -> int:
    model_config, train_config, resolved = resolve(args, objective="mtm")
    try:
        if args.axis == "k":
            values = [int(v) for v in args.values.split(",") if v.strip()]
        else:
            values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad sweep values '{args.values}': {exc}") from exc
    if not values:
        raise ConfigError("empty sweep value list")
    corpus = _load_corpus(args.corpus_dir)
    downstream = [load_table(args.data, args.manifest)]
    finetune_config = dataclasses.replace(
        train_config, objective="finetune",
        max_epochs=args.finetune_epochs, patience=train_config.patience,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_resolved(out, resolved,
                   {"axis": args.axis, "values": values, "shots": args.shots,
                    "corpus_dir": args.corpus_dir, "data": args.data})
    with RunLog(out.parent / (out.name + ".log.jsonl")) as log:
        result = run_sweep(args.axis, values, corpus, downstream, train_config,
                           finetune_config, model_config, shots=args.shots, log=log)
    out.write_text(result.to_table())
    plot_path = out.parent / (out.name + ".plot.jsonl")
    plot_path.write_text(result.plot_data())
    print(result.to_table(), end="")
    print(f"sweep table -> {out}")
    return EXIT_OK


# -------------------------------------------------------------- wiring


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int, default=None,
                   help="run seed (default: TABPHRASE_SEED or 0)")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--dropout", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--mask-rate", type=float, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--q", type=float, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--pooling", choices=POOLING_STRATEGIES, default=None)
    p.add_argument("--model-dim", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--ffn-hidden", type=int, default=None)
    p.add_argument("--provider-dim", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabphrase",
        description="Cross-table pre-training for tabular classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curate", help="screen and normalize a corpus of CSV tables")
    p.add_argument("--corpus-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="JSON config with a 'curation' section")
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("pretrain", help="pre-train an encoder on a curated corpus")
    p.add_argument("--corpus-dir", required=True)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--objective", choices=("mtm", "supcon"), default=None)
    _add_train_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune on one labeled table")
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", help="start from this checkpoint (else from scratch)")
    p.add_argument("--out", required=True, help="fine-tuned checkpoint output path")
    _add_train_flags(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="5-fold evaluation protocol")
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--report", required=True, help="report output path")
    p.add_argument("--fewshot", type=int, default=None,
                   help="restrict each fold's training set to N rows per class")
    _add_train_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fewshot", help="5-fold evaluation in few-shot mode")
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--report", required=True)
    p.add_argument("--shots", type=int, required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_fewshot)

    p = sub.add_parser("sweep", help="pretrain + transfer once per axis value")
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--corpus-dir", required=True, help="pre-training corpus")
    p.add_argument("--data", required=True, help="downstream table CSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="sweep table output path")
    p.add_argument("--shots", type=int, default=5)
    p.add_argument("--finetune-epochs", type=int, default=60)
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, NanProduced) as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
