"""Hyperparameter sweeps and the pooling ablation harness.

A sweep runs one full pretrain + few-shot transfer cycle per axis value on
the synthetic table family and reports downstream AUC per value. The pooling
ablation fine-tunes the same dataset once per pooling strategy and emits a
comparison table; it asserts nothing about ordering.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from .checkpoint import Checkpoint
from .embedder import POOLING_STRATEGIES
from .errors import ConfigError
from .eval import FewShotSpec, auc, fewshot_sample
from .ingest import TableDataset
from .model import ModelConfig
from .trainer import TrainConfig, finetune, pretrain_mtm, pretrain_supcon, stratified_split
from .utils import derive_seed, stable_json

SWEEP_AXES = ("mask_rate", "k", "lr")


def fewshot_transfer(start: Checkpoint | None, table: TableDataset,
                     config: TrainConfig, shots: int, seed: int,
                     model_config: ModelConfig | None = None) -> float:
    """Fine-tune on `shots` rows per class, score the remaining pool."""
    subset, pool = fewshot_sample(table, FewShotSpec(shots=shots, seed=seed))
    result = finetune(start, subset, dataclasses.replace(config, seed=seed),
                      model_config=model_config)
    proba = result.model.predict_proba(pool, np.arange(pool.n_rows))
    return auc(proba, pool.labels)


@dataclass
class SweepResult:
    axis: str
    records: list[dict]

    def to_table(self) -> str:
        header = f"{self.axis:>10}  {'mean_auc':>9}  {'pretrain_loss':>13}  {'seconds':>8}"
        lines = [header, "-" * len(header)]
        for rec in self.records:
            lines.append(
                f"{rec['value']:>10g}  {rec['mean_auc']:>9.4f}  "
                f"{rec['pretrain_loss']:>13.4f}  {rec['seconds']:>8.1f}"
            )
        return "\n".join(lines) + "\n"

    def plot_data(self) -> str:
        return "\n".join(stable_json(rec) for rec in self.records) + "\n"

    def auc_at(self, value: float) -> float:
        for rec in self.records:
            if rec["value"] == value:
                return rec["mean_auc"]
        raise KeyError(value)


def _apply_axis(axis: str, value, pretrain: TrainConfig) -> TrainConfig:
    if axis == "mask_rate":
        return dataclasses.replace(
            pretrain, mask=dataclasses.replace(pretrain.mask, p_mask=float(value))
        )
    if axis == "k":
        return dataclasses.replace(
            pretrain, objective="supcon",
            contrastive=dataclasses.replace(pretrain.contrastive, k=int(value)),
        )
    if axis == "lr":
        return dataclasses.replace(pretrain, lr=float(value))
    raise ConfigError(f"unknown sweep axis '{axis}'")


def run_sweep(axis: str, values, pretrain_tables: list[TableDataset],
              downstream_tables: list[TableDataset], pretrain_config: TrainConfig,
              finetune_config: TrainConfig, model_config: ModelConfig | None = None,
              shots: int = 5, log=None) -> SweepResult:
    """One pretrain + transfer evaluation per value, sorted by value."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis '{axis}'; choose from {SWEEP_AXES}")
    values = sorted(set(values))
    if not values:
        raise ConfigError("empty sweep value list")
    records = []
    for value in values:
        t0 = time.perf_counter()
        cfg = _apply_axis(axis, value, pretrain_config)
        train_fn = pretrain_supcon if cfg.objective == "supcon" else pretrain_mtm
        result = train_fn(pretrain_tables, cfg, model_config, log=log)
        per_table = [
            fewshot_transfer(
                result.checkpoint, table, finetune_config, shots,
                seed=derive_seed(finetune_config.seed, axis, str(value), i),
            )
            for i, table in enumerate(downstream_tables)
        ]
        records.append({
            "value": float(value) if axis != "k" else int(value),
            "mean_auc": float(np.mean(per_table)),
            "per_table_auc": [float(a) for a in per_table],
            "pretrain_loss": result.best_loss,
            "seconds": time.perf_counter() - t0,
        })
        if log is not None:
            log.log("sweep_point", records[-1])
    return SweepResult(axis=axis, records=records)


@dataclass
class AblationResult:
    records: list[dict]

    def to_table(self) -> str:
        header = f"{'pooling':>16}  {'test_auc':>8}  {'val_auc':>8}  {'seconds':>8}"
        lines = [header, "-" * len(header)]
        for rec in self.records:
            lines.append(
                f"{rec['pooling']:>16}  {rec['test_auc']:>8.4f}  "
                f"{rec['val_auc']:>8.4f}  {rec['seconds']:>8.1f}"
            )
        return "\n".join(lines) + "\n"


def pooling_ablation(table: TableDataset, train_config: TrainConfig,
                     model_config: ModelConfig,
                     strategies: tuple[str, ...] = POOLING_STRATEGIES,
                     test_fraction: float = 0.3, log=None) -> AblationResult:
    """Fine-tune the same dataset once per pooling strategy.

    Every strategy sees the same train/test split and budget; the result is a
    comparison table, not a verdict.
    """
    for s in strategies:
        if s not in POOLING_STRATEGIES:
            raise ConfigError(f"unknown pooling strategy '{s}'")
    train_rows, test_rows = stratified_split(
        table.labels, test_fraction, derive_seed(train_config.seed, "ablation-split")
    )
    train_table = table.subset_rows(train_rows)
    records = []
    for strategy in strategies:
        t0 = time.perf_counter()
        cfg = dataclasses.replace(
            model_config,
            embedder=dataclasses.replace(model_config.embedder, pooling=strategy),
        )
        result = finetune(None, train_table, train_config, model_config=cfg)
        proba = result.model.predict_proba(table, test_rows)
        records.append({
            "pooling": strategy,
            "test_auc": float(auc(proba, table.labels[test_rows])),
            "val_auc": float(result.best_val_auc),
            "epochs": result.epochs_run,
            "seconds": time.perf_counter() - t0,
        })
        if log is not None:
            log.log("ablation_point", records[-1])
    return AblationResult(records=records)
