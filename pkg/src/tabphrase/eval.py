"""Metrics and protocols: ranking AUC, stratified 5-fold evaluation with an
inner validation split, and few-shot subset construction."""

from __future__ import annotations

import dataclasses
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .checkpoint import Checkpoint
from .errors import DataError
from .ingest import TableDataset
from .model import ModelConfig
from .trainer import TrainConfig, finetune
from .utils import config_digest, rng_for, stable_json


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their rank range."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _binary_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs at least one positive and one negative")
    ranks = average_ranks(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Probability that a random positive outranks a random negative, ties
    counting one half (the rank-sum estimator).

    1-D scores: binary labels, the larger label value is the positive class.
    2-D scores: one probability column per class id (1-based); the result is
    the macro average of one-vs-rest AUCs over classes present in labels.
    """
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if len(scores) != len(labels):
        raise DataError(f"{len(scores)} scores for {len(labels)} labels")
    present = np.unique(labels)
    if len(present) < 2:
        raise DataError("AUC undefined for single-class labels")
    if scores.ndim == 1:
        if len(present) != 2:
            raise DataError("1-D scores require binary labels")
        return _binary_auc(scores, labels == present.max())
    if scores.ndim != 2:
        raise DataError(f"scores must be 1-D or 2-D, got shape {scores.shape}")
    if present.min() < 1 or present.max() > scores.shape[1]:
        raise DataError(f"labels out of range for {scores.shape[1]} score columns")
    per_class = [_binary_auc(scores[:, cls - 1], labels == cls) for cls in present]
    return float(np.mean(per_class))


@dataclass
class FewShotSpec:
    shots: int
    seed: int = 0

    def __post_init__(self):
        if self.shots < 1:
            raise DataError(f"shots must be at least 1, got {self.shots}")


def fewshot_sample(dataset: TableDataset,
                   spec: FewShotSpec) -> tuple[TableDataset, TableDataset]:
    """Exactly `shots` rows per class without replacement; the remainder is
    returned as the evaluation pool."""
    if dataset.labels is None:
        raise DataError(f"table '{dataset.name}' has no labels")
    chosen: list[int] = []
    for cls in np.unique(dataset.labels):
        members = np.flatnonzero(dataset.labels == cls)
        if len(members) < spec.shots:
            name = dataset.label_vocab[int(cls) - 1]
            raise DataError(
                f"class '{name}' has {len(members)} rows, fewer than {spec.shots} shots"
            )
        picked = rng_for(spec.seed, "fewshot", int(cls)).choice(
            members, size=spec.shots, replace=False
        )
        chosen.extend(picked.tolist())
    chosen_sorted = sorted(chosen)
    rest = sorted(set(range(dataset.n_rows)) - set(chosen_sorted))
    return dataset.subset_rows(chosen_sorted), dataset.subset_rows(rest)


def stratified_kfold(labels: np.ndarray, folds: int = 5,
                     seed: int = 0) -> list[np.ndarray]:
    """Disjoint fold index arrays covering all rows; each class is dealt
    round-robin so folds stay class-balanced."""
    labels = np.asarray(labels)
    assignments = [[] for _ in range(folds)]
    offset = 0
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if len(members) < folds:
            warnings.warn(
                f"class {cls} has {len(members)} rows, fewer than {folds} folds; "
                "stratification is best-effort", stacklevel=2,
            )
        members = members[rng_for(seed, "kfold", int(cls)).permutation(len(members))]
        for i, row in enumerate(members):
            assignments[(i + offset) % folds].append(int(row))
        offset += len(members) % folds
    return [np.array(sorted(rows), dtype=np.int64) for rows in assignments]


@dataclass
class EvalReport:
    dataset: str
    mode: str
    fold_aucs: list[float]
    mean_auc: float
    fold_seeds: list[int]
    config_digest: str
    wall_clock: float
    fewshot: int | None = None
    histories: list[list[dict]] | None = None

    def to_text(self, include_timing: bool = False) -> str:
        """Key/value records; timing is off by default so identical runs yield
        byte-identical reports."""
        lines = [
            f"report.dataset {self.dataset}",
            f"report.mode {self.mode}",
            f"report.folds {len(self.fold_aucs)}",
        ]
        for i, (a, s) in enumerate(zip(self.fold_aucs, self.fold_seeds)):
            lines.append(f"report.fold.{i}.auc {a:.6f}")
            lines.append(f"report.fold.{i}.seed {s}")
        lines.append(f"report.mean_auc {self.mean_auc:.6f}")
        lines.append(f"report.fewshot {self.fewshot if self.fewshot else 0}")
        lines.append(f"report.config_digest {self.config_digest}")
        if include_timing:
            lines.append(f"report.wall_clock_s {self.wall_clock:.3f}")
        return "\n".join(lines) + "\n"

    def plot_data(self) -> str:
        """Per-epoch validation metric per fold, one record per line."""
        lines = []
        for i, hist in enumerate(self.histories or []):
            for rec in hist:
                lines.append(stable_json({"fold": i, **rec}))
        return "\n".join(lines) + ("\n" if lines else "")


def parse_report(text: str) -> dict:
    out: dict = {}
    for line in text.strip().splitlines():
        key, value = line.split(" ", 1)
        out[key] = value
    return out


def kfold_eval(dataset: TableDataset, train_config: TrainConfig,
               start: Checkpoint | None = None,
               model_config: ModelConfig | None = None, folds: int = 5,
               fewshot: int | None = None, log=None) -> EvalReport:
    """Stratified k-fold protocol: per fold, fine-tune on the training portion
    (optionally reduced to a few-shot subset) with an inner stratified
    validation split, then score the held-out fold."""
    if dataset.labels is None:
        raise DataError(f"table '{dataset.name}' has no labels")
    if dataset.n_rows < folds * dataset.n_classes:
        raise DataError(
            f"dataset has {dataset.n_rows} rows; k-fold needs at least "
            f"{folds * dataset.n_classes} ({folds} per class)"
        )
    t0 = time.perf_counter()
    fold_indices = stratified_kfold(dataset.labels, folds, seed=train_config.seed)
    fold_aucs, fold_seeds, histories = [], [], []
    from .utils import derive_seed

    for i, test_rows in enumerate(fold_indices):
        fold_seed = derive_seed(train_config.seed, "fold", i)
        train_rows = np.array(
            sorted(set(range(dataset.n_rows)) - set(test_rows.tolist())),
            dtype=np.int64,
        )
        fold_train = dataset.subset_rows(train_rows)
        if fewshot is not None:
            fold_train, _ = fewshot_sample(fold_train, FewShotSpec(fewshot, seed=fold_seed))
        fold_config = dataclasses.replace(train_config, seed=fold_seed)
        result = finetune(start, fold_train, fold_config,
                          model_config=model_config, log=log)
        proba = result.model.predict_proba(dataset, test_rows)
        fold_aucs.append(auc(proba, dataset.labels[test_rows]))
        fold_seeds.append(fold_seed)
        histories.append(result.history)
        if log is not None:
            log.log("fold_done", {"fold": i, "auc": fold_aucs[-1]})

    digest = config_digest({
        "train": dataclasses.asdict(train_config),
        "model": dataclasses.asdict(model_config) if model_config else None,
        "folds": folds,
        "fewshot": fewshot,
        "dataset": dataset.name,
        "start": None if start is None else start.provenance,
    })
    return EvalReport(
        dataset=dataset.name,
        mode="scratch" if start is None else
             f"pretrained:{start.provenance.get('objective', 'unknown')}",
        fold_aucs=fold_aucs, mean_auc=float(np.mean(fold_aucs)),
        fold_seeds=fold_seeds, config_digest=digest,
        wall_clock=time.perf_counter() - t0, fewshot=fewshot, histories=histories,
    )
