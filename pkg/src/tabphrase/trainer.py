"""Training loops: masked-reconstruction pre-training, contrastive
pre-training, and supervised fine-tuning with early stopping.

Batching policy: every batch is drawn from a single table. Column counts vary
across tables, so mixing would force padding, and contrastive labels are only
comparable within one table. Tables are visited in a shuffled order each
epoch.

Pre-training selects the epoch with the lowest mean training loss (no
validation labels are assumed to exist); fine-tuning selects by validation
AUC and restores the best epoch's weights.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import Checkpoint, checkpoint_from_model, model_from_checkpoint
from .errors import ConfigError, DataError, TrainingError
from .ingest import TableDataset
from .model import PRETRAIN_HEAD_PREFIXES, ModelConfig, TableModel
from .numcore import Adam, Tensor, backward, clip_global_norm
from .numcore import tensor as T
from .objectives import (
    ContrastiveConfig,
    MaskConfig,
    mtm_loss,
    sample_mask_batch,
    sample_subsets,
    supcon_loss,
)
from .utils import derive_seed, rng_for, sha256_hex, stable_json

OBJECTIVES = ("mtm", "supcon", "finetune")


@dataclass
class TrainConfig:
    objective: str = "mtm"
    lr: float = 1e-4
    batch_size: int = 128
    max_epochs: int = 500
    patience: int = 20  # fine-tuning only
    seed: int = 0
    dropout: bool = True
    clip_norm: float = 5.0
    val_fraction: float = 0.2
    mask: MaskConfig = field(default_factory=MaskConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective '{self.objective}'")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.objective == "supcon" and self.batch_size < 2:
            raise ConfigError("supcon needs batch_size >= 2")
        if self.max_epochs < 0:
            raise ConfigError(f"max_epochs must be non-negative, got {self.max_epochs}")


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict]
    best_epoch: int
    best_loss: float


@dataclass
class FinetuneResult:
    model: TableModel
    best_val_auc: float
    best_epoch: int
    epochs_run: int
    history: list[dict]
    optimized_names: list[str]


def corpus_digest(tables: list[TableDataset]) -> str:
    summary = [
        {"name": t.name, "n_rows": t.n_rows,
         "columns": [(c.name, c.kind) for c in t.schema]}
        for t in tables
    ]
    return sha256_hex(stable_json(summary).encode("utf-8"))


def snapshot_params(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in params.items()}


def restore_params(params: dict[str, Tensor], snap: dict[str, np.ndarray]) -> None:
    for k, p in params.items():
        p.data = snap[k].copy()


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood; labels are 1-based class ids."""
    b, t = logits.shape
    idx = np.asarray(labels, dtype=np.int64) - 1
    if idx.min() < 0 or idx.max() >= t:
        raise DataError(f"label out of range for {t} classes")
    onehot = np.zeros((b, t), dtype=logits.data.dtype)
    onehot[np.arange(b), idx] = 1.0
    lp = T.log_softmax(logits)
    return T.mul(T.sum_(T.mul(lp, Tensor(onehot, op="const"))),
                 Tensor(np.array(-1.0 / b, dtype=logits.data.dtype)))


def stratified_split(labels: np.ndarray, fraction: float,
                     seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-class split; each class with >= 2 members lands at least one row on
    each side. Returns (larger_part, smaller_part) as sorted index arrays."""
    labels = np.asarray(labels)
    hold, keep = [], []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        members = members[rng_for(seed, "split", int(cls)).permutation(len(members))]
        n_hold = int(round(fraction * len(members)))
        if len(members) >= 2:
            n_hold = min(max(n_hold, 1), len(members) - 1)
        else:
            n_hold = 0
        hold.extend(members[:n_hold].tolist())
        keep.extend(members[n_hold:].tolist())
    return np.array(sorted(keep), dtype=np.int64), np.array(sorted(hold), dtype=np.int64)


def _batches(n_rows: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n_rows)
    for start in range(0, n_rows, batch_size):
        yield order[start:start + batch_size]


def _grad_step(opt: Adam, loss: Tensor, clip_norm: float) -> float:
    opt.zero_grad()
    backward(loss, params=list(opt.params.values()))
    norm = clip_global_norm({k: p.grad for k, p in opt.params.items()}, clip_norm)
    opt.step()
    return norm


def _finish_pretrain(model: TableModel, config: TrainConfig, objective: str,
                     corpus: list[TableDataset], history: list[dict],
                     best_epoch: int, best_loss: float,
                     best_snap: dict[str, np.ndarray]) -> TrainResult:
    restore_params(model.params, best_snap)
    provenance = {
        "objective": objective,
        "epochs": len(history),
        "best_epoch": best_epoch,
        "corpus_digest": corpus_digest(corpus),
        "seed": config.seed,
        "lr": config.lr,
        "batch_size": config.batch_size,
    }
    return TrainResult(checkpoint=checkpoint_from_model(model, provenance),
                       history=history, best_epoch=best_epoch, best_loss=best_loss)


def _usable_tables(corpus: list[TableDataset], log=None) -> list[TableDataset]:
    if not corpus:
        raise DataError("empty corpus")
    usable = []
    for t in corpus:
        if t.n_features < 2:
            if log is not None:
                log.log("table_skipped", {"table": t.name, "n_features": t.n_features})
            continue
        usable.append(t)
    if not usable:
        raise DataError("no table has at least 2 features")
    return usable


def pretrain_mtm(corpus: list[TableDataset], config: TrainConfig,
                 model_config: ModelConfig | None = None, log=None) -> TrainResult:
    """Masked-reconstruction pre-training; labels are never read."""
    usable = _usable_tables(corpus, log)
    model = TableModel.build(usable, model_config or ModelConfig(), seed=config.seed)
    opt = Adam(model.trainable(), lr=config.lr)
    kinds = {id(t): model.embedder.kind_order(t) for t in usable}

    best_snap = snapshot_params(model.params)
    best_loss, best_epoch = float("inf"), -1
    history: list[dict] = []
    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        table_order = rng_for(config.seed, "tables", epoch).permutation(len(usable))
        total, count = 0.0, 0
        for ti in table_order:
            table = usable[ti]
            rng = rng_for(config.seed, "rows", epoch, int(ti))
            for bi, rows in enumerate(_batches(table.n_rows, config.batch_size, rng)):
                step_seed = derive_seed(config.seed, "mtm", epoch, int(ti), bi)
                masks = sample_mask_batch(
                    len(rows), kinds[id(table)], config.mask, rng_for(step_seed, "mask")
                )
                _, feats = model.masked_forward(
                    table, rows, masks, train=config.dropout, seed=step_seed
                )
                loss = mtm_loss(
                    feats, masks, kinds[id(table)],
                    model.embedder.numeric_matrix(table, rows),
                    model.embedder.target_matrix(table, rows),
                    model.mtm_heads(), masked_only=config.mask.masked_only,
                )
                _grad_step(opt, loss, config.clip_norm)
                total += float(loss.data) * len(rows)
                count += len(rows)
        epoch_loss = total / count
        history.append({"epoch": epoch, "loss": epoch_loss,
                        "seconds": time.perf_counter() - t0})
        if log is not None:
            log.log("mtm_epoch", history[-1])
        if epoch_loss < best_loss:
            best_loss, best_epoch = epoch_loss, epoch
            best_snap = snapshot_params(model.params)
    return _finish_pretrain(model, config, "mtm", usable, history,
                            best_epoch, best_loss, best_snap)


def pretrain_supcon(corpus: list[TableDataset], config: TrainConfig,
                    model_config: ModelConfig | None = None, log=None) -> TrainResult:
    """Contrastive pre-training over same-label feature subsets."""
    for t in corpus:
        if t.labels is None:
            raise DataError(f"table '{t.name}' has no labels; contrastive "
                            "pre-training needs them")
    usable = _usable_tables(corpus, log)
    model = TableModel.build(usable, model_config or ModelConfig(), seed=config.seed)
    opt = Adam(model.trainable(), lr=config.lr)

    best_snap = snapshot_params(model.params)
    best_loss, best_epoch = float("inf"), -1
    history: list[dict] = []
    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        table_order = rng_for(config.seed, "tables", epoch).permutation(len(usable))
        total, count, skipped = 0.0, 0, 0
        for ti in table_order:
            table = usable[ti]
            rng = rng_for(config.seed, "rows", epoch, int(ti))
            for bi, rows in enumerate(_batches(table.n_rows, config.batch_size, rng)):
                step_seed = derive_seed(config.seed, "supcon", epoch, int(ti), bi)
                row_labels = table.labels[rows]
                if len(np.unique(row_labels)) < 2:
                    skipped += 1
                    continue
                sub_rng = rng_for(step_seed, "subsets")
                samples = []
                for r in rows:
                    samples.extend(sample_subsets(
                        table.n_features, int(r), int(table.labels[r]),
                        config.contrastive, sub_rng,
                    ))
                expanded = np.repeat(np.asarray(rows), config.contrastive.k)
                h = model.encode_subsets(
                    table, expanded, [s.features for s in samples],
                    train=config.dropout, seed=step_seed,
                )
                z = model.contrastive_projection(h)
                loss = supcon_loss(z, np.array([s.label for s in samples]),
                                   config.contrastive)
                _grad_step(opt, loss, config.clip_norm)
                total += float(loss.data)
                count += 1
        if count == 0:
            raise TrainingError("every batch was skipped (single-label batches); "
                                "increase batch_size or check labels")
        epoch_loss = total / count
        history.append({"epoch": epoch, "loss": epoch_loss, "skipped_batches": skipped,
                        "seconds": time.perf_counter() - t0})
        if log is not None:
            log.log("supcon_epoch", history[-1])
        if epoch_loss < best_loss:
            best_loss, best_epoch = epoch_loss, epoch
            best_snap = snapshot_params(model.params)
    return _finish_pretrain(model, config, "supcon", usable, history,
                            best_epoch, best_loss, best_snap)


def finetune(start: Checkpoint | None, dataset: TableDataset, config: TrainConfig,
             model_config: ModelConfig | None = None,
             train_indices: np.ndarray | None = None,
             val_indices: np.ndarray | None = None, log=None) -> FinetuneResult:
    """Supervised fine-tuning of a fresh task head on h^CLS.

    Pre-training heads are dropped before the optimizer is built; the result
    records exactly which parameters were optimized so callers can audit that
    no discarded head was touched.
    """
    from .eval import auc

    if dataset.labels is None:
        raise DataError(f"table '{dataset.name}' has no labels")
    n_classes = dataset.n_classes
    if n_classes < 2:
        raise DataError(f"need at least 2 classes, got {n_classes}")

    if start is not None:
        model = model_from_checkpoint(start, seed=config.seed)
        model.drop_pretraining_heads()
        model.embedder.extend_vocab([dataset])
    else:
        model = TableModel.build([dataset], model_config or ModelConfig(),
                                 seed=config.seed, with_pretrain_heads=False)
    model.attach_task_head(n_classes, seed=config.seed)

    if train_indices is None or val_indices is None:
        train_indices, val_indices = stratified_split(
            dataset.labels, config.val_fraction, derive_seed(config.seed, "valsplit")
        )
    train_indices = np.asarray(train_indices, dtype=np.int64)
    val_indices = np.asarray(val_indices, dtype=np.int64)
    if len(train_indices) == 0 or len(val_indices) == 0:
        raise DataError("empty train or validation split")

    opt = Adam(model.trainable(exclude_prefixes=PRETRAIN_HEAD_PREFIXES), lr=config.lr)
    optimized = sorted(opt.params)
    assert not any(n.startswith(PRETRAIN_HEAD_PREFIXES) for n in optimized)

    def val_auc() -> float:
        proba = model.predict_proba(dataset, val_indices)
        return auc(proba, dataset.labels[val_indices])

    initial_auc = val_auc()
    best_snap = snapshot_params(model.params)
    # The untrained head can score a perfect AUC on a tiny validation split;
    # never return it as "best" unless no epochs were requested at all.
    best_auc, best_epoch, since_best = float("-inf"), -1, 0
    history: list[dict] = [{"epoch": -1, "val_auc": initial_auc}]
    epochs_run = 0
    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        rng = rng_for(config.seed, "finetune", epoch)
        total, count = 0.0, 0
        for bi, pos in enumerate(_batches(len(train_indices), config.batch_size, rng)):
            rows = train_indices[pos]
            step_seed = derive_seed(config.seed, "ft", epoch, bi)
            logits = model.logits(dataset, rows, train=config.dropout, seed=step_seed)
            loss = cross_entropy(logits, dataset.labels[rows])
            _grad_step(opt, loss, config.clip_norm)
            total += float(loss.data) * len(rows)
            count += len(rows)
        epochs_run = epoch + 1
        current = val_auc()
        history.append({"epoch": epoch, "train_loss": total / count,
                        "val_auc": current, "seconds": time.perf_counter() - t0})
        if log is not None:
            log.log("finetune_epoch", history[-1])
        if current > best_auc:
            best_auc, best_epoch, since_best = current, epoch, 0
            best_snap = snapshot_params(model.params)
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    restore_params(model.params, best_snap)
    if best_epoch < 0:
        best_auc = initial_auc
    return FinetuneResult(model=model, best_val_auc=best_auc, best_epoch=best_epoch,
                          epochs_run=epochs_run, history=history,
                          optimized_names=optimized)
