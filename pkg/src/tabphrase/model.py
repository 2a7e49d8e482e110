"""Model composition: token embedder + set encoder + objective heads under one
named parameter store.

Parameter name prefixes partition ownership:
  embedder.*   token table, projection, pooling query
  encoder.*    attention blocks, layer norms, shared feed-forward, CLS
  mtm.*        reconstruction heads (pre-training only)
  supcon.*     contrastive projection (pre-training only)
  task.*       linear classifier attached at fine-tuning time

The pre-training prefixes are dropped wholesale before fine-tuning; the audit
in the trainer checks the optimizer never touches them afterwards.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .embedder import (
    EmbedderConfig,
    FeatureEmbedder,
    ProviderConfig,
    TokenVocab,
    build_vocab,
)
from .encoder import EncoderConfig, encode, init_encoder_params
from .errors import ConfigError, ShapeMismatch
from .ingest import TableDataset
from .numcore import Tensor
from .numcore import tensor as T
from .objectives import MtmHeads, apply_mask
from .utils import derive_seed

PRETRAIN_HEAD_PREFIXES = ("mtm.", "supcon.")


@dataclass
class ModelConfig:
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if self.embedder.model_dim != self.encoder.model_dim:
            raise ConfigError(
                f"embedder model_dim {self.embedder.model_dim} != "
                f"encoder model_dim {self.encoder.model_dim}"
            )


def config_to_dict(config: ModelConfig) -> dict:
    return dataclasses.asdict(config)


def config_from_dict(raw: dict) -> ModelConfig:
    emb = dict(raw["embedder"])
    emb["provider"] = ProviderConfig(**emb["provider"])
    return ModelConfig(embedder=EmbedderConfig(**emb),
                       encoder=EncoderConfig(**raw["encoder"]))


class TableModel:
    """A parameter store plus the forward passes the objectives need."""

    def __init__(self, config: ModelConfig, vocab: TokenVocab,
                 params: dict[str, Tensor], seed: int = 0):
        self.config = config
        self.vocab = vocab
        self.params = params
        self.seed = seed
        self.embedder = FeatureEmbedder(config.embedder, vocab, params)

    # -- construction -------------------------------------------------------
    @classmethod
    def build(cls, tables: list[TableDataset], config: ModelConfig,
              seed: int = 0, with_pretrain_heads: bool = True) -> "TableModel":
        vocab = build_vocab(tables, config.embedder.phrase_template)
        d = config.encoder.model_dim
        params = FeatureEmbedder.init_params(config.embedder, vocab, seed=seed)
        params.update(init_encoder_params(config.encoder, seed=seed))
        if with_pretrain_heads:
            params.update(MtmHeads.init_params(d, seed=seed))
            rng = np.random.default_rng(derive_seed(seed, "supcon", "proj"))
            params["supcon.proj"] = Tensor(
                (rng.standard_normal((d, d)) / np.sqrt(d)).astype(np.float32),
                requires_grad=True, name="supcon.proj",
            )
        return cls(config, vocab, params, seed=seed)

    # -- parameter bookkeeping ----------------------------------------------
    def trainable(self, exclude_prefixes: tuple[str, ...] = ()) -> dict[str, Tensor]:
        return {
            name: p for name, p in sorted(self.params.items())
            if p.requires_grad and not name.startswith(exclude_prefixes)
        }

    def drop_pretraining_heads(self) -> list[str]:
        dropped = [n for n in self.params if n.startswith(PRETRAIN_HEAD_PREFIXES)]
        for n in dropped:
            del self.params[n]
        return sorted(dropped)

    def attach_task_head(self, n_classes: int, seed: int | None = None) -> None:
        if n_classes < 2:
            raise ConfigError(f"task head needs at least 2 classes, got {n_classes}")
        seed = self.seed if seed is None else seed
        d = self.config.encoder.model_dim
        rng = np.random.default_rng(derive_seed(seed, "task", "w"))
        self.params["task.w"] = Tensor(
            (rng.standard_normal((d, n_classes)) / np.sqrt(d)).astype(np.float32),
            requires_grad=True, name="task.w",
        )
        self.params["task.b"] = Tensor(
            np.zeros((1, n_classes), dtype=np.float32), requires_grad=True, name="task.b"
        )

    def mtm_heads(self) -> MtmHeads:
        return MtmHeads.from_params(self.params)

    # -- forward passes ------------------------------------------------------
    def forward_rows(self, table: TableDataset, row_indices, train: bool = False,
                     seed: int = 0, exact: bool = False) -> tuple[Tensor, Tensor]:
        """(h_cls (B, d), per-position outputs (B, n, d)) for full rows.

        Pooled strategies emit one position per feature. The unpooled strategy
        emits one position per phrase token and can only batch rows whose
        sequences share a length.
        """
        headers = self.embedder.header_embeddings(table, exact)
        if self.config.embedder.pooling == "none":
            seqs, length = [], None
            for r in np.asarray(row_indices, dtype=np.int64):
                seq, _ = self.embedder.encode_tokens(table, int(r), exact=exact,
                                                     headers=headers)
                if length is None:
                    length = seq.shape[0]
                elif seq.shape[0] != length:
                    raise ConfigError(
                        "token-level batching needs equal-length rows; got "
                        f"{seq.shape[0]} and {length} positions"
                    )
                seqs.append(T.reshape(seq, (1,) + seq.shape))
            e = T.concat(seqs, axis=0)
        else:
            e = self.embedder.encode_batch(table, row_indices, exact, headers=headers)
        return encode(e, self.params, self.config.encoder,
                      train=train, seed=seed, exact=exact)

    def masked_forward(self, table: TableDataset, row_indices, masks: np.ndarray,
                       train: bool = False, seed: int = 0,
                       exact: bool = False) -> tuple[Tensor, Tensor]:
        """Forward with masked positions replaced by mask_token + header."""
        headers = self.embedder.header_embeddings(table, exact)
        e = self.embedder.encode_batch(table, row_indices, exact, headers=headers)
        e = apply_mask(e, masks, self.mtm_heads(), headers)
        return encode(e, self.params, self.config.encoder,
                      train=train, seed=seed, exact=exact)

    def encode_subsets(self, table: TableDataset, row_indices,
                       subsets: list[np.ndarray], train: bool = False,
                       seed: int = 0, exact: bool = False) -> Tensor:
        """CLS embeddings (len(subsets), d) of feature subsets of batch rows.

        subsets[s] indexes features of the row at batch position s (positions
        follow row_indices). Same-size subsets share an encoder call.
        """
        if len(subsets) != len(np.asarray(row_indices)):
            raise ShapeMismatch(
                "encode_subsets",
                f"{len(subsets)} subsets for {len(np.asarray(row_indices))} rows",
            )
        e_full = self.embedder.encode_batch(table, row_indices, exact)
        sizes = np.array([len(s) for s in subsets])
        h_parts, order = [], []
        for size in np.unique(sizes):
            group = np.flatnonzero(sizes == size)
            cols = np.stack([np.asarray(subsets[g], dtype=np.int64) for g in group])
            sub_e = T.gather_rows_cols(e_full, group, cols)
            h_cls, _ = encode(sub_e, self.params, self.config.encoder,
                              train=train, seed=derive_seed(seed, "subset", int(size)),
                              exact=exact)
            h_parts.append(h_cls)
            order.extend(group.tolist())
        h_all = T.concat(h_parts, axis=0)
        return T.take_rows(h_all, np.argsort(np.array(order)))

    def contrastive_projection(self, h_cls: Tensor, exact: bool = False) -> Tensor:
        return T.matmul(h_cls, self.params["supcon.proj"], exact_sum=exact)

    def logits(self, table: TableDataset, row_indices, train: bool = False,
               seed: int = 0, exact: bool = False) -> Tensor:
        if "task.w" not in self.params:
            raise ConfigError("no task head attached; call attach_task_head first")
        h_cls, _ = self.forward_rows(table, row_indices, train=train, seed=seed,
                                     exact=exact)
        return T.add(T.matmul(h_cls, self.params["task.w"], exact_sum=exact),
                     self.params["task.b"])

    def predict_proba(self, table: TableDataset, row_indices) -> np.ndarray:
        """(B, T) class probabilities, evaluation mode (dropout off)."""
        logits = self.logits(table, row_indices, train=False)
        return T.softmax(logits).data.copy()
