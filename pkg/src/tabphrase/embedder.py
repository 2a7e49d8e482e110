"""Cell embeddings: feature phrases, token vectors, pooling, header embeddings.

Every categorical cell is rendered as a phrase ("<column> is <value>"),
tokenized, looked up in a token-embedding table, and pooled into one vector
per feature. Numerical cells skip phrases entirely: their embedding is the
normalized value times the column's header embedding. Token embeddings come
from a deterministic provider (seeded hash vectors, or a lookup file of
externally computed vectors) and live in one trainable matrix so identical
tokens align across tables.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ShapeMismatch
from .ingest import KIND_CATEGORICAL, KIND_LABEL, KIND_NUMERICAL, TableDataset
from .numcore import Tensor
from .numcore import tensor as T
from .text import DEFAULT_PHRASE_TEMPLATE, build_phrase, tokenize

POOLING_STRATEGIES = ("average", "max", "self_attention", "none")


@dataclass
class ProviderConfig:
    mode: str = "hashed"  # hashed | lookup_file
    dim: int = 64
    seed: int = 0
    lookup_path: str | None = None


@dataclass
class EmbedderConfig:
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    model_dim: int = 128
    pooling: str = "average"
    phrase_template: str = DEFAULT_PHRASE_TEMPLATE
    # None: trainable iff provider mode is hashed
    trainable_tokens: bool | None = None

    def tokens_trainable(self) -> bool:
        if self.trainable_tokens is None:
            return self.provider.mode == "hashed"
        return self.trainable_tokens


@dataclass
class FeatureEmbedding:
    vector: np.ndarray
    column_index: int
    kind: str


class EmbeddingProvider:
    """Deterministic token -> vector source.

    hashed mode: the token string is hashed to seed a generator; the vector
    is unit-norm and identical across processes. lookup_file mode: vectors
    come from a text file ("<dim> <count>" header, then one token and dim
    floats per line); unlisted tokens fall back to hashed vectors.
    """

    def __init__(self, config: ProviderConfig):
        if config.mode not in ("hashed", "lookup_file"):
            raise ConfigError(f"unknown provider mode '{config.mode}'")
        self.config = config
        self._lookup: dict[str, np.ndarray] = {}
        if config.mode == "lookup_file":
            if not config.lookup_path:
                raise ConfigError("lookup_file mode requires lookup_path")
            self._load_lookup(config.lookup_path)

    def _load_lookup(self, path) -> None:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 2:
                raise DataError(f"{path}: malformed lookup header")
            dim, count = int(header[0]), int(header[1])
            if dim != self.config.dim:
                raise ConfigError(
                    f"lookup file dim {dim} != configured provider dim {self.config.dim}"
                )
            for line in fh:
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != dim + 1:
                    raise DataError(f"{path}: bad record for token '{parts[0]}'")
                self._lookup[parts[0]] = np.array([float(v) for v in parts[1:]], dtype=np.float32)
        if len(self._lookup) != count:
            raise DataError(f"{path}: header count {count} != {len(self._lookup)} records")

    def _hashed(self, token: str) -> np.ndarray:
        digest = hashlib.blake2b(
            f"{self.config.seed}:{token}".encode(), digest_size=8
        ).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        v = rng.standard_normal(self.config.dim).astype(np.float32)
        return v / np.linalg.norm(v)

    def vector(self, token: str) -> np.ndarray:
        if self.config.mode == "lookup_file" and token in self._lookup:
            return self._lookup[token]
        return self._hashed(token)


def write_lookup_file(path, vectors: dict[str, np.ndarray]) -> None:
    """Inverse of the lookup loader; used to export token tables."""
    dims = {len(v) for v in vectors.values()}
    if len(dims) != 1:
        raise ConfigError(f"inconsistent vector widths: {sorted(dims)}")
    dim = dims.pop()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{dim} {len(vectors)}\n")
        for token in sorted(vectors):
            values = " ".join(repr(float(x)) for x in vectors[token])
            fh.write(f"{token} {values}\n")


def pool(token_vectors: np.ndarray, strategy: str, query: np.ndarray | None = None):
    """Reference pooling over a (tokens, dim) array.

    The in-graph embedder mirrors these semantics; this version exists for
    direct calls and oracle tests. `none` returns the sequence unchanged.
    """
    vectors = np.asarray(token_vectors, dtype=np.float32)
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise ShapeMismatch("pool", f"need a non-empty (tokens, dim) array, got {vectors.shape}")
    if strategy == "average":
        return vectors.mean(axis=0)
    if strategy == "max":
        return vectors.max(axis=0)
    if strategy == "self_attention":
        if query is None:
            raise ConfigError("self_attention pooling needs a query vector")
        scores = vectors @ np.asarray(query, dtype=np.float32).reshape(-1)
        scores = scores / np.sqrt(vectors.shape[1])
        e = np.exp(scores - scores.max())
        return (e / e.sum()) @ vectors
    if strategy == "none":
        return vectors
    raise ConfigError(f"unknown pooling strategy '{strategy}'")


class TokenVocab:
    """Ordered token list with an index; extension preserves earlier ids."""

    def __init__(self, tokens: list[str] | None = None):
        self.tokens: list[str] = []
        self.index: dict[str, int] = {}
        if tokens:
            self.extend(tokens)

    def extend(self, tokens) -> int:
        added = 0
        for t in tokens:
            if t not in self.index:
                self.index[t] = len(self.tokens)
                self.tokens.append(t)
                added += 1
        return added

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index


def table_tokens(table: TableDataset, template: str = DEFAULT_PHRASE_TEMPLATE) -> list[str]:
    """Every token the embedder can need for a table, in deterministic order."""
    seen: dict[str, None] = {}
    for col in table.schema:
        if col.kind == KIND_LABEL:
            continue
        for tok in tokenize(col.name):
            seen.setdefault(tok)
        if col.kind == KIND_CATEGORICAL:
            for value in col.category_vocab or []:
                for tok in tokenize(build_phrase(col.name, value, template)):
                    seen.setdefault(tok)
                for tok in tokenize(value):
                    seen.setdefault(tok)
    return list(seen)


def build_vocab(tables, template: str = DEFAULT_PHRASE_TEMPLATE) -> TokenVocab:
    vocab = TokenVocab()
    for table in tables:
        vocab.extend(table_tokens(table, template))
    return vocab


class _TableCache:
    """Precomputed token ids and value arrays for one table's schema + rows."""

    def __init__(self, embedder: "FeatureEmbedder", table: TableDataset):
        self.columns = table.feature_columns
        self.header_ids: list[np.ndarray] = []
        self.cat_values: dict[int, list[str]] = {}
        self.cat_phrase_ids: dict[int, tuple[np.ndarray, np.ndarray, int]] = {}
        self.cat_value_only_ids: dict[int, tuple[np.ndarray, np.ndarray, int]] = {}
        self.cat_row_index: dict[int, np.ndarray] = {}
        self.num_values: dict[int, np.ndarray] = {}
        self.extra_rows: list[np.ndarray] = []
        self._extra_index: dict[str, int] = {}

        for j, col in enumerate(self.columns):
            self.header_ids.append(self._ids(embedder, tokenize(col.name)))
            if col.kind == KIND_NUMERICAL:
                values = np.array(
                    [float(row[col.name]) for row in table.rows], dtype=np.float32
                )
                bad = (values < -1e-6) | (values > 1.0 + 1e-6)
                if bad.any():
                    raise DataError(
                        f"column '{col.name}' has {int(bad.sum())} value(s) outside [0, 1]; "
                        "normalize the table first"
                    )
                self.num_values[j] = np.clip(values, 0.0, 1.0)
            else:
                distinct = list(dict.fromkeys(row[col.name] for row in table.rows))
                self.cat_values[j] = distinct
                value_pos = {v: i for i, v in enumerate(distinct)}
                self.cat_row_index[j] = np.array(
                    [value_pos[row[col.name]] for row in table.rows], dtype=np.int64
                )
                self.cat_phrase_ids[j] = self._segments(
                    embedder,
                    [tokenize(build_phrase(col.name, v, embedder.config.phrase_template))
                     for v in distinct],
                )
                self.cat_value_only_ids[j] = self._segments(
                    embedder, [tokenize(v) for v in distinct]
                )

    def _ids(self, embedder: "FeatureEmbedder", tokens: list[str]) -> np.ndarray:
        out = []
        for t in tokens:
            if t in embedder.vocab:
                out.append(embedder.vocab.index[t])
            else:
                # token unseen at vocabulary-build time: constant provider row
                if t not in self._extra_index:
                    self._extra_index[t] = len(self.extra_rows)
                    self.extra_rows.append(embedder.provider.vector(t))
                out.append(len(embedder.vocab) + self._extra_index[t])
        return np.array(out, dtype=np.int64)

    def _segments(self, embedder, token_lists):
        flat, seg = [], []
        for i, toks in enumerate(token_lists):
            ids = self._ids(embedder, toks)
            flat.extend(ids.tolist())
            seg.extend([i] * len(ids))
        return np.array(flat, dtype=np.int64), np.array(seg, dtype=np.int64), len(token_lists)


class FeatureEmbedder:
    """Graph-building embedder over one shared token table.

    Parameters contributed (by name):
      embedder.tokens      (vocab, provider_dim)
      embedder.proj        (provider_dim, model_dim)  only if dims differ
      embedder.pool_query  (provider_dim, 1)          only for self_attention
    """

    def __init__(self, config: EmbedderConfig, vocab: TokenVocab, params: dict[str, Tensor]):
        if config.pooling not in POOLING_STRATEGIES:
            raise ConfigError(f"unknown pooling strategy '{config.pooling}'")
        self.config = config
        self.vocab = vocab
        self.params = params
        self.provider = EmbeddingProvider(config.provider)
        self._caches: dict[int, _TableCache] = {}
        self.stats = {"empty_values": 0}

    # -- parameter construction --------------------------------------------
    @staticmethod
    def init_params(config: EmbedderConfig, vocab: TokenVocab,
                    seed: int = 0) -> dict[str, Tensor]:
        provider = EmbeddingProvider(config.provider)
        rows = np.stack([provider.vector(t) for t in vocab.tokens]) if len(vocab) else (
            np.zeros((0, config.provider.dim), dtype=np.float32)
        )
        params = {
            "embedder.tokens": Tensor(
                rows, requires_grad=config.tokens_trainable(), name="embedder.tokens"
            )
        }
        pdim, d = config.provider.dim, config.model_dim
        if pdim != d:
            rng = np.random.default_rng([seed, 101])
            params["embedder.proj"] = Tensor(
                (rng.standard_normal((pdim, d)) / np.sqrt(pdim)).astype(np.float32),
                requires_grad=True, name="embedder.proj",
            )
        if config.pooling == "self_attention":
            rng = np.random.default_rng([seed, 102])
            params["embedder.pool_query"] = Tensor(
                (rng.standard_normal((pdim, 1)) / np.sqrt(pdim)).astype(np.float32),
                requires_grad=True, name="embedder.pool_query",
            )
        return params

    def extend_vocab(self, tables) -> int:
        """Add unseen tokens from tables; new rows start at provider vectors."""
        before = len(self.vocab)
        for table in tables:
            self.vocab.extend(table_tokens(table, self.config.phrase_template))
        added = len(self.vocab) - before
        if added:
            new_rows = np.stack(
                [self.provider.vector(t) for t in self.vocab.tokens[before:]]
            )
            tok = self.params["embedder.tokens"]
            tok.data = np.concatenate([tok.data, new_rows], axis=0)
            self._caches.clear()
        return added

    # -- internals ----------------------------------------------------------
    def _cache(self, table: TableDataset) -> _TableCache:
        key = id(table)
        if key not in self._caches:
            self._caches[key] = _TableCache(self, table)
        return self._caches[key]

    def _token_source(self, cache: _TableCache) -> Tensor:
        tok = self.params["embedder.tokens"]
        if not cache.extra_rows:
            return tok
        extra = Tensor(np.stack(cache.extra_rows), op="const")
        return T.concat([tok, extra], axis=0)

    def _project(self, x: Tensor, exact: bool) -> Tensor:
        proj = self.params.get("embedder.proj")
        if proj is None:
            return x
        return T.matmul(x, proj, exact_sum=exact)

    def _pool_segments(self, source: Tensor, flat_ids, seg_ids, n_segments,
                       exact: bool) -> Tensor:
        """(n_segments, provider_dim) pooled embeddings, strategy-dependent."""
        strategy = self.config.pooling
        if strategy == "average" or strategy == "none":
            # headers under 'none' are still pooled; average is the default
            return T.segment_mean(T.take_rows(source, flat_ids), seg_ids, n_segments)
        parts = []
        for s in range(n_segments):
            rows = T.take_rows(source, flat_ids[seg_ids == s])
            if strategy == "max":
                parts.append(T.amax(rows, axis=0, keepdims=True))
            else:  # self_attention
                query = self.params["embedder.pool_query"]
                scale = 1.0 / np.sqrt(rows.shape[-1])
                scores = T.transpose(T.matmul(rows, query, exact_sum=exact), (1, 0))
                probs = T.softmax(T.mul(scores, Tensor(np.float32(scale))), exact_sum=exact)
                parts.append(T.matmul(probs, rows, exact_sum=exact))
        return T.concat(parts, axis=0)

    # -- batch encoding (pooled strategies) ---------------------------------
    def header_embeddings(self, table: TableDataset, exact: bool = False) -> Tensor:
        """(n_features, model_dim) header embeddings c^j in schema order."""
        cache = self._cache(table)
        source = self._token_source(cache)
        flat, seg = [], []
        for j, ids in enumerate(cache.header_ids):
            flat.extend(ids.tolist())
            seg.extend([j] * len(ids))
        pooled = self._pool_segments(
            source, np.array(flat, dtype=np.int64), np.array(seg, dtype=np.int64),
            len(cache.header_ids), exact,
        )
        return self._project(pooled, exact)

    def encode_batch(self, table: TableDataset, row_indices, exact: bool = False,
                     headers: Tensor | None = None) -> Tensor:
        """(batch, n_features, model_dim) feature embeddings for chosen rows."""
        if self.config.pooling == "none":
            raise ConfigError("encode_batch requires a pooled strategy; use encode_tokens")
        cache = self._cache(table)
        idx = np.asarray(row_indices, dtype=np.int64)
        source = self._token_source(cache)
        if headers is None:
            headers = self.header_embeddings(table, exact)
        batch = len(idx)
        cols = []
        for j, col in enumerate(cache.columns):
            c_j = T.narrow(headers, 0, j, j + 1)  # (1, d)
            if col.kind == KIND_NUMERICAL:
                x = Tensor(cache.num_values[j][idx].reshape(batch, 1), op="const")
                e = T.mul(x, c_j)  # (batch, d) by broadcast
            else:
                flat, seg, n_vals = cache.cat_phrase_ids[j]
                values = self._project(
                    self._pool_segments(source, flat, seg, n_vals, exact), exact
                )
                e = T.take_rows(values, cache.cat_row_index[j][idx])
            cols.append(T.reshape(e, (batch, 1, e.shape[-1])))
        return T.concat(cols, axis=1)

    def categorical_targets(self, table: TableDataset, exact: bool = False) -> dict[int, Tensor]:
        """Per column: (n_distinct, model_dim) value-only embeddings, detached.

        Reconstruction targets are constants for the current step; gradients
        reach the token table only through the model inputs.
        """
        cache = self._cache(table)
        source = self._token_source(cache)
        out = {}
        for j, col in enumerate(cache.columns):
            if col.kind != KIND_CATEGORICAL:
                continue
            flat, seg, n_vals = cache.cat_value_only_ids[j]
            pooled = self._project(self._pool_segments(source, flat, seg, n_vals, exact), exact)
            out[j] = pooled.detach()
        return out

    def kind_order(self, table: TableDataset) -> list[str]:
        """Feature kinds in schema order (the order encode_batch emits)."""
        return [c.kind for c in table.feature_columns]

    def numeric_matrix(self, table: TableDataset, row_indices) -> np.ndarray:
        """(batch, n_features) normalized values; zeros at categorical positions."""
        cache = self._cache(table)
        idx = np.asarray(row_indices, dtype=np.int64)
        out = np.zeros((len(idx), len(cache.columns)), dtype=np.float32)
        for j, values in cache.num_values.items():
            out[:, j] = values[idx]
        return out

    def target_matrix(self, table: TableDataset, row_indices,
                      exact: bool = False) -> np.ndarray:
        """(batch, n_features, model_dim) reconstruction targets; zeros at
        numerical positions. Rows are the value-only embeddings of each cell's
        current category, materialized as constants."""
        cache = self._cache(table)
        idx = np.asarray(row_indices, dtype=np.int64)
        targets = self.categorical_targets(table, exact)
        out = np.zeros((len(idx), len(cache.columns), self.config.model_dim),
                       dtype=np.float32)
        for j, pooled in targets.items():
            out[:, j] = pooled.data[cache.cat_row_index[j][idx]]
        return out

    # -- token-level encoding ('none' strategy) -----------------------------
    def encode_tokens(self, table: TableDataset, row_index: int,
                      feature_subset=None, exact: bool = False,
                      headers: Tensor | None = None) -> tuple[Tensor, list[int]]:
        """Unpooled sequence for one row: categorical features contribute one
        position per phrase token, numerical features one position (x * c^j).

        Returns (sequence (L, model_dim), owner feature index per position).
        """
        cache = self._cache(table)
        source = self._token_source(cache)
        if headers is None:
            headers = self.header_embeddings(table, exact)
        chosen = range(len(cache.columns)) if feature_subset is None else feature_subset
        parts, owners = [], []
        for j in chosen:
            col = cache.columns[j]
            if col.kind == KIND_NUMERICAL:
                x = Tensor(cache.num_values[j][row_index].reshape(1, 1), op="const")
                parts.append(T.mul(x, T.narrow(headers, 0, j, j + 1)))
                owners.append(j)
            else:
                vi = int(cache.cat_row_index[j][row_index])
                flat, seg, _ = cache.cat_phrase_ids[j]
                rows = self._project(T.take_rows(source, flat[seg == vi]), exact)
                parts.append(rows)
                owners.extend([j] * rows.shape[0])
        return T.concat(parts, axis=0), owners

    # -- single-cell convenience API (evaluation mode) ----------------------
    def _pool_tokens_np(self, tokens: list[str]) -> np.ndarray:
        source = np.stack([
            self.params["embedder.tokens"].data[self.vocab.index[t]]
            if t in self.vocab else self.provider.vector(t)
            for t in tokens
        ])
        query = self.params.get("embedder.pool_query")
        strategy = "average" if self.config.pooling == "none" else self.config.pooling
        pooled = pool(source, strategy, None if query is None else query.data)
        proj = self.params.get("embedder.proj")
        return pooled if proj is None else pooled @ proj.data

    def header_embedding(self, column_name: str) -> np.ndarray:
        return self._pool_tokens_np(tokenize(column_name))

    def encode_categorical(self, column_name: str, raw_value: str,
                           column_index: int = 0) -> FeatureEmbedding:
        if raw_value.strip() == "":
            self.stats["empty_values"] += 1
        phrase = build_phrase(column_name, raw_value, self.config.phrase_template)
        return FeatureEmbedding(
            self._pool_tokens_np(tokenize(phrase)), column_index, KIND_CATEGORICAL
        )

    def encode_numerical(self, column_name: str, x_norm: float,
                         column_index: int = 0) -> FeatureEmbedding:
        if x_norm < -1e-6 or x_norm > 1.0 + 1e-6:
            raise DataError(f"normalized value {x_norm} outside [0, 1] for '{column_name}'")
        x = min(max(float(x_norm), 0.0), 1.0)
        return FeatureEmbedding(
            np.float32(x) * self.header_embedding(column_name), column_index, KIND_NUMERICAL
        )

    def encode_row(self, row: dict, schema) -> list[FeatureEmbedding]:
        out = []
        for j, col in enumerate(c for c in schema if c.kind != KIND_LABEL):
            if col.kind == KIND_NUMERICAL:
                out.append(self.encode_numerical(col.name, row[col.name], j))
            else:
                out.append(self.encode_categorical(col.name, row[col.name], j))
        return out

    def categorical_target(self, raw_value: str) -> np.ndarray:
        """Value-only pooled embedding (no column name), as a plain vector."""
        return self._pool_tokens_np(tokenize(raw_value))
