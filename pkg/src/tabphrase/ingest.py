"""CSV loading and the four-step table curation protocol.

A table arrives as a CSV plus a manifest declaring each column's kind
(categorical, numerical, or label). Curation then:

  1. screens column names for semantic content against a wordlist,
  2. discards tables with too many missing cells,
  3. fills remaining missing cells with the column mode and min-max
     normalizes numerical columns to [0, 1],
  4. optionally prunes wide labeled tables by random-forest importance.

Raw numeric ranges observed at curation time are kept on the column specs
so later consumers reuse the same scaling.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .text import tokenize

KIND_CATEGORICAL = "categorical"
KIND_NUMERICAL = "numerical"
KIND_LABEL = "label"
_KINDS = (KIND_CATEGORICAL, KIND_NUMERICAL, KIND_LABEL)


@dataclass
class ColumnSpec:
    name: str
    kind: str
    observed_min: float | None = None
    observed_max: float | None = None
    category_vocab: list[str] | None = None
    missing_fraction: float = 0.0


@dataclass
class TableDataset:
    name: str
    schema: list[ColumnSpec]
    rows: list[dict]
    labels: np.ndarray | None = None
    label_vocab: list[str] | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def feature_columns(self) -> list[ColumnSpec]:
        return [c for c in self.schema if c.kind != KIND_LABEL]

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_features(self) -> int:
        return len(self.feature_columns)

    @property
    def n_classes(self) -> int:
        return len(self.label_vocab) if self.label_vocab else 0

    def column_values(self, name: str) -> list:
        return [row[name] for row in self.rows]

    def subset_rows(self, indices) -> "TableDataset":
        """A copy containing only the selected rows (labels follow)."""
        idx = list(int(i) for i in indices)
        return replace(
            self,
            rows=[self.rows[i] for i in idx],
            labels=None if self.labels is None else self.labels[idx],
        )


@dataclass
class CurationPolicy:
    semantic_fraction_min: float = 0.5
    missing_fraction_max: float = 0.4
    max_features_before_prune: int = 100
    prune_keep_top: int = 100
    wordlist_path: str | None = None


@dataclass
class CurationResult:
    kept: bool
    table: TableDataset | None
    code: str  # kept | low_semantic_fraction | high_missing_fraction
    reason: str
    record: dict = field(default_factory=dict)


def load_wordlist(path: str | None = None) -> frozenset[str]:
    """Lowercase word set; the bundled list is used when no path is given."""
    if path is None:
        content = resources.files("tabphrase.data").joinpath("wordlist.txt").read_text()
    else:
        content = Path(path).read_text()
    words = frozenset(w.strip().lower() for w in content.split() if w.strip())
    if not words:
        raise ConfigError(f"wordlist is empty: {path or '<bundled>'}")
    return words


def load_manifest(manifest_path) -> dict:
    try:
        manifest = json.loads(Path(manifest_path).read_text())
    except json.JSONDecodeError as err:
        raise DataError(f"manifest {manifest_path} is not valid JSON: {err}") from None
    if "columns" not in manifest or not isinstance(manifest["columns"], dict):
        raise DataError(f"manifest {manifest_path} lacks a 'columns' mapping")
    for name, kind in manifest["columns"].items():
        if kind not in _KINDS:
            raise DataError(f"manifest column '{name}' has unknown kind '{kind}'")
    labels = [n for n, k in manifest["columns"].items() if k == KIND_LABEL]
    if len(labels) > 1:
        raise DataError(f"manifest declares multiple label columns: {labels}")
    return manifest


def load_table(csv_path, manifest_path) -> TableDataset:
    """Typed dataset from a CSV with header row plus its manifest.

    Missing cells: empty strings everywhere; unparseable numeric cells are
    treated as missing and counted. Label cells must parse for every row and
    take at least two distinct values; labels are mapped to 1..T by sorted
    raw value.
    """
    manifest = load_manifest(manifest_path)
    kinds: dict[str, str] = manifest["columns"]
    name = manifest.get("name") or Path(csv_path).stem

    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{csv_path}: empty file") from None
        missing_cols = [c for c in kinds if c not in header]
        extra_cols = [c for c in header if c not in kinds]
        if missing_cols or extra_cols:
            raise DataError(
                f"{csv_path}: manifest/CSV column mismatch"
                f" (manifest-only: {missing_cols}, csv-only: {extra_cols})"
            )
        raw_rows = []
        for cells in reader:
            if len(cells) != len(header):
                raise DataError(
                    f"{csv_path}: row at line {reader.line_num} has "
                    f"{len(cells)} cells, expected {len(header)}"
                )
            raw_rows.append(cells)

    label_col = next((c for c, k in kinds.items() if k == KIND_LABEL), None)
    feature_names = [c for c in header if c != label_col]
    if not feature_names:
        raise DataError(f"{csv_path}: table has no feature columns")

    col_idx = {c: header.index(c) for c in header}
    rows: list[dict] = []
    raw_labels: list[str] = []
    for cells in raw_rows:
        row = {}
        for cname in feature_names:
            raw = cells[col_idx[cname]]
            if kinds[cname] == KIND_CATEGORICAL:
                row[cname] = raw if raw != "" else None
            else:
                try:
                    row[cname] = float(raw) if raw != "" else None
                except ValueError:
                    row[cname] = None
        rows.append(row)
        if label_col is not None:
            raw = cells[col_idx[label_col]]
            if raw == "":
                raise DataError(
                    f"{csv_path}: missing label at line {len(rows) + 1}"
                )
            raw_labels.append(raw)

    labels = None
    label_vocab = None
    if label_col is not None:
        label_vocab = sorted(set(raw_labels))
        if len(label_vocab) < 2:
            raise DataError(
                f"{csv_path}: label column '{label_col}' has "
                f"{len(label_vocab)} distinct value(s), need at least 2"
            )
        index = {v: i + 1 for i, v in enumerate(label_vocab)}
        labels = np.array([index[v] for v in raw_labels], dtype=np.int64)

    schema = []
    for cname in header:
        kind = kinds[cname]
        if kind == KIND_LABEL:
            schema.append(ColumnSpec(cname, KIND_LABEL, category_vocab=list(label_vocab)))
            continue
        values = [row[cname] for row in rows]
        observed = [v for v in values if v is not None]
        fraction = 1.0 - len(observed) / len(values) if values else 0.0
        if kind == KIND_CATEGORICAL:
            vocab = list(dict.fromkeys(observed))
            schema.append(ColumnSpec(cname, kind, category_vocab=vocab, missing_fraction=fraction))
        else:
            lo = min(observed) if observed else None
            hi = max(observed) if observed else None
            schema.append(
                ColumnSpec(cname, kind, observed_min=lo, observed_max=hi, missing_fraction=fraction)
            )

    return TableDataset(
        name=name,
        schema=schema,
        rows=rows,
        labels=labels,
        label_vocab=label_vocab,
        provenance={"source": str(csv_path), "curation_log": []},
    )


def semantic_score(schema: list[ColumnSpec], wordlist: frozenset[str]) -> tuple[dict[str, bool], float]:
    """Per-column semantic flag plus the fraction of semantic columns.

    A column counts as semantic when at least one of its name's tokens of
    length >= 2 is in the wordlist.
    """
    if not wordlist:
        raise ConfigError("wordlist is empty")
    flags = {}
    for col in schema:
        flags[col.name] = any(len(t) >= 2 and t in wordlist for t in tokenize(col.name))
    fraction = sum(flags.values()) / len(flags) if flags else 0.0
    return flags, fraction


def _mode(values: list):
    """Most frequent value; ties resolved toward the smallest value."""
    counts = Counter(values)
    top = max(counts.values())
    return min(v for v, c in counts.items() if c == top)


def curate(table: TableDataset, policy: CurationPolicy | None = None,
           wordlist: frozenset[str] | None = None) -> CurationResult:
    """Apply the screening and cleaning steps to one loaded table.

    Returns a kept result with a cleaned copy (no missing cells, numerical
    values in [0, 1], raw min/max retained on the column specs) or a discard with a
    machine-readable reason. The semantic fraction is computed over feature
    columns; the label column is neither screened nor cleaned.
    """
    policy = policy or CurationPolicy()
    if wordlist is None:
        wordlist = load_wordlist(policy.wordlist_path)

    features = table.feature_columns
    flags, fraction = semantic_score(features, wordlist)
    if fraction < policy.semantic_fraction_min:
        reason = f"semantic_fraction {fraction:.2f} < {policy.semantic_fraction_min:.2f}"
        record = {"table": table.name, "decision": "discard", "code": "low_semantic_fraction",
                  "reason": reason, "semantic_fraction": round(fraction, 6)}
        return CurationResult(False, None, "low_semantic_fraction", reason, record)

    total_cells = table.n_rows * len(features)
    n_missing = sum(
        1 for row in table.rows for c in features if row[c.name] is None
    )
    missing_fraction = n_missing / total_cells if total_cells else 0.0
    if missing_fraction > policy.missing_fraction_max:
        reason = f"missing_fraction {missing_fraction:.2f} > {policy.missing_fraction_max:.2f}"
        record = {"table": table.name, "decision": "discard", "code": "high_missing_fraction",
                  "reason": reason, "missing_fraction": round(missing_fraction, 6)}
        return CurationResult(False, None, "high_missing_fraction", reason, record)

    new_rows = [dict(row) for row in table.rows]
    new_schema: list[ColumnSpec] = []
    constant_columns = []
    filled = 0
    for col in table.schema:
        if col.kind == KIND_LABEL:
            new_schema.append(replace(col))
            continue
        numeric = col.kind == KIND_NUMERICAL
        values = [row[col.name] for row in new_rows]
        observed = [v for v in values if v is not None]
        if not observed:
            raise DataError(f"column '{col.name}' has no observed values")
        fill = _mode(observed)
        for row in new_rows:
            if row[col.name] is None:
                row[col.name] = fill
                filled += 1
        if numeric:
            lo, hi = min(observed), max(observed)
            if lo == hi:
                for row in new_rows:
                    row[col.name] = 0.5
                constant_columns.append(col.name)
            else:
                span = hi - lo
                for row in new_rows:
                    row[col.name] = (row[col.name] - lo) / span
            new_schema.append(
                replace(col, observed_min=lo, observed_max=hi, missing_fraction=0.0)
            )
        else:
            vocab = list(dict.fromkeys(row[col.name] for row in new_rows))
            new_schema.append(replace(col, category_vocab=vocab, missing_fraction=0.0))

    record = {
        "table": table.name,
        "decision": "keep",
        "code": "kept",
        "semantic_fraction": round(fraction, 6),
        "missing_fraction": round(missing_fraction, 6),
        "filled_cells": filled,
        "constant_columns": constant_columns,
        "semantic_columns": {k: bool(v) for k, v in flags.items()},
    }
    cleaned = replace(
        table,
        schema=new_schema,
        rows=new_rows,
        provenance={
            "source": table.provenance.get("source", ""),
            "curation_log": table.provenance.get("curation_log", []) + [record],
        },
    )
    return CurationResult(True, cleaned, "kept", "kept", record)


def feature_importance_prune(table: TableDataset, policy: CurationPolicy | None = None,
                             rng_seed: int = 0) -> TableDataset:
    """Drop low-importance features from wide labeled tables.

    Tables at or below the width threshold pass through unchanged. Ranking
    comes from a small random forest (32 Gini trees, depth 8, sqrt feature
    subsampling) trained on ordinal-coded features; ties break toward the
    earlier column. The label column is never dropped.
    """
    policy = policy or CurationPolicy()
    features = table.feature_columns
    if len(features) <= policy.max_features_before_prune:
        return table
    if table.labels is None:
        raise DataError("feature pruning requires labels")

    from sklearn.ensemble import RandomForestClassifier

    x = np.empty((table.n_rows, len(features)), dtype=np.float64)
    for j, col in enumerate(features):
        values = table.column_values(col.name)
        if col.kind == KIND_NUMERICAL:
            x[:, j] = [float(v) for v in values]
        else:
            codes = {v: i for i, v in enumerate(sorted(set(values)))}
            x[:, j] = [codes[v] for v in values]

    forest = RandomForestClassifier(
        n_estimators=32,
        max_depth=8,
        max_features="sqrt",
        random_state=int(rng_seed) % (2**32),
        n_jobs=1,
    )
    forest.fit(x, table.labels)
    order = sorted(range(len(features)), key=lambda j: (-forest.feature_importances_[j], j))
    kept = sorted(order[: policy.prune_keep_top])
    kept_names = {features[j].name for j in kept}

    new_schema = [c for c in table.schema if c.kind == KIND_LABEL or c.name in kept_names]
    new_rows = [{k: v for k, v in row.items() if k in kept_names} for row in table.rows]
    record = {
        "table": table.name,
        "decision": "prune",
        "kept_features": sorted(kept_names),
        "dropped": len(features) - len(kept),
        "seed": int(rng_seed),
    }
    return replace(
        table,
        schema=new_schema,
        rows=new_rows,
        provenance={
            "source": table.provenance.get("source", ""),
            "curation_log": table.provenance.get("curation_log", []) + [record],
        },
    )


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def save_table(table: TableDataset, csv_path, manifest_path) -> None:
    """Write a table back to CSV + manifest (schema order preserved)."""
    header = [c.name for c in table.schema]
    label_col = next((c.name for c in table.schema if c.kind == KIND_LABEL), None)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, row in enumerate(table.rows):
            cells = []
            for cname in header:
                if cname == label_col:
                    cells.append(table.label_vocab[int(table.labels[i]) - 1])
                else:
                    cells.append(_format_cell(row[cname]))
            writer.writerow(cells)

    manifest = {
        "name": table.name,
        "columns": {c.name: c.kind for c in table.schema},
        "numeric_stats": {
            c.name: {"min": c.observed_min, "max": c.observed_max}
            for c in table.schema
            if c.kind == KIND_NUMERICAL
        },
        "curation_log": table.provenance.get("curation_log", []),
    }
    Path(manifest_path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def discover_corpus(corpus_dir) -> list[tuple[Path, Path]]:
    """(csv, manifest) pairs in a directory: every *.csv with a same-stem *.json."""
    corpus_dir = Path(corpus_dir)
    pairs = []
    for csv_path in sorted(corpus_dir.glob("*.csv")):
        manifest = csv_path.with_suffix(".json")
        if manifest.exists():
            pairs.append((csv_path, manifest))
    return pairs
