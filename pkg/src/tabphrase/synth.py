"""Synthetic table generators for tests, demos, and the sweep harness.

The table family shares a column vocabulary and one hidden rule: every
numeric feature is a noisy reading of the same latent factor, and the label
thresholds that factor. Tables differ in which columns they carry, their row
counts, and their noise draws, so cross-table pre-training has real shared
structure to pick up while no two tables are identical.
"""

from __future__ import annotations

import numpy as np

from .ingest import (
    KIND_CATEGORICAL,
    KIND_LABEL,
    KIND_NUMERICAL,
    ColumnSpec,
    TableDataset,
)
from .utils import rng_for

# name -> weight of the latent factor in that column's reading
COLUMN_POOL = {
    "temperature": 0.85, "pressure": 0.8, "flow": 0.75, "humidity": 0.7,
    "voltage": 0.65, "current": 0.8, "speed": 0.7, "torque": 0.6,
    "density": 0.75, "level": 0.65,
}
GRADE_BINS = ("low", "mid", "high")


def make_table(name: str, numeric: dict[str, np.ndarray],
               categorical: dict[str, list[str]] | None = None,
               labels: list[str] | None = None) -> TableDataset:
    """Assemble an already-normalized TableDataset from column arrays."""
    categorical = categorical or {}
    schema, rows_data = [], {}
    for col, values in numeric.items():
        arr = np.asarray(values, dtype=np.float64)
        schema.append(ColumnSpec(col, KIND_NUMERICAL,
                                 observed_min=float(arr.min()),
                                 observed_max=float(arr.max())))
        rows_data[col] = [float(v) for v in arr]
    for col, values in categorical.items():
        schema.append(ColumnSpec(col, KIND_CATEGORICAL,
                                 category_vocab=sorted(set(values))))
        rows_data[col] = list(values)
    n_rows = len(next(iter(rows_data.values())))
    rows = [{col: rows_data[col][i] for col in rows_data} for i in range(n_rows)]

    label_ids, label_vocab = None, None
    if labels is not None:
        label_vocab = sorted(set(labels))
        if len(label_vocab) < 2:
            raise ValueError("labels must cover at least 2 classes")
        index = {v: i + 1 for i, v in enumerate(label_vocab)}
        label_ids = np.array([index[v] for v in labels], dtype=np.int64)
        schema.append(ColumnSpec("outcome", KIND_LABEL))
    return TableDataset(name=name, schema=schema, rows=rows, labels=label_ids,
                        label_vocab=label_vocab,
                        provenance={"source": "synthetic", "generator": name})


def linear_table(n_rows: int = 500, n_noise: int = 3, seed: int = 0) -> TableDataset:
    """Linearly separable: the label is an indicator of the first column."""
    rng = rng_for(seed, "linear")
    lead = rng.random(n_rows)
    numeric = {"temperature": lead}
    names = [n for n in COLUMN_POOL if n != "temperature"]
    for i in range(n_noise):
        numeric[names[i]] = rng.random(n_rows)
    labels = ["high" if v > 0.5 else "low" for v in lead]
    return make_table(f"linear_{seed}", numeric, labels=labels)


def _readings(z: np.ndarray, column: str, rng: np.random.Generator) -> np.ndarray:
    w = COLUMN_POOL[column]
    return np.clip(w * z + (1.0 - w) * rng.random(len(z)), 0.0, 1.0)


def family_table(name: str, seed: int, n_rows: int, n_columns: int,
                 with_grade: bool) -> TableDataset:
    """One member of the shared-rule family.

    Numeric columns are noisy readings of a per-row latent factor; the label
    thresholds the factor at one half. Pre-training members also carry a
    'grade' column binning the factor into terciles, which gives masked
    reconstruction a categorical target tied to the rule.
    """
    rng = rng_for(seed, "family", name)
    z = rng.random(n_rows)
    pool = list(COLUMN_POOL)
    chosen = sorted(rng.choice(len(pool), size=n_columns, replace=False).tolist())
    numeric = {pool[i]: _readings(z, pool[i], rng) for i in chosen}
    categorical = None
    if with_grade:
        bins = np.digitize(z, [1 / 3, 2 / 3])
        categorical = {"grade": [GRADE_BINS[b] for b in bins]}
    labels = ["high" if v > 0.5 else "low" for v in z]
    return make_table(name, numeric, categorical=categorical, labels=labels)


def make_family(n_pretrain: int = 16, n_downstream: int = 4, seed: int = 0,
                pretrain_rows: int = 120, downstream_rows: int = 60,
                ) -> tuple[list[TableDataset], list[TableDataset]]:
    """Shared-vocabulary family: pre-training members carry the grade bridge
    column, downstream members do not."""
    rng = rng_for(seed, "family-sizes")
    pretrain = [
        family_table(f"pre_{i:02d}", seed * 1000 + i, pretrain_rows,
                     n_columns=int(rng.integers(5, 8)), with_grade=True)
        for i in range(n_pretrain)
    ]
    downstream = [
        family_table(f"down_{i:02d}", seed * 1000 + 500 + i, downstream_rows,
                     n_columns=int(rng.integers(4, 7)), with_grade=False)
        for i in range(n_downstream)
    ]
    return pretrain, downstream


# two-word category values keep token-level sequences the same length for
# every row, which lets the unpooled strategy batch normally
ABLATION_SHADES = ("dark red", "pale blue", "deep green")


def ablation_table(n_rows: int = 80, seed: int = 0) -> TableDataset:
    rng = rng_for(seed, "ablation")
    z = rng.random(n_rows)
    numeric = {
        "temperature": _readings(z, "temperature", rng),
        "pressure": _readings(z, "pressure", rng),
        "flow": _readings(z, "flow", rng),
    }
    shade_bins = np.digitize(z, [1 / 3, 2 / 3])
    categorical = {"shade": [ABLATION_SHADES[b] for b in shade_bins]}
    labels = ["high" if v > 0.5 else "low" for v in z]
    return make_table(f"ablation_{seed}", numeric, categorical=categorical,
                      labels=labels)
