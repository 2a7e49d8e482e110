import numpy as np

from tabphrase.ingest import KIND_CATEGORICAL, KIND_NUMERICAL
from tabphrase.synth import (
    COLUMN_POOL,
    ablation_table,
    family_table,
    linear_table,
    make_family,
    make_table,
)
from tabphrase.text import tokenize


def test_make_table_assembles_schema():
    t = make_table("t", {"pressure": np.array([0.1, 0.9])},
                   categorical={"grade": ["low", "high"]},
                   labels=["no", "yes"])
    kinds = {c.name: c.kind for c in t.schema}
    assert kinds["pressure"] == KIND_NUMERICAL
    assert kinds["grade"] == KIND_CATEGORICAL
    assert t.n_features == 2
    assert t.labels.tolist() == [1, 2]
    assert t.label_vocab == ["no", "yes"]


def test_linear_table_label_rule():
    t = linear_table(n_rows=100, seed=4)
    lead = np.array([row["temperature"] for row in t.rows])
    want = np.where(lead > 0.5, 1, 2)  # 'high' sorts before 'low'
    np.testing.assert_array_equal(t.labels, want)
    assert all(0.0 <= row[c.name] <= 1.0 for row in t.rows
               for c in t.feature_columns)


def test_linear_table_deterministic():
    a = linear_table(n_rows=30, seed=9)
    b = linear_table(n_rows=30, seed=9)
    assert a.rows == b.rows
    np.testing.assert_array_equal(a.labels, b.labels)


def test_family_shapes_and_bridge_column():
    pretrain, downstream = make_family(n_pretrain=6, n_downstream=3, seed=0,
                                       pretrain_rows=40, downstream_rows=30)
    assert len(pretrain) == 6 and len(downstream) == 3
    for t in pretrain:
        names = {c.name for c in t.feature_columns}
        assert "grade" in names
        assert names - {"grade"} <= set(COLUMN_POOL)
    for t in downstream:
        names = {c.name for c in t.feature_columns}
        assert "grade" not in names
        assert names <= set(COLUMN_POOL)


def test_family_labels_follow_hidden_rule():
    t = family_table("probe", seed=5, n_rows=400, n_columns=6, with_grade=True)
    # every numeric column correlates positively with the label
    y = (t.labels == 1).astype(float)  # 'high' is class 1
    for col in t.feature_columns:
        if col.kind != KIND_NUMERICAL:
            continue
        x = np.array([row[col.name] for row in t.rows])
        assert np.corrcoef(x, y)[0, 1] > 0.2


def test_family_deterministic():
    a = family_table("x", seed=3, n_rows=25, n_columns=5, with_grade=True)
    b = family_table("x", seed=3, n_rows=25, n_columns=5, with_grade=True)
    assert a.rows == b.rows


def test_family_column_names_tokenize_semantically():
    # single lowercase words, so curation's wordlist check would pass
    for name in COLUMN_POOL:
        toks = tokenize(name)
        assert toks == [name]


def test_ablation_table_fixed_token_length_values():
    t = ablation_table(n_rows=40, seed=1)
    shade_col = next(c for c in t.feature_columns if c.name == "shade")
    for value in shade_col.category_vocab:
        assert len(tokenize(value)) == 2
