import numpy as np
import pytest

from tabphrase.embedder import EmbedderConfig, ProviderConfig
from tabphrase.encoder import EncoderConfig
from tabphrase.errors import DataError
from tabphrase.eval import (
    EvalReport,
    FewShotSpec,
    auc,
    average_ranks,
    fewshot_sample,
    kfold_eval,
    parse_report,
    stratified_kfold,
)
from tabphrase.model import ModelConfig
from tabphrase.synth import family_table, linear_table
from tabphrase.trainer import TrainConfig

from oracles import auc_pair_count

SMALL = ModelConfig(
    embedder=EmbedderConfig(provider=ProviderConfig(dim=16), model_dim=16),
    encoder=EncoderConfig(num_layers=1, model_dim=16, ffn_hidden=32, num_heads=2,
                          dropout=0.0),
)


# ------------------------------------------------------------------ auc


def test_auc_perfect_ranking():
    assert auc(np.array([0.9, 0.8, 0.2, 0.1]), np.array([1, 1, 0, 0])) == 1.0


def test_auc_reversed_ranking():
    assert auc(np.array([0.1, 0.2, 0.8, 0.9]), np.array([1, 1, 0, 0])) == 0.0


def test_auc_tie_convention():
    assert auc(np.array([0.5, 0.5]), np.array([1, 0])) == 0.5


def test_auc_constant_scores():
    assert auc(np.full(10, 0.3), np.array([1, 0] * 5)) == 0.5


def test_auc_single_class_rejected():
    with pytest.raises(DataError):
        auc(np.array([0.1, 0.2]), np.array([1, 1]))


def test_auc_length_mismatch_rejected():
    with pytest.raises(DataError):
        auc(np.array([0.1, 0.2, 0.3]), np.array([1, 0]))


@pytest.mark.parametrize("n,seed", [(10, 0), (57, 1), (128, 2), (200, 3)])
def test_auc_equals_pair_count_oracle(n, seed):
    rng = np.random.default_rng(seed)
    # quantized scores force plenty of ties
    scores = np.round(rng.random(n), 1)
    labels = rng.integers(0, 2, size=n)
    while len(np.unique(labels)) < 2:
        labels = rng.integers(0, 2, size=n)
    assert auc(scores, labels) == auc_pair_count(scores, labels)


def test_auc_monotone_transform_invariant():
    rng = np.random.default_rng(5)
    scores = rng.random(60)
    labels = rng.integers(0, 2, size=60)
    base = auc(scores, labels)
    assert auc(np.exp(scores * 4.0), labels) == pytest.approx(base, abs=1e-12)
    assert auc(scores * 100 - 3, labels) == pytest.approx(base, abs=1e-12)


def test_auc_macro_multiclass():
    rng = np.random.default_rng(7)
    n, t = 90, 3
    proba = rng.random((n, t))
    proba /= proba.sum(axis=1, keepdims=True)
    labels = rng.integers(1, t + 1, size=n)
    want = np.mean([auc_pair_count(proba[:, c - 1], (labels == c).astype(int))
                    for c in np.unique(labels)])
    assert auc(proba, labels) == pytest.approx(want, abs=1e-12)


def test_auc_multiclass_label_range_checked():
    proba = np.full((4, 2), 0.5)
    with pytest.raises(DataError):
        auc(proba, np.array([1, 2, 3, 1]))


def test_average_ranks_ties():
    np.testing.assert_allclose(average_ranks(np.array([10.0, 20.0, 20.0, 30.0])),
                               [1.0, 2.5, 2.5, 4.0])


# ------------------------------------------------------------------ fewshot


def test_fewshot_exact_counts():
    table = linear_table(n_rows=60, seed=0)
    subset, pool = fewshot_sample(table, FewShotSpec(shots=5, seed=1))
    assert subset.n_rows == 10  # 2 classes x 5
    for cls in (1, 2):
        assert (subset.labels == cls).sum() == 5
    assert subset.n_rows + pool.n_rows == table.n_rows


def test_fewshot_disjoint_and_seeded():
    table = linear_table(n_rows=60, seed=0)
    s1, p1 = fewshot_sample(table, FewShotSpec(shots=5, seed=1))
    s2, _ = fewshot_sample(table, FewShotSpec(shots=5, seed=1))
    s3, _ = fewshot_sample(table, FewShotSpec(shots=5, seed=2))
    assert [r for r in s1.rows] == [r for r in s2.rows]
    assert [r for r in s1.rows] != [r for r in s3.rows]
    ids = {id(r) for r in s1.rows}
    assert all(id(r) not in ids for r in p1.rows)


def test_fewshot_class_too_small_named():
    table = linear_table(n_rows=30, seed=0)
    n_high = int((table.labels == 1).sum())
    with pytest.raises(DataError, match="class '"):
        fewshot_sample(table, FewShotSpec(shots=n_high + 100, seed=0))


def test_fewshot_spec_validation():
    with pytest.raises(DataError):
        FewShotSpec(shots=0)


# ------------------------------------------------------------------ folds


def test_kfold_partition_property():
    labels = np.random.default_rng(0).integers(1, 4, size=83)
    folds = stratified_kfold(labels, folds=5, seed=3)
    all_rows = np.concatenate(folds)
    assert len(all_rows) == 83
    assert len(np.unique(all_rows)) == 83


def test_kfold_stratification_balance():
    labels = np.array([1] * 50 + [2] * 25)
    folds = stratified_kfold(labels, folds=5, seed=0)
    for fold in folds:
        assert (labels[fold] == 1).sum() == 10
        assert (labels[fold] == 2).sum() == 5


def test_kfold_deterministic():
    labels = np.random.default_rng(1).integers(1, 3, size=40)
    a = stratified_kfold(labels, folds=5, seed=7)
    b = stratified_kfold(labels, folds=5, seed=7)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_kfold_small_class_warns():
    labels = np.array([1] * 20 + [2] * 3)
    with pytest.warns(UserWarning, match="best-effort"):
        stratified_kfold(labels, folds=5, seed=0)


# ------------------------------------------------------------------ protocol


def _tiny_config():
    return TrainConfig(objective="finetune", lr=3e-3, batch_size=16, max_epochs=2,
                       patience=20, seed=0)


def test_kfold_eval_report_shape():
    table = family_table("eval", seed=0, n_rows=50, n_columns=4, with_grade=False)
    report = kfold_eval(table, _tiny_config(), model_config=SMALL)
    assert len(report.fold_aucs) == 5
    assert report.mean_auc == pytest.approx(np.mean(report.fold_aucs))
    assert report.mode == "scratch"
    assert len(report.fold_seeds) == len(set(report.fold_seeds)) == 5
    assert report.wall_clock > 0


def test_kfold_eval_too_small_rejected():
    table = linear_table(n_rows=8, seed=0)
    with pytest.raises(DataError, match="k-fold needs"):
        kfold_eval(table, _tiny_config(), model_config=SMALL)


def test_kfold_eval_reports_identical_across_runs():
    table = family_table("rep", seed=1, n_rows=50, n_columns=4, with_grade=False)
    r1 = kfold_eval(table, _tiny_config(), model_config=SMALL)
    r2 = kfold_eval(table, _tiny_config(), model_config=SMALL)
    assert r1.to_text() == r2.to_text()
    assert "wall_clock" not in r1.to_text()
    assert "wall_clock" in r1.to_text(include_timing=True)
    assert r1.config_digest == r2.config_digest


def test_kfold_eval_fewshot_mode():
    table = family_table("fs", seed=2, n_rows=60, n_columns=4, with_grade=False)
    report = kfold_eval(table, _tiny_config(), model_config=SMALL, fewshot=5)
    assert report.fewshot == 5
    assert len(report.fold_aucs) == 5


def test_report_text_roundtrip():
    report = EvalReport(dataset="demo", mode="scratch", fold_aucs=[0.5, 0.75],
                        mean_auc=0.625, fold_seeds=[1, 2], config_digest="abc",
                        wall_clock=1.5, fewshot=None)
    parsed = parse_report(report.to_text())
    assert parsed["report.dataset"] == "demo"
    assert parsed["report.folds"] == "2"
    assert float(parsed["report.fold.1.auc"]) == 0.75
    assert float(parsed["report.mean_auc"]) == 0.625
    assert parsed["report.fewshot"] == "0"


def test_report_plot_data_lines():
    report = EvalReport(dataset="demo", mode="scratch", fold_aucs=[0.5],
                        mean_auc=0.5, fold_seeds=[1], config_digest="abc",
                        wall_clock=1.0,
                        histories=[[{"epoch": 0, "val_auc": 0.5}]])
    lines = report.plot_data().strip().splitlines()
    assert len(lines) == 1 and '"fold":0' in lines[0]
