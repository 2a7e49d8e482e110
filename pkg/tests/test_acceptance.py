"""Release gate: ten end-to-end checks the shipped package must pass.

Each criterion is one test with its tolerance and wall-clock budget pinned
inline, so `pytest tests/test_acceptance.py -v` prints one pass/fail line
per criterion. Oracles come from tests/oracles.py and are independent of
the library code they check.
"""

import dataclasses
import time
from pathlib import Path

import numpy as np
import pytest

from tabphrase.embedder import EmbedderConfig, POOLING_STRATEGIES, ProviderConfig
from tabphrase.encoder import EncoderConfig
from tabphrase.eval import auc
from tabphrase.ingest import KIND_LABEL, curate, load_table, save_table
from tabphrase.model import ModelConfig, TableModel
from tabphrase.numcore import Tensor
from tabphrase.numcore.gradcheck import finite_diff_probe, run_all_checks
from tabphrase.objectives import (
    ContrastiveConfig,
    MaskConfig,
    mtm_loss,
    sample_mask_batch,
    supcon_loss,
)
from tabphrase.checkpoint import (
    checkpoint_from_model,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)
from tabphrase.sweeps import fewshot_transfer, pooling_ablation, run_sweep
from tabphrase.synth import ablation_table, family_table, linear_table, make_family
from tabphrase.trainer import TrainConfig, finetune, pretrain_mtm
from tabphrase.utils import rng_for

from oracles import auc_pair_count, fixed_mtm_heads, supcon_reference

FIXTURES = Path(__file__).parent / "data" / "fixtures"
GOLDEN = Path(__file__).parent / "data" / "golden"

SMALL = ModelConfig(
    embedder=EmbedderConfig(provider=ProviderConfig(dim=32), model_dim=32),
    encoder=EncoderConfig(num_layers=2, model_dim=32, ffn_hidden=64, num_heads=4,
                          dropout=0.1),
)


def _wall(t0: float, budget_s: float, what: str) -> float:
    elapsed = time.perf_counter() - t0
    assert elapsed < budget_s, f"{what} took {elapsed:.0f}s, budget {budget_s:.0f}s"
    return elapsed


# criterion 1: every autodiff primitive beats 1e-4 against central differences
# on 100 random points, and the assembled model's training loss gradient
# agrees at 10 probed parameters to 1e-3. Budget 2 minutes.
def test_criterion_01_gradients_match_finite_differences():
    t0 = time.perf_counter()
    report = run_all_checks(n_points=100)
    assert len(report) >= 20, f"only {len(report)} primitives registered"
    for name, err in sorted(report.items()):
        assert err < 1e-4, f"primitive {name}: max error {err:.3e} >= 1e-4"

    table = family_table("probe", seed=0, n_rows=24, n_columns=6, with_grade=True)
    model = TableModel.build([table], SMALL, seed=0)
    for p in model.params.values():
        p.data = p.data.astype(np.float64)
    rows = np.arange(16)
    ko = model.embedder.kind_order(table)
    masks = sample_mask_batch(len(rows), ko, MaskConfig(), rng_for(0, "probe-mask"))
    nums = model.embedder.numeric_matrix(table, rows)
    cats = model.embedder.target_matrix(table, rows)

    def make_loss():
        _, h = model.masked_forward(table, rows, masks, train=False, seed=0)
        return mtm_loss(h, masks, ko, nums, cats, model.mtm_heads())

    trainable = model.trainable()
    names = sorted(trainable)
    # spread the probe across the embedding table, the reconstruction heads
    # and the encoder rather than leaving coverage to the draw
    picked = [n for n in ("embedder.tokens", "mtm.num_proj", "mtm.mask_token")
              if n in trainable]
    rng = np.random.default_rng(7)
    rest = [n for n in names if n not in picked]
    picked += [rest[int(k)] for k in rng.choice(len(rest), size=10 - len(picked),
                                                replace=False)]
    coords = [(n, int(rng.integers(trainable[n].data.size))) for n in picked]
    pairs = finite_diff_probe(make_loss, trainable, coords, h=1e-4)
    for (name, idx), (analytic, numeric) in zip(coords, pairs):
        gap = abs(analytic - numeric) / max(1.0, abs(analytic))
        assert gap <= 1e-3, (
            f"{name}[{idx}]: analytic {analytic:.6e} vs numeric {numeric:.6e}"
        )
    elapsed = _wall(t0, 120, "gradient checks")
    print(f"criterion 1 PASS: {len(report)} primitives < 1e-4, "
          f"10-parameter model probe < 1e-3 ({elapsed:.0f}s)")


# criterion 2: reordering a table's columns must not change the row
# representation (<= 1e-5 relative in the fast path, bitwise in the exact
# path) and must permute per-feature outputs exactly. Budget 1 minute.
def test_criterion_02_column_permutation_invariance():
    t0 = time.perf_counter()
    table = family_table("perm", seed=3, n_rows=100, n_columns=7, with_grade=True)
    model = TableModel.build([table], SMALL, seed=1)
    rows = np.arange(100)
    h_fast, _ = model.forward_rows(table, rows, train=False)
    h_exact, f_exact = model.forward_rows(table, rows, train=False, exact=True)
    scale = np.max(np.abs(h_fast.data))

    rng = np.random.default_rng(11)
    alive = []  # permuted views must outlive the embedder's per-table cache keys
    for k in range(20):
        perm = rng.permutation(table.n_features)
        labels = [c for c in table.schema if c.kind == KIND_LABEL]
        feats = table.feature_columns
        view = dataclasses.replace(table, schema=[feats[j] for j in perm] + labels)
        alive.append(view)

        hp, _ = model.forward_rows(view, rows, train=False)
        rel = np.max(np.abs(hp.data - h_fast.data)) / scale
        assert rel <= 1e-5, f"perm {k}: fast-path CLS deviation {rel:.2e}"

        he, fe = model.forward_rows(view, rows, train=False, exact=True)
        assert np.array_equal(he.data, h_exact.data), f"perm {k}: exact CLS moved"
        assert np.array_equal(fe.data, f_exact.data[:, perm, :]), (
            f"perm {k}: per-feature outputs did not follow the permutation"
        )
    elapsed = _wall(t0, 60, "permutation checks")
    print(f"criterion 2 PASS: 100 rows x 20 permutations, CLS <= 1e-5 fast / "
          f"bitwise exact ({elapsed:.0f}s)")


# criterion 3: Monte Carlo over 10,000 rows; overall masked fraction within
# 0.35 +/- 0.02 and categorical share of masked positions within 0.70 +/- 0.03.
def test_criterion_03_mask_rate_statistics():
    ko = ["categorical", "numerical"] * 10
    masks = sample_mask_batch(10_000, ko, MaskConfig(), rng_for(0, "mc"))
    frac = masks.mean()
    cat_pos = np.array([k == "categorical" for k in ko])
    cat_share = masks[:, cat_pos].sum() / masks.sum()
    assert abs(frac - 0.35) <= 0.02, f"masked fraction {frac:.4f}"
    assert abs(cat_share - 0.70) <= 0.03, f"categorical share {cat_share:.4f}"
    print(f"criterion 3 PASS: fraction {frac:.4f} (0.35 +/- 0.02), "
          f"share {cat_share:.4f} (0.70 +/- 0.03)")


# criterion 4: the contrastive loss matches a triple-loop reference to 1e-6
# on random batches (n <= 16), the reconstruction loss matches hand-evaluated
# cases (including the 0.55 example) to 1e-6, and auc equals the O(n^2)
# pair-counting oracle exactly for n <= 200.
def test_criterion_04_loss_and_metric_oracles():
    rng = np.random.default_rng(42)
    for m in (4, 7, 12, 16):
        z = rng.normal(size=(m, 8))
        labels = rng.integers(1, 3, size=m)
        labels[:2] = 1  # guarantee a positive pair
        labels[-1] = 2  # guarantee a negative
        got = float(supcon_loss(Tensor(z, dtype=np.float64), labels,
                                ContrastiveConfig(tau=0.1)).data)
        want = supcon_reference(z, labels, tau=0.1)
        assert abs(got - want) <= 1e-6, f"supcon n={m}: {got} vs {want}"
    # float32 production path on one batch
    z32 = rng.normal(size=(8, 8)).astype(np.float32)
    lab = np.array([1, 1, 2, 2, 1, 2, 1, 2])
    got32 = float(supcon_loss(Tensor(z32), lab, ContrastiveConfig(tau=0.1)).data)
    assert abs(got32 - supcon_reference(z32, lab, tau=0.1)) <= 1e-6

    # hand case: numeric errors 0.01 and 0.09, categorical cosine 0.5
    # -> (0.01 + 0.09) / 2 + (1 - 0.5) = 0.55
    d = 2
    heads = fixed_mtm_heads(d)
    h = np.zeros((1, 3, d), dtype=np.float32)
    h[0, 0, 0], h[0, 1, 0] = 0.6, 0.2
    h[0, 2] = [0.5, np.sqrt(3) / 2]
    targets = np.zeros((1, 3, d), dtype=np.float32)
    targets[0, 2] = [1.0, 0.0]
    values = np.array([[0.5, 0.5, 0.0]])
    loss = mtm_loss(Tensor(h), np.array([[1, 1, 1]]), ["numerical", "numerical",
                    "categorical"], values, targets, heads)
    assert abs(float(loss.data) - 0.55) <= 1e-6
    # batch-level normalization: (0.01 + 0.09 + 0.02) / 3
    h2 = np.zeros((2, 2, d), dtype=np.float32)
    h2[0, 0, 0], h2[0, 1, 0] = 0.6, 0.2
    h2[1, 0, 0] = 0.5 + np.sqrt(np.float32(0.02))
    loss2 = mtm_loss(Tensor(h2), np.array([[1, 1], [1, 0]]),
                     ["numerical", "numerical"], np.full((2, 2), 0.5), None, heads)
    assert abs(float(loss2.data) - 0.12 / 3) <= 1e-6
    # perfect reconstruction is exactly zero
    h3 = np.zeros((1, 2, d), dtype=np.float32)
    h3[0, :, 0] = 0.5
    loss3 = mtm_loss(Tensor(h3), np.array([[1, 1]]), ["numerical", "numerical"],
                     np.full((1, 2), 0.5), None, heads)
    assert float(loss3.data) == 0.0

    for n in (50, 128, 200):
        scores = rng.integers(0, 25, size=n) / 25.0  # quantized: ties likely
        labels = rng.integers(0, 2, size=n)
        labels[0], labels[1] = 1, 0
        assert auc(scores, labels) == auc_pair_count(scores, labels), f"n={n}"
    scores = rng.normal(size=200)
    labels = rng.integers(0, 2, size=200)
    labels[0], labels[1] = 1, 0
    assert auc(scores, labels) == auc_pair_count(scores, labels)
    print("criterion 4 PASS: supcon <= 1e-6, mtm hand cases <= 1e-6 "
          "(incl. 0.55), auc == pair-count oracle")


# criterion 5: a fresh model fine-tuned on a 500-row linearly separable table
# reaches validation AUC >= 0.95 within 200 epochs. Budget 3 minutes.
def test_criterion_05_synthetic_convergence():
    t0 = time.perf_counter()
    table = linear_table(n_rows=500, seed=0)
    cfg = TrainConfig(objective="finetune", lr=3e-3, batch_size=64,
                      max_epochs=200, patience=20, seed=0)
    res = finetune(None, table, cfg, model_config=SMALL)
    assert res.best_val_auc >= 0.95, f"val AUC {res.best_val_auc:.4f}"
    assert res.epochs_run <= 200
    elapsed = _wall(t0, 180, "synthetic convergence")
    print(f"criterion 5 PASS: val AUC {res.best_val_auc:.4f} at epoch "
          f"{res.best_epoch} ({elapsed:.0f}s)")


# criterion 6: on a 20-table synthetic family (16 pretraining, 4 held out),
# masked pretraining then 5-shot fine-tuning must beat from-scratch mean AUC
# in at least 4 of 5 seeds. Directional only. Budget 20 minutes.
def test_criterion_06_pretraining_transfer_direction():
    t0 = time.perf_counter()
    pre_tables, down_tables = make_family(n_pretrain=16, n_downstream=4, seed=0)
    wins, margins = 0, []
    for seed in range(5):
        pcfg = TrainConfig(objective="mtm", lr=1e-3, batch_size=64,
                           max_epochs=30, seed=seed, mask=MaskConfig(p_mask=0.35))
        res = pretrain_mtm(pre_tables, pcfg, SMALL)
        fcfg = TrainConfig(objective="finetune", lr=1e-3, batch_size=16,
                           max_epochs=60, patience=15, seed=seed)
        pre_aucs, scr_aucs = [], []
        for i, table in enumerate(down_tables):
            s = 1000 * seed + i
            pre_aucs.append(fewshot_transfer(res.checkpoint, table, fcfg,
                                             shots=5, seed=s))
            scr_aucs.append(fewshot_transfer(None, table, fcfg, shots=5, seed=s,
                                             model_config=SMALL))
        margin = float(np.mean(pre_aucs) - np.mean(scr_aucs))
        margins.append(margin)
        wins += margin > 0
    assert wins >= 4, f"pretraining won only {wins}/5 seeds (margins {margins})"
    elapsed = _wall(t0, 1200, "transfer experiment")
    print(f"criterion 6 PASS: pretrained beat scratch in {wins}/5 seeds, "
          f"margins {[round(m, 3) for m in margins]} ({elapsed:.0f}s)")


# criterion 7: sweeping the mask rate over {0.15, 0.35, 0.55, 0.75, 0.95},
# downstream AUC at 0.95 must fall below 0.35; the peak location itself is
# not asserted. Budget 45 minutes.
def test_criterion_07_mask_rate_sweep_shape():
    t0 = time.perf_counter()
    pre_tables, down_tables = make_family(n_pretrain=16, n_downstream=4, seed=0)
    values = [0.15, 0.35, 0.55, 0.75, 0.95]
    at_35, at_95 = [], []
    for seed in (0, 1):
        pcfg = TrainConfig(objective="mtm", lr=1e-3, batch_size=64,
                           max_epochs=40, seed=seed)
        fcfg = TrainConfig(objective="finetune", lr=1e-3, batch_size=16,
                           max_epochs=20, patience=20, seed=seed)
        result = run_sweep("mask_rate", values, pre_tables, down_tables,
                           pcfg, fcfg, model_config=SMALL, shots=5)
        assert [rec["value"] for rec in result.records] == values
        at_35.append(result.auc_at(0.35))
        at_95.append(result.auc_at(0.95))
    mean_35, mean_95 = float(np.mean(at_35)), float(np.mean(at_95))
    assert mean_95 < mean_35, (
        f"AUC at mask 0.95 ({mean_95:.4f}) not below 0.35 ({mean_35:.4f})"
    )
    elapsed = _wall(t0, 2700, "mask-rate sweep")
    print(f"criterion 7 PASS: AUC 0.35 -> {mean_35:.4f}, 0.95 -> {mean_95:.4f} "
          f"({elapsed:.0f}s)")


# criterion 8: the fixture corpus curates to exactly the recorded decisions
# and cleaned values, byte-stable across runs and equal to the committed
# golden files.
def test_criterion_08_curation_golden_files(tmp_path):
    def run(out_dir: Path) -> dict:
        results = {}
        for stem in ("clean", "anon", "holey"):
            table = load_table(FIXTURES / f"{stem}.csv", FIXTURES / f"{stem}.json")
            res = curate(table)
            results[stem] = res
            if res.kept:
                save_table(res.table, out_dir / f"{stem}.csv",
                           out_dir / f"{stem}.json")
        return results

    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    a_dir.mkdir(), b_dir.mkdir()
    first, second = run(a_dir), run(b_dir)

    assert not first["holey"].kept
    assert first["holey"].reason == "missing_fraction 0.45 > 0.40"
    assert not first["anon"].kept
    assert first["anon"].reason == "semantic_fraction 0.00 < 0.50"
    assert first["clean"].kept and second["clean"].kept

    for suffix in ("csv", "json"):
        ours = (a_dir / f"clean.{suffix}").read_bytes()
        assert ours == (b_dir / f"clean.{suffix}").read_bytes(), (
            f"clean.{suffix} not byte-stable across runs"
        )
        assert ours == (GOLDEN / f"clean.{suffix}").read_bytes(), (
            f"clean.{suffix} differs from the committed golden file"
        )
    print("criterion 8 PASS: discard reasons exact, kept table byte-equal "
          "to golden files")


# criterion 9: checkpoints round-trip bit-identically (save, load, forward 50
# random rows) and identical seeded training runs serialize byte-identically.
def test_criterion_09_checkpoint_roundtrip_and_determinism(tmp_path):
    table = family_table("ckpt", seed=5, n_rows=80, n_columns=6, with_grade=True)
    model = TableModel.build([table], SMALL, seed=2)
    rows = np.random.default_rng(9).integers(0, table.n_rows, size=50)
    h_before, f_before = model.forward_rows(table, rows, train=False)

    path = tmp_path / "model.ctb"
    save_checkpoint(path, checkpoint_from_model(model, {"stage": "test"}))
    restored = model_from_checkpoint(load_checkpoint(path), seed=2)
    h_after, f_after = restored.forward_rows(table, rows, train=False)
    assert np.array_equal(h_before.data, h_after.data)
    assert np.array_equal(f_before.data, f_after.data)

    cfg = TrainConfig(objective="mtm", lr=1e-3, batch_size=32, max_epochs=3, seed=0)
    for name in ("one.ctb", "two.ctb"):
        res = pretrain_mtm([table], cfg, SMALL)
        save_checkpoint(tmp_path / name, res.checkpoint)
    assert (tmp_path / "one.ctb").read_bytes() == (tmp_path / "two.ctb").read_bytes(), (
        "identical seeded runs produced different checkpoint bytes"
    )
    print("criterion 9 PASS: round-trip forward bit-identical, "
          "seeded runs byte-identical")


# criterion 10: the pooling ablation harness runs all four strategies end to
# end on one dataset and emits a comparison table; no ordering is asserted.
def test_criterion_10_pooling_ablation_harness():
    table = ablation_table(n_rows=80, seed=0)
    cfg = TrainConfig(objective="finetune", lr=3e-3, batch_size=16,
                      max_epochs=15, patience=15, seed=0)
    result = pooling_ablation(table, cfg, SMALL)
    assert len(result.records) == len(POOLING_STRATEGIES)
    text = result.to_table()
    for strategy in POOLING_STRATEGIES:
        assert strategy in text, f"strategy {strategy} missing from table"
    for rec in result.records:
        assert np.isfinite(rec["test_auc"]) and 0.0 <= rec["test_auc"] <= 1.0
        assert np.isfinite(rec["val_auc"])
    print("criterion 10 PASS: all four pooling strategies ran; table:\n" + text)
