"""Encoder tests: attention math, block structure, permutation behavior."""

import numpy as np
import pytest

from tabphrase.errors import ConfigError, ShapeMismatch
from tabphrase.encoder import (
    EncoderConfig,
    encode,
    encoder_block,
    init_encoder_params,
    multi_head_attention,
)
from tabphrase.numcore import Tensor, backward, sum_


def small_cfg(**kw):
    defaults = dict(num_layers=2, model_dim=16, ffn_hidden=24, num_heads=4, dropout=0.0)
    defaults.update(kw)
    return EncoderConfig(**defaults)


def rand_input(b, n, d, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal((b, n, d)).astype(np.float32))


class TestAttention:
    def test_single_position_passes_through_value_path(self):
        # softmax over one key is 1, so output = x Wv Wo
        cfg = small_cfg(num_layers=1)
        params = init_encoder_params(cfg, seed=1)
        x = rand_input(1, 1, 16, seed=2)
        out = multi_head_attention(x, params, 0, cfg)
        expected = x.data @ params["encoder.l0.wv"].data @ params["encoder.l0.wo"].data
        np.testing.assert_allclose(out.data, expected, rtol=1e-4, atol=1e-5)

    def test_zero_input_zero_output(self):
        cfg = small_cfg()
        params = init_encoder_params(cfg, seed=1)
        out = multi_head_attention(Tensor(np.zeros((1, 5, 16), np.float32)), params, 0, cfg)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-6)

    def test_row_permutation_equivariance(self):
        cfg = small_cfg()
        params = init_encoder_params(cfg, seed=1)
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, 9, 16)).astype(np.float32)
        for _ in range(5):
            perm = rng.permutation(9)
            a = multi_head_attention(Tensor(x), params, 0, cfg, exact=True).data
            b = multi_head_attention(Tensor(x[:, perm]), params, 0, cfg, exact=True).data
            np.testing.assert_array_equal(a[:, perm], b)

    def test_shape_guard(self):
        cfg = small_cfg()
        params = init_encoder_params(cfg, seed=1)
        with pytest.raises(ShapeMismatch):
            multi_head_attention(Tensor(np.zeros((1, 4, 8), np.float32)), params, 0, cfg)


class TestBlock:
    def test_identical_rows_stay_identical(self):
        cfg = small_cfg()
        params = init_encoder_params(cfg, seed=4)
        row = np.random.default_rng(5).standard_normal(16).astype(np.float32)
        x = Tensor(np.tile(row, (1, 6, 1)))
        out = encoder_block(x, params, 0, cfg)
        for i in range(1, 6):
            np.testing.assert_allclose(out.data[0, i], out.data[0, 0], rtol=1e-5, atol=1e-6)

    def test_shared_ffn_accumulates_gradient_across_layers(self):
        cfg = small_cfg(num_layers=3)
        params = init_encoder_params(cfg, seed=6)
        x = rand_input(2, 4, 16, seed=7)
        h_cls, _ = encode(x, params, cfg)
        backward(sum_(h_cls), params.values())
        # single buffer, touched by all three layers
        assert params["encoder.ffn.w1"].grad is not None
        ffn_names = [n for n in params if n.startswith("encoder.ffn.")]
        assert len(ffn_names) == 4

    def test_layer_norm_moments_inside_block(self):
        cfg = small_cfg()
        params = init_encoder_params(cfg, seed=8)
        out = encoder_block(rand_input(1, 5, 16, seed=9), params, 0, cfg)
        # affine is identity at init, so outputs are normalized per position
        np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.data.var(axis=-1), 1.0, atol=1e-3)

    def test_dropout_changes_training_output_only(self):
        cfg = small_cfg(dropout=0.5)
        params = init_encoder_params(cfg, seed=10)
        x = rand_input(1, 5, 16, seed=11)
        eval_a = encoder_block(x, params, 0, cfg, train=False).data
        eval_b = encoder_block(x, params, 0, cfg, train=False).data
        np.testing.assert_array_equal(eval_a, eval_b)
        train_a = encoder_block(x, params, 0, cfg, train=True, seed=1).data
        train_b = encoder_block(x, params, 0, cfg, train=True, seed=2).data
        assert not np.array_equal(train_a, train_b)
        # same seed reproduces the same masks
        train_c = encoder_block(x, params, 0, cfg, train=True, seed=1).data
        np.testing.assert_array_equal(train_a, train_c)


class TestEncode:
    def test_zero_layers_returns_cls(self):
        cfg = small_cfg(num_layers=0)
        params = init_encoder_params(cfg, seed=12)
        h_cls, feats = encode(rand_input(3, 4, 16, seed=13), params, cfg)
        for i in range(3):
            np.testing.assert_array_equal(h_cls.data[i], params["encoder.cls"].data[0])
        assert feats.shape == (3, 4, 16)

    def test_cls_exactly_invariant_under_permutation_exact_mode(self):
        cfg = small_cfg(num_layers=2)
        params = init_encoder_params(cfg, seed=14)
        rng = np.random.default_rng(15)
        x = rng.standard_normal((1, 8, 16)).astype(np.float32)
        base_cls, base_feats = encode(Tensor(x), params, cfg, exact=True)
        for _ in range(10):
            perm = rng.permutation(8)
            p_cls, p_feats = encode(Tensor(x[:, perm]), params, cfg, exact=True)
            np.testing.assert_array_equal(p_cls.data, base_cls.data)
            np.testing.assert_array_equal(p_feats.data, base_feats.data[:, perm])

    def test_cls_approximately_invariant_fast_mode(self):
        cfg = small_cfg(num_layers=2)
        params = init_encoder_params(cfg, seed=16)
        rng = np.random.default_rng(17)
        x = rng.standard_normal((1, 10, 16)).astype(np.float32)
        base, _ = encode(Tensor(x), params, cfg)
        for _ in range(5):
            perm = rng.permutation(10)
            h, _ = encode(Tensor(x[:, perm]), params, cfg)
            dev = np.linalg.norm(h.data - base.data) / np.linalg.norm(base.data)
            assert dev <= 1e-5

    def test_empty_sequence_rejected(self):
        cfg = small_cfg()
        params = init_encoder_params(cfg, seed=18)
        with pytest.raises(ShapeMismatch):
            encode(Tensor(np.zeros((1, 0, 16), np.float32)), params, cfg)

    def test_2d_input_promoted(self):
        cfg = small_cfg()
        params = init_encoder_params(cfg, seed=19)
        h_cls, feats = encode(rand_input(1, 5, 16, seed=20), params, cfg)
        h2, f2 = encode(Tensor(rand_input(1, 5, 16, seed=20).data[0]), params, cfg)
        np.testing.assert_array_equal(h_cls.data, h2.data)

    def test_reinjection_flag_changes_output(self):
        params = init_encoder_params(small_cfg(), seed=21)
        x = rand_input(1, 5, 16, seed=22)
        plain, _ = encode(x, params, small_cfg())
        reinj, _ = encode(x, params, small_cfg(reinject_cls=True))
        assert not np.array_equal(plain.data, reinj.data)

    def test_batched_matches_per_row(self):
        cfg = small_cfg()
        params = init_encoder_params(cfg, seed=23)
        x = rand_input(4, 6, 16, seed=24)
        batch_cls, _ = encode(x, params, cfg)
        for i in range(4):
            single, _ = encode(Tensor(x.data[i : i + 1]), params, cfg)
            np.testing.assert_allclose(batch_cls.data[i], single.data[0], rtol=1e-5, atol=1e-6)

    def test_head_divisibility_enforced(self):
        with pytest.raises(ConfigError):
            EncoderConfig(model_dim=10, num_heads=4)
