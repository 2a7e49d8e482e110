"""Transformer encoder over feature embeddings.

Differences from a stock encoder, all deliberate: no positional encoding
(column order carries no meaning), one feed-forward weight set shared by all
layers, and a learnable CLS vector prepended to every row whose final state
is the row representation. Residual arrangement is post-norm: the sublayer
output is added to its input and then layer-normalized.

`exact=True` routes every matrix product and softmax through canonical-order
reductions, making the forward pass bitwise equivariant under feature
permutations; it is meant for evaluation (dropout off, small inputs).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeMismatch
from .numcore import Tensor
from .numcore import tensor as T
from .utils import derive_seed


@dataclass
class EncoderConfig:
    num_layers: int = 4
    model_dim: int = 128
    ffn_hidden: int = 256
    num_heads: int = 8
    dropout: float = 0.3
    attn_dropout: bool = True
    ffn_dropout: bool = True
    # re-add e^CLS at position 0 before every layer instead of only at the input
    reinject_cls: bool = False
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.model_dim % self.num_heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}"
            )

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


def init_encoder_params(cfg: EncoderConfig, seed: int = 0) -> dict[str, Tensor]:
    """Named parameter tensors; per-head projections are packed d x d."""
    d, ffn = cfg.model_dim, cfg.ffn_hidden

    def param(name, shape, scale):
        rng = np.random.default_rng(derive_seed(seed, "encoder", name))
        return Tensor((rng.standard_normal(shape) * scale).astype(np.float32),
                      requires_grad=True, name=name)

    def const(name, value):
        return Tensor(value, requires_grad=True, name=name)

    params = {"encoder.cls": param("encoder.cls", (1, d), 0.02)}
    for layer in range(cfg.num_layers):
        base = f"encoder.l{layer}"
        for tag in ("wq", "wk", "wv", "wo"):
            params[f"{base}.{tag}"] = param(f"{base}.{tag}", (d, d), 1.0 / np.sqrt(d))
        for ln in ("ln1", "ln2"):
            params[f"{base}.{ln}.gain"] = const(f"{base}.{ln}.gain", np.ones((1, d), np.float32))
            params[f"{base}.{ln}.bias"] = const(f"{base}.{ln}.bias", np.zeros((1, d), np.float32))
    # one FFN weight set aliased by every layer
    params["encoder.ffn.w1"] = param("encoder.ffn.w1", (d, ffn), 1.0 / np.sqrt(d))
    params["encoder.ffn.b1"] = const("encoder.ffn.b1", np.zeros((1, ffn), np.float32))
    params["encoder.ffn.w2"] = param("encoder.ffn.w2", (ffn, d), 1.0 / np.sqrt(ffn))
    params["encoder.ffn.b2"] = const("encoder.ffn.b2", np.zeros((1, d), np.float32))
    return params


def _affine_ln(x: Tensor, gain: Tensor, bias: Tensor, eps: float) -> Tensor:
    return T.add(T.mul(T.layer_norm(x, eps), gain), bias)


def multi_head_attention(h: Tensor, params: dict[str, Tensor], layer: int,
                         cfg: EncoderConfig, train: bool = False, seed: int = 0,
                         exact: bool = False) -> Tensor:
    """Scaled dot-product attention, heads packed; input and output (B, n, d)."""
    if h.ndim != 3 or h.shape[-1] != cfg.model_dim:
        raise ShapeMismatch("multi_head_attention", f"expected (B, n, {cfg.model_dim}), got {h.shape}")
    b, n, d = h.shape
    nh, dh = cfg.num_heads, cfg.head_dim
    base = f"encoder.l{layer}"

    def split_heads(x):
        return T.transpose(T.reshape(x, (b, n, nh, dh)), (0, 2, 1, 3))

    q = split_heads(T.matmul(h, params[f"{base}.wq"], exact_sum=exact))
    k = split_heads(T.matmul(h, params[f"{base}.wk"], exact_sum=exact))
    v = split_heads(T.matmul(h, params[f"{base}.wv"], exact_sum=exact))

    scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2)), exact_sum=exact)
    scores = T.mul(scores, Tensor(np.float32(1.0 / np.sqrt(dh))))
    probs = T.softmax(scores, exact_sum=exact)
    if train and cfg.attn_dropout and cfg.dropout > 0:
        probs = T.dropout(probs, cfg.dropout, derive_seed(seed, "attn", layer), train=True)
    ctx = T.matmul(probs, v, exact_sum=exact)
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, n, d))
    return T.matmul(ctx, params[f"{base}.wo"], exact_sum=exact)


def encoder_block(h: Tensor, params: dict[str, Tensor], layer: int, cfg: EncoderConfig,
                  train: bool = False, seed: int = 0, exact: bool = False) -> Tensor:
    """Post-norm block: LN(H + MHA(H)), then LN(that + shared FFN(that))."""
    base = f"encoder.l{layer}"
    attn = multi_head_attention(h, params, layer, cfg, train, seed, exact)
    h_hat = _affine_ln(T.add(h, attn), params[f"{base}.ln1.gain"],
                       params[f"{base}.ln1.bias"], cfg.ln_eps)

    hidden = T.relu(T.add(T.matmul(h_hat, params["encoder.ffn.w1"], exact_sum=exact),
                          params["encoder.ffn.b1"]))
    if train and cfg.ffn_dropout and cfg.dropout > 0:
        hidden = T.dropout(hidden, cfg.dropout, derive_seed(seed, "ffn", layer), train=True)
    ffn = T.add(T.matmul(hidden, params["encoder.ffn.w2"], exact_sum=exact),
                params["encoder.ffn.b2"])
    return _affine_ln(T.add(h_hat, ffn), params[f"{base}.ln2.gain"],
                      params[f"{base}.ln2.bias"], cfg.ln_eps)


def encode(e: Tensor, params: dict[str, Tensor], cfg: EncoderConfig,
           train: bool = False, seed: int = 0, exact: bool = False) -> tuple[Tensor, Tensor]:
    """Run the full encoder; returns (h_cls (B, d), per-feature H (B, n, d))."""
    if e.ndim == 2:
        e = T.reshape(e, (1,) + e.shape)
    if e.ndim != 3:
        raise ShapeMismatch("encode", f"expected (B, n, d), got {e.shape}")
    b, n, d = e.shape
    if n < 1:
        raise ShapeMismatch("encode", "empty feature sequence")
    if d != cfg.model_dim:
        raise ShapeMismatch("encode", f"feature width {d} != model_dim {cfg.model_dim}")

    cls_rows = T.add(Tensor(np.zeros((b, 1, d), dtype=e.dtype)), params["encoder.cls"])
    h = T.concat([cls_rows, e], axis=1)
    for layer in range(cfg.num_layers):
        if cfg.reinject_cls and layer > 0:
            h = T.concat([cls_rows, T.narrow(h, 1, 1, n + 1)], axis=1)
        h = encoder_block(h, params, layer, cfg, train, seed, exact)
    h_cls = T.reshape(T.narrow(h, 1, 0, 1), (b, d))
    return h_cls, T.narrow(h, 1, 1, n + 1)
