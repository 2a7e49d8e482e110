"""Pure NumPy implementations of the hot kernels.

Used when the compiled extension is unavailable or disabled via
TABPHRASE_PURE=1. Signatures match `_speedups` exactly; each function is
deterministic for a fixed input, but the two backends are only required to
agree within floating-point tolerance, not bit for bit.
"""

from __future__ import annotations

import numpy as np


def softmax_lastaxis(x: np.ndarray) -> np.ndarray:
    """Row-stable softmax over the last axis of a 2D array."""
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_grad(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """dx for y = softmax(x) over the last axis."""
    inner = np.sum(dy * y, axis=-1, keepdims=True)
    return y * (dy - inner)


def layernorm_lastaxis(x: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Normalize rows to zero mean / unit variance. Returns (x_hat, rstd).

    rstd has shape (rows,).
    """
    mu = np.mean(x, axis=-1, keepdims=True)
    var = np.mean((x - mu) ** 2, axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    return (x - mu) * rstd, rstd[:, 0]


def layernorm_grad(x_hat: np.ndarray, rstd: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """dx for x_hat = (x - mean(x)) * rstd."""
    m1 = np.mean(dy, axis=-1, keepdims=True)
    m2 = np.mean(dy * x_hat, axis=-1, keepdims=True)
    return rstd[:, None] * (dy - m1 - x_hat * m2)


def adam_update(
    p: np.ndarray,
    g: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    bias1: float,
    bias2: float,
) -> None:
    """One fused, in-place Adam update on flat buffers.

    bias1/bias2 are the bias-correction denominators 1 - beta^t.
    """
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    m_hat = m / bias1
    v_hat = v / bias2
    p -= lr * m_hat / (np.sqrt(v_hat) + eps)
