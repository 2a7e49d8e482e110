"""Canonical-order reductions for evaluation-mode forward passes.

Reordering a table's columns permutes the key axis of every attention
reduction, and floating-point addition is not associative, so a naive sum
gives column-order-dependent results in the last few ulps. These variants
sort the summands into a canonical (value) order before reducing, which
makes the encoder's evaluation forward bitwise equivariant under column
permutations at any precision. They cost a sort per reduction, so the
training path uses the plain kernels instead.

Shared by both kernel backends: canonicalization is about summation order,
not speed.
"""

from __future__ import annotations

import numpy as np


def _sorted_sum(x: np.ndarray, axis: int) -> np.ndarray:
    """Sum along `axis` after sorting summands into ascending order.

    Sorting fixes a canonical sequence per output element; the sequential
    cumsum then makes the result independent of the summands' original
    order. Equal values are interchangeable, so ties need no tiebreak.
    """
    s = np.sort(x, axis=axis)
    return np.take(np.cumsum(s, axis=axis), -1, axis=axis)


def softmax_lastaxis_sorted(x: np.ndarray) -> np.ndarray:
    """Softmax whose denominator is order-independent over the last axis."""
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    denom = _sorted_sum(e, axis=-1)[..., None]
    return e / denom


def matmul_sorted(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b with the contraction performed in canonical (sorted) order.

    Materializes the elementwise products, so it is meant for the small
    matrices seen during evaluation, not for training throughput.
    """
    prod = a[..., :, :, None] * b[..., None, :, :]
    return _sorted_sum(prod, axis=-2)
