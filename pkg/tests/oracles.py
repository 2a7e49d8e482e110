"""Hand-rolled reference implementations shared by the test modules.

Everything here is deliberately naive (explicit loops, float64) and built
only from the mathematical definitions, so it can cross-check the vectorized
library code without sharing any of its machinery.
"""

import numpy as np

from tabphrase.numcore import Tensor
from tabphrase.objectives import MtmHeads


def supcon_reference(z, labels, tau, include_anchor=False):
    # deliberately naive triple loop, float64 throughout
    z = np.asarray(z, dtype=np.float64)
    z = z / np.linalg.norm(z, axis=1, keepdims=True)
    m = len(z)
    total, n_valid = 0.0, 0
    for i in range(m):
        positives = [p for p in range(m) if p != i and labels[p] == labels[i]]
        if not positives:
            continue
        n_valid += 1
        inner = 0.0
        for p in positives:
            denom = 0.0
            for j in range(m):
                if j == i and not include_anchor:
                    continue
                denom += np.exp(float(z[i] @ z[j]) / tau)
            inner += -np.log(np.exp(float(z[i] @ z[p]) / tau) / denom)
        total += inner / len(positives)
    return total / n_valid


def auc_pair_count(scores, labels):
    """O(n^2) oracle: count concordant pairs, ties half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    hi = labels == labels.max()
    wins, total = 0.0, 0
    for i in np.flatnonzero(hi):
        for j in np.flatnonzero(~hi):
            total += 1
            if scores[i] > scores[j]:
                wins += 1.0
            elif scores[i] == scores[j]:
                wins += 0.5
    return wins / total


def fixed_mtm_heads(d):
    """num_proj reads coordinate 0, cat_proj is the identity."""
    num = np.zeros((d, 1), dtype=np.float32)
    num[0, 0] = 1.0
    return MtmHeads(
        Tensor(num, requires_grad=True, name="mtm.num_proj"),
        Tensor(np.eye(d, dtype=np.float32), requires_grad=True, name="mtm.cat_proj"),
        Tensor(np.zeros((1, d), dtype=np.float32), requires_grad=True, name="mtm.mask_token"),
    )
