"""Pre-training objectives: masked-feature reconstruction and supervised
contrastive learning over feature subsets.

Masking draws a Bernoulli mask per row with per-kind rates derived from the
overall target rate and a 7:3 categorical:numerical split of masked
positions. Masked positions are replaced by a shared learnable mask vector
offset by the column's header embedding. Reconstruction projects encoder
outputs back to the normalized value (numerical) or to the value's own
pooled embedding (categorical, scored by cosine; deliberately not a
cross-entropy over category ids).

The contrastive objective encodes several random feature subsets per row,
labels them with the parent row's label, and pulls same-label subset
representations together against the rest of the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeMismatch, TrainingError
from .ingest import KIND_CATEGORICAL, KIND_NUMERICAL
from .numcore import Tensor
from .numcore import tensor as T


@dataclass
class MaskConfig:
    p_mask: float = 0.35
    cat_share: float = 0.7  # fraction of masked positions that should be categorical
    masked_only: bool = True  # False: reconstruction terms over all positions
    max_resample: int = 100


@dataclass
class MaskPlan:
    m: np.ndarray  # (n_features,) 0/1, aligned with the kind order it was drawn for
    p_mask: float
    cat_share: float


@dataclass
class ContrastiveConfig:
    k: int = 3
    q: float = 0.5
    tau: float = 0.1
    include_anchor_in_denominator: bool = False
    max_resample: int = 100

    def __post_init__(self):
        if not self.tau > 0:
            raise DataError(f"temperature must be positive, got {self.tau}")
        if not 0.0 < self.q < 1.0:
            raise DataError(f"inclusion probability must be in (0, 1), got {self.q}")


@dataclass
class SubsetSample:
    parent_row: int
    features: np.ndarray
    label: int
    subset_id: int


class MtmHeads:
    """Reconstruction parameters: num_proj (d, 1), cat_proj (d, d), mask_token (1, d)."""

    def __init__(self, num_proj: Tensor, cat_proj: Tensor, mask_token: Tensor):
        self.num_proj = num_proj
        self.cat_proj = cat_proj
        self.mask_token = mask_token

    @staticmethod
    def init_params(model_dim: int, seed: int = 0) -> dict[str, Tensor]:
        from .utils import derive_seed

        def param(name, shape, scale):
            rng = np.random.default_rng(derive_seed(seed, "mtm", name))
            return Tensor((rng.standard_normal(shape) * scale).astype(np.float32),
                          requires_grad=True, name=name)

        return {
            "mtm.num_proj": param("mtm.num_proj", (model_dim, 1), 1.0 / np.sqrt(model_dim)),
            "mtm.cat_proj": param("mtm.cat_proj", (model_dim, model_dim), 1.0 / np.sqrt(model_dim)),
            "mtm.mask_token": param("mtm.mask_token", (1, model_dim), 0.02),
        }

    @classmethod
    def from_params(cls, params: dict[str, Tensor]) -> "MtmHeads":
        return cls(params["mtm.num_proj"], params["mtm.cat_proj"], params["mtm.mask_token"])


def mask_rates(n_cat: int, n_num: int, p_mask: float, cat_share: float = 0.7) -> tuple[float, float]:
    """Per-kind Bernoulli rates hitting the overall rate and kind split in
    expectation; when one kind is scarce its rate clamps at 1 and the excess
    moves to the other kind."""
    total = p_mask * (n_cat + n_num)
    if n_cat == 0:
        return 0.0, min(1.0, total / n_num)
    if n_num == 0:
        return min(1.0, total / n_cat), 0.0
    rate_cat = min(1.0, cat_share * total / n_cat)
    rate_num = (total - n_cat * rate_cat) / n_num
    return rate_cat, float(np.clip(rate_num, 0.0, 1.0))


def sample_mask(n_cat: int, n_num: int, config: MaskConfig, rng: np.random.Generator,
                kind_order: list[str] | None = None) -> MaskPlan:
    """One row's Bernoulli mask; resamples until at least one position is
    masked and one is not.

    `kind_order` aligns the mask with an interleaved schema; by default all
    categorical positions precede numerical ones.
    """
    n = n_cat + n_num
    if n < 2:
        raise DataError(f"masking needs at least 2 features, got {n}")
    if kind_order is None:
        kind_order = [KIND_CATEGORICAL] * n_cat + [KIND_NUMERICAL] * n_num
    if len(kind_order) != n:
        raise ShapeMismatch("sample_mask", f"kind_order length {len(kind_order)} != {n}")
    rate_cat, rate_num = mask_rates(n_cat, n_num, config.p_mask, config.cat_share)
    if rate_cat == 0.0 and rate_num == 0.0:
        raise TrainingError(f"degenerate rate: p_mask={config.p_mask} masks nothing")
    rates = np.array([rate_cat if k == KIND_CATEGORICAL else rate_num for k in kind_order])
    for _ in range(config.max_resample):
        m = (rng.random(n) < rates).astype(np.int8)
        if 0 < m.sum() < n:
            return MaskPlan(m=m, p_mask=config.p_mask, cat_share=config.cat_share)
    raise TrainingError(
        f"degenerate rate: could not draw a usable mask in {config.max_resample} tries "
        f"(p_mask={config.p_mask}, rates cat={rate_cat:.3f} num={rate_num:.3f})"
    )


def sample_mask_batch(batch: int, kind_order: list[str], config: MaskConfig,
                      rng: np.random.Generator) -> np.ndarray:
    """(batch, n_features) stacked per-row masks."""
    n_cat = sum(1 for k in kind_order if k == KIND_CATEGORICAL)
    n_num = len(kind_order) - n_cat
    return np.stack([
        sample_mask(n_cat, n_num, config, rng, kind_order).m for _ in range(batch)
    ])


def apply_mask(e: Tensor, masks: np.ndarray, heads: MtmHeads, headers: Tensor) -> Tensor:
    """Replace masked positions of E with mask_token + header; others pass through.

    e: (batch, n, d); masks: (batch, n) or (n,); headers: (n, d).
    """
    if e.ndim == 2:
        e = T.reshape(e, (1,) + e.shape)
    masks = np.asarray(masks)
    if masks.ndim == 1:
        masks = masks[None, :]
    if masks.shape != e.shape[:2]:
        raise ShapeMismatch("apply_mask", f"mask shape {masks.shape} != batch/features {e.shape[:2]}")
    if headers.shape != (e.shape[1], e.shape[2]):
        raise ShapeMismatch("apply_mask", f"headers {headers.shape} != {(e.shape[1], e.shape[2])}")
    on = Tensor(masks[:, :, None].astype(e.data.dtype), op="const")
    off = Tensor((1 - masks)[:, :, None].astype(e.data.dtype), op="const")
    replacement = T.add(heads.mask_token, headers)  # (n, d)
    return T.add(T.mul(e, off), T.mul(replacement, on))


def mtm_loss(h: Tensor, masks: np.ndarray, kind_order: list[str],
             numeric_values: np.ndarray | None, cat_targets: np.ndarray | None,
             heads: MtmHeads, masked_only: bool = True) -> Tensor:
    """Reconstruction loss over the encoder's per-feature outputs.

    h: (batch, n, d); masks: (batch, n); numeric_values: (batch, n) original
    normalized values (read at numerical positions); cat_targets: (batch, n, d)
    value-only target embeddings (read at categorical positions, constants).
    Each kind's summed error is divided by that kind's masked-position count
    over the whole batch; a kind with no masked positions contributes 0.
    """
    if h.ndim != 3:
        raise ShapeMismatch("mtm_loss", f"expected (batch, n, d), got {h.shape}")
    b, n, d = h.shape
    masks = np.asarray(masks)
    if masks.shape != (b, n):
        raise ShapeMismatch("mtm_loss", f"mask shape {masks.shape} != {(b, n)}")
    kinds = np.array([k == KIND_NUMERICAL for k in kind_order])
    if kinds.size != n:
        raise ShapeMismatch("mtm_loss", f"kind_order length {kinds.size} != {n}")

    selected = masks.astype(bool) if masked_only else np.ones_like(masks, dtype=bool)
    num_sel = selected & kinds[None, :]
    cat_sel = selected & ~kinds[None, :]
    n_num, n_cat = int(num_sel.sum()), int(cat_sel.sum())
    if n_num and numeric_values is None:
        raise DataError("numeric positions selected but no numeric targets given")
    if n_cat and cat_targets is None:
        raise DataError("categorical positions selected but no categorical targets given")

    flat = T.reshape(h, (b * n, d))
    terms = []
    if n_num:
        rows = np.flatnonzero(num_sel.reshape(-1))
        z = T.reshape(T.matmul(T.take_rows(flat, rows), heads.num_proj), (n_num,))
        x = Tensor(numeric_values.reshape(-1)[rows].astype(h.data.dtype), op="const")
        terms.append(T.mul(T.sum_(T.squared_error(x, z)), Tensor(np.float32(1.0 / n_num))))
    if n_cat:
        rows = np.flatnonzero(cat_sel.reshape(-1))
        z = T.matmul(T.take_rows(flat, rows), heads.cat_proj)
        e = Tensor(cat_targets.reshape(b * n, d)[rows].astype(h.data.dtype), op="const")
        sims = T.cosine_sim(e, z)
        ones = Tensor(np.ones(n_cat, dtype=h.data.dtype))
        terms.append(T.mul(T.sum_(T.sub(ones, sims)), Tensor(np.float32(1.0 / n_cat))))
    if not terms:
        raise DataError("no positions selected for reconstruction")
    loss = terms[0]
    for t in terms[1:]:
        loss = T.add(loss, t)
    return loss


def sample_subsets(n_features: int, parent_row: int, label: int,
                   config: ContrastiveConfig, rng: np.random.Generator) -> list[SubsetSample]:
    """k random feature subsets of one row; each feature joins a subset with
    probability q, empty draws are retried. Subsets may overlap and every
    subset inherits the parent label."""
    if n_features < 2:
        raise DataError(f"subset sampling needs at least 2 features, got {n_features}")
    out = []
    for s in range(config.k):
        for _ in range(config.max_resample):
            chosen = np.flatnonzero(rng.random(n_features) < config.q)
            if chosen.size:
                break
        else:
            raise TrainingError(f"could not draw a non-empty subset (q={config.q})")
        out.append(SubsetSample(parent_row=parent_row, features=chosen,
                                label=int(label), subset_id=s + 1))
    return out


def supcon_loss(z: Tensor, labels: np.ndarray, config: ContrastiveConfig) -> Tensor:
    """Supervised contrastive loss over subset representations.

    z: (m, d); labels: (m,). Embeddings are L2-normalized, similarities are
    cosine over temperature tau. The denominator runs over all other batch
    members (anchor excluded unless configured otherwise); anchors without
    positives are skipped and do not count toward the average.
    """
    if z.ndim != 2:
        raise ShapeMismatch("supcon_loss", f"expected (m, d), got {z.shape}")
    labels = np.asarray(labels)
    m = z.shape[0]
    if labels.shape != (m,):
        raise ShapeMismatch("supcon_loss", f"labels shape {labels.shape} != ({m},)")
    if m < 2:
        raise DataError("contrastive batch needs at least 2 members")
    if len(np.unique(labels)) < 2:
        raise TrainingError("no negatives: all batch members share one label")

    same = labels[:, None] == labels[None, :]
    eye = np.eye(m, dtype=bool)
    pos = same & ~eye
    pos_counts = pos.sum(axis=1)
    valid = pos_counts > 0
    if not valid.any():
        raise TrainingError("no positive pairs in batch")

    zn = T.l2_normalize(z)
    logits = T.mul(T.matmul(zn, T.transpose(zn, (1, 0))), Tensor(np.float32(1.0 / config.tau)))

    denom_mask = (~eye if not config.include_anchor_in_denominator
                  else np.ones((m, m), dtype=bool))
    # constant per-row shift for exp stability; detached by construction
    shift_np = np.where(denom_mask, logits.data, -np.inf).max(axis=1, keepdims=True)
    shifted = T.sub(logits, Tensor(shift_np.astype(logits.data.dtype), op="const"))
    exp_shifted = T.exp(shifted)
    denom = T.sum_(T.mul(exp_shifted, Tensor(denom_mask.astype(logits.data.dtype))),
                   axis=1, keepdims=True)
    # psi[i, p] = log(denom_i) - shifted[i, p]
    psi = T.sub(T.log(denom), shifted)

    weights = np.zeros((m, m), dtype=np.float64)
    n_valid = int(valid.sum())
    weights[valid] = pos[valid] / (pos_counts[valid, None] * n_valid)
    return T.sum_(T.mul(psi, Tensor(weights.astype(logits.data.dtype))))
