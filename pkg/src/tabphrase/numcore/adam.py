"""Adam optimizer over named parameter tensors."""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .tensor import Tensor


class Adam:
    """Standard Adam with bias correction.

    A step whose incoming gradients contain any non-finite value is skipped
    entirely (no parameter or moment updates, no timestep increment); the
    incident is reported through the optional `on_skip` callback so callers
    can log it.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        on_skip=None,
    ):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.on_skip = on_skip
        self.t = 0
        self.skipped = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> bool:
        """Apply one update; returns False when the step was skipped."""
        grads = {k: p.grad_array() for k, p in self.params.items()}
        for k, g in grads.items():
            if not np.isfinite(g).all():
                self.skipped += 1
                if self.on_skip is not None:
                    self.on_skip(k, self.t + 1)
                return False
        self.t += 1
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = np.ascontiguousarray(grads[k], dtype=p.data.dtype)
            kernels.impl.adam_update(
                p.data.reshape(-1), g.reshape(-1),
                self._m[k].reshape(-1), self._v[k].reshape(-1),
                self.lr, self.beta1, self.beta2, self.eps, bias1, bias2,
            )
        return True

    def state(self) -> dict:
        """Moment buffers plus timestep, for exact resume."""
        return {"t": self.t, "m": self._m, "v": self._v}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        for k in self.params:
            self._m[k][...] = state["m"][k]
            self._v[k][...] = state["v"][k]


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is at most max_norm.

    Returns the pre-clip norm.
    """
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm
