"""Dense tensors with reverse-mode automatic differentiation.

Define-by-run: each operation computes its result eagerly with NumPy and,
when any input requires gradients, records a closure that propagates the
output adjoint to its parents. `backward` replays the recorded closures in
reverse topological order. Values are float32 by default; gradient checks
run the same graph in float64.

Conventions fixed here so tests are deterministic:
  - ReLU's derivative at exactly 0 is 0.
  - Dropout is an explicit node with its own seed and is skipped entirely
    when `train` is false.
  - `exact_sum` variants of softmax/matmul reduce in canonical (sorted)
    order, making attention forwards bitwise equivariant under column
    permutations; they are meant for evaluation-mode passes.
"""

from __future__ import annotations

import itertools
from typing import Iterable, Sequence

import numpy as np

from ..errors import NanProduced, ShapeMismatch
from . import kernels

DEFAULT_DTYPE = np.float32

_op_serial = itertools.count()
_debug_nan = False


def set_nan_debug(enabled: bool) -> None:
    """Toggle per-operation NaN checks (off by default; costs a scan per op)."""
    global _debug_nan
    _debug_nan = enabled


class nan_debug:
    """Context manager form of `set_nan_debug`."""

    def __init__(self, enabled: bool = True):
        self.enabled = enabled

    def __enter__(self):
        self._prev = _debug_nan
        set_nan_debug(self.enabled)

    def __exit__(self, *exc):
        set_nan_debug(self._prev)


class Tensor:
    """An n-d float array that may participate in a recorded graph."""

    __slots__ = ("data", "grad", "requires_grad", "op", "op_id", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, op: str = "leaf", name: str | None = None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self.op_id = f"{op}#{next(_op_serial)}"
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def detach(self) -> "Tensor":
        """A constant view of this value, cut out of the graph."""
        return Tensor(self.data, requires_grad=False, op="detach")

    def grad_array(self) -> np.ndarray:
        """The accumulated gradient, or zeros if this leaf was unused."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def backward(self, params: Iterable["Tensor"] | None = None) -> None:
        backward(self, params)

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, op={self.op}{tag}, requires_grad={self.requires_grad})"

    # operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, _lift(other, self.dtype))

    def __radd__(self, other):
        return add(_lift(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self.dtype))

    def __rsub__(self, other):
        return sub(_lift(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _lift(other, self.dtype))

    def __rmul__(self, other):
        return mul(_lift(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _lift(other, self.dtype))

    def __neg__(self):
        return mul(self, _lift(-1.0, self.dtype))

    def __matmul__(self, other):
        return matmul(self, _lift(other, self.dtype))


def _lift(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype), op="const")


def _finish(out: Tensor, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Attach graph bookkeeping to a freshly computed node."""
    if _debug_nan and np.isnan(out.data).any():
        raise NanProduced(out.op_id)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    # Adjoints are never mutated in place after being stored, so sharing the
    # incoming array on the first accumulation is safe.
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape` after NumPy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Reverse-mode sweep from a scalar loss.

    Gradients accumulate on every reachable tensor with requires_grad; if
    `params` is given, parameters the loss never touched get explicit zero
    gradients so optimizers see a complete set.
    """
    if loss.data.size != 1:
        raise ShapeMismatch("backward", f"loss must be scalar, got shape {loss.data.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()
            # Free the closure so intermediate buffers can be collected.
            node._backward = None
            node._parents = ()

    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeMismatch("add", f"cannot broadcast {a.shape} with {b.shape}") from None
    out = Tensor(data, op="add")

    def _bw():
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(out.grad, b.shape))

    return _finish(out, (a, b), _bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeMismatch("sub", f"cannot broadcast {a.shape} with {b.shape}") from None
    out = Tensor(data, op="sub")

    def _bw():
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-out.grad, b.shape))

    return _finish(out, (a, b), _bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeMismatch("mul", f"cannot broadcast {a.shape} with {b.shape}") from None
    out = Tensor(data, op="mul")

    def _bw():
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(out.grad * a.data, b.shape))

    return _finish(out, (a, b), _bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data / b.data
    except ValueError:
        raise ShapeMismatch("div", f"cannot broadcast {a.shape} with {b.shape}") from None
    out = Tensor(data, op="div")

    def _bw():
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad / b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-out.grad * a.data / (b.data * b.data), b.shape))

    return _finish(out, (a, b), _bw)


def matmul(a: Tensor, b: Tensor, exact_sum: bool = False) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul", f"operands must be at least 2-D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch("matmul", f"inner dimensions differ: {a.shape} @ {b.shape}")
    if exact_sum:
        data = kernels.exact.matmul_sorted(a.data, b.data)
    else:
        data = a.data @ b.data
    out = Tensor(data, op="matmul")

    def _bw():
        if a.requires_grad:
            ga = out.grad @ np.swapaxes(b.data, -1, -2)
            _accum(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ out.grad
            _accum(b, _unbroadcast(gb, b.shape))

    return _finish(out, (a, b), _bw)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0), op="relu")

    def _bw():
        if x.requires_grad:
            # convention: derivative is 0 at exactly 0
            _accum(x, out.grad * (x.data > 0))

    return _finish(out, (x,), _bw)


def exp(x: Tensor) -> Tensor:
    out = Tensor(np.exp(x.data), op="exp")

    def _bw():
        if x.requires_grad:
            _accum(x, out.grad * out.data)

    return _finish(out, (x,), _bw)


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data), op="log")

    def _bw():
        if x.requires_grad:
            _accum(x, out.grad / x.data)

    return _finish(out, (x,), _bw)


def power(x: Tensor, exponent: float) -> Tensor:
    """x ** exponent for a constant exponent."""
    out = Tensor(x.data**exponent, op="power")

    def _bw():
        if x.requires_grad:
            _accum(x, out.grad * exponent * x.data ** (exponent - 1.0))

    return _finish(out, (x,), _bw)


def softmax(x: Tensor, exact_sum: bool = False) -> Tensor:
    """Softmax over the last axis; `exact_sum` uses the canonical-order denominator."""
    flat = np.ascontiguousarray(x.data.reshape(-1, x.shape[-1]))
    if exact_sum:
        y = kernels.exact.softmax_lastaxis_sorted(flat)
    else:
        y = kernels.impl.softmax_lastaxis(flat)
    out = Tensor(y.reshape(x.shape), op="softmax")

    def _bw():
        if x.requires_grad:
            g = kernels.impl.softmax_grad(
                np.ascontiguousarray(out.data.reshape(-1, x.shape[-1])),
                np.ascontiguousarray(out.grad.reshape(-1, x.shape[-1])),
            )
            _accum(x, g.reshape(x.shape))

    return _finish(out, (x,), _bw)


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine part)."""
    flat = np.ascontiguousarray(x.data.reshape(-1, x.shape[-1]))
    x_hat, rstd = kernels.impl.layernorm_lastaxis(flat, eps)
    out = Tensor(x_hat.reshape(x.shape), op="layer_norm")

    def _bw():
        if x.requires_grad:
            g = kernels.impl.layernorm_grad(
                x_hat, rstd, np.ascontiguousarray(out.grad.reshape(-1, x.shape[-1]))
            )
            _accum(x, g.reshape(x.shape))

    return _finish(out, (x,), _bw)


def mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = Tensor(np.mean(x.data, axis=axis, keepdims=keepdims), op="mean")
    count = x.data.size if axis is None else x.shape[axis]

    def _bw():
        if x.requires_grad:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(x, np.broadcast_to(g, x.shape) / count)

    return _finish(out, (x,), _bw)


def sum_(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = Tensor(np.sum(x.data, axis=axis, keepdims=keepdims), op="sum")

    def _bw():
        if x.requires_grad:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(x, np.broadcast_to(g, x.shape).copy())

    return _finish(out, (x,), _bw)


def amax(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max along an axis; the gradient flows to the first maximizing entry."""
    out = Tensor(np.max(x.data, axis=axis, keepdims=keepdims), op="amax")
    idx = np.argmax(x.data, axis=axis)

    def _bw():
        if x.requires_grad:
            g = out.grad if keepdims else np.expand_dims(out.grad, axis)
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, np.expand_dims(idx, axis), g, axis)
            _accum(x, gx)

    return _finish(out, (x,), _bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeMismatch("concat", "empty input list")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as err:
        raise ShapeMismatch("concat", str(err)) from None
    out = Tensor(data, op="concat")
    sizes = [t.shape[axis] for t in tensors]

    def _bw():
        offset = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                sl = [slice(None)] * out.grad.ndim
                sl[axis] = slice(offset, offset + size)
                _accum(t, out.grad[tuple(sl)])
            offset += size

    return _finish(out, tuple(tensors), _bw)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = Tensor(x.data.reshape(shape), op="reshape")

    def _bw():
        if x.requires_grad:
            _accum(x, out.grad.reshape(x.shape))

    return _finish(out, (x,), _bw)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    out = Tensor(np.transpose(x.data, axes), op="transpose")
    inverse = np.argsort(axes)

    def _bw():
        if x.requires_grad:
            _accum(x, np.transpose(out.grad, inverse))

    return _finish(out, (x,), _bw)


def narrow(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Slice [start:stop) along one axis."""
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, stop)
    out = Tensor(x.data[tuple(sl)], op="narrow")

    def _bw():
        if x.requires_grad:
            g = np.zeros_like(x.data)
            g[tuple(sl)] = out.grad
            _accum(x, g)

    return _finish(out, (x,), _bw)


def take_rows(x: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of a 2-D tensor; duplicate indices accumulate on backward."""
    if x.ndim != 2:
        raise ShapeMismatch("take_rows", f"expected 2-D tensor, got {x.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    out = Tensor(x.data[idx], op="take_rows")

    def _bw():
        if x.requires_grad:
            g = np.zeros_like(x.data)
            np.add.at(g, idx, out.grad)
            _accum(x, g)

    return _finish(out, (x,), _bw)


def gather_rows_cols(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """From x of shape (B, n, d) select (rows[s], cols[s, j]) -> (S, m, d)."""
    if x.ndim != 3:
        raise ShapeMismatch("gather_rows_cols", f"expected 3-D tensor, got {x.shape}")
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    out = Tensor(x.data[rows[:, None], cols], op="gather_rows_cols")

    def _bw():
        if x.requires_grad:
            g = np.zeros_like(x.data)
            np.add.at(g, (rows[:, None], cols), out.grad)
            _accum(x, g)

    return _finish(out, (x,), _bw)


def segment_mean(x: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Mean of the rows of x (T, d) grouped by segment id -> (num_segments, d).

    Every segment must be non-empty.
    """
    if x.ndim != 2:
        raise ShapeMismatch("segment_mean", f"expected 2-D tensor, got {x.shape}")
    seg = np.asarray(segment_ids, dtype=np.int64)
    counts = np.bincount(seg, minlength=num_segments)
    if np.any(counts == 0):
        raise ShapeMismatch("segment_mean", "empty segment")
    sums = np.zeros((num_segments, x.shape[1]), dtype=x.dtype)
    np.add.at(sums, seg, x.data)
    out = Tensor(sums / counts[:, None].astype(x.dtype), op="segment_mean")

    def _bw():
        if x.requires_grad:
            _accum(x, out.grad[seg] / counts[seg][:, None].astype(x.dtype))

    return _finish(out, (x,), _bw)


def dropout(x: Tensor, rate: float, seed: int, train: bool = True) -> Tensor:
    """Inverted dropout as an explicit node with its own seed.

    Disabled (identity, no node) when train is false or rate is 0.
    """
    if not train or rate <= 0.0:
        return x
    if not 0.0 < rate < 1.0:
        raise ShapeMismatch("dropout", f"rate must be in (0, 1), got {rate}")
    keep = np.random.default_rng(seed).random(x.shape) >= rate
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    mask = keep.astype(x.dtype) * scale
    out = Tensor(x.data * mask, op="dropout")

    def _bw():
        if x.requires_grad:
            _accum(x, out.grad * mask)

    return _finish(out, (x,), _bw)


def cosine_sim(a: Tensor, b: Tensor, eps: float = 1e-12) -> Tensor:
    """Cosine similarity along the last axis; a and b must have equal shapes."""
    if a.shape != b.shape:
        raise ShapeMismatch("cosine_sim", f"shapes differ: {a.shape} vs {b.shape}")
    na = np.sqrt(np.sum(a.data * a.data, axis=-1))
    nb = np.sqrt(np.sum(b.data * b.data, axis=-1))
    na = np.maximum(na, eps)
    nb = np.maximum(nb, eps)
    dot = np.sum(a.data * b.data, axis=-1)
    c = dot / (na * nb)
    out = Tensor(c, op="cosine_sim")

    def _bw():
        g = out.grad[..., None]
        if a.requires_grad:
            ga = g * (b.data / (na * nb)[..., None] - (c / (na * na))[..., None] * a.data)
            _accum(a, ga)
        if b.requires_grad:
            gb = g * (a.data / (na * nb)[..., None] - (c / (nb * nb))[..., None] * b.data)
            _accum(b, gb)

    return _finish(out, (a, b), _bw)


def squared_error(a: Tensor, b: Tensor) -> Tensor:
    """(a - b)^2 elementwise."""
    if a.shape != b.shape:
        raise ShapeMismatch("squared_error", f"shapes differ: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    out = Tensor(diff * diff, op="squared_error")

    def _bw():
        if a.requires_grad:
            _accum(a, out.grad * 2.0 * diff)
        if b.requires_grad:
            _accum(b, out.grad * -2.0 * diff)

    return _finish(out, (a, b), _bw)


# ---------------------------------------------------------------------------
# composites used throughout the model
# ---------------------------------------------------------------------------


def log_softmax(x: Tensor) -> Tensor:
    """Numerically stable log(softmax(x)) over the last axis."""
    shift = sub(x, amax(x, axis=-1, keepdims=True).detach())
    return sub(shift, log(sum_(exp(shift), axis=-1, keepdims=True)))


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Rows of x scaled to unit L2 norm (last axis)."""
    ss = sum_(mul(x, x), axis=-1, keepdims=True)
    return mul(x, power(ss + eps, -0.5))
