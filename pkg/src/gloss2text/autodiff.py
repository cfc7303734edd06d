"""Dense-tensor arithmetic with reverse-mode differentiation.

A Tensor wraps a contiguous numpy array plus an optional gradient. Every
operation that touches a gradient-requiring input records its parents and a
vector-Jacobian closure; ``backward`` replays the recorded graph in reverse
topological order. Gradients accumulate into ``.grad`` until explicitly
zeroed, so calling backward twice doubles them.

Storage dtype follows the inputs: the model trains in float32, the
gradient-check suite runs the same ops in float64.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from . import kernels
from .errors import ContractError, ShapeError

_grad_enabled = True
_debug_check_finite = False


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def set_debug_finite_checks(enabled: bool) -> None:
    """When enabled, every forward op asserts its output is finite."""
    global _debug_check_finite
    _debug_check_finite = bool(enabled)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._vjp = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def grad_array(self) -> np.ndarray:
        """Accumulated gradient, or zeros when the tensor is off the loss path."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def backward(self) -> None:
        backward(self)

    # operator sugar; full broadcasting rules live in the module functions
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return add(self, neg(_wrap(other, self.dtype)))

    def __rsub__(self, other):
        return add(_wrap(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents, vjp) -> Tensor:
    if _debug_check_finite and not np.all(np.isfinite(data)):
        raise ContractError("non-finite values in forward output")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def topo_order(root: Tensor) -> list[Tensor]:
    """All reachable graph nodes, parents strictly before children."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into .grad for every requires-grad node."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = topo_order(loss)
    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad += g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = flowing.get(id(parent))
            # vjps may hand back views or shared arrays; never add in place
            flowing[id(parent)] = pg if acc is None else acc + pg


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(data, (a, b), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    if b.ndim == 2 and a.ndim > 2:
        # dense-layer case: collapse the leading axes into one GEMM instead of
        # letting numpy broadcast b into a loop of small ones
        lead = a.shape[:-1]
        a2 = a.data.reshape(-1, a.shape[-1])
        data = (a2 @ b.data).reshape(*lead, b.shape[-1])

        def vjp(g):
            g2 = g.reshape(-1, b.shape[-1])
            return (g2 @ b.data.T).reshape(a.shape), a2.T @ g2

        return _make(data, (a, b), vjp)

    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from exc

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(data, (a, b), vjp)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def vjp(g):
        return (g * (a.data > 0),)

    return _make(data, (a,), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    data = np.ascontiguousarray(a.data.reshape(shape))

    def vjp(g):
        return (g.reshape(a.shape),)

    return _make(data, (a,), vjp)


def transpose(a: Tensor, axes=None) -> Tensor:
    data = np.ascontiguousarray(np.transpose(a.data, axes))
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def vjp(g):
        return (np.ascontiguousarray(np.transpose(g, inv)),)

    return _make(data, (a,), vjp)


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    data = np.ascontiguousarray(np.swapaxes(a.data, ax1, ax2))

    def vjp(g):
        return (np.ascontiguousarray(np.swapaxes(g, ax1, ax2)),)

    return _make(data, (a,), vjp)


def tsum(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum(), dtype=a.dtype)

    def vjp(g):
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

    return _make(data, (a,), vjp)


def tmean(a: Tensor) -> Tensor:
    n = a.size
    data = np.asarray(a.data.mean(), dtype=a.dtype)

    def vjp(g):
        return ((np.broadcast_to(g, a.shape) / n).astype(a.dtype, copy=True),)

    return _make(data, (a,), vjp)


def _rows2d(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.reshape(-1, x.shape[-1]))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    moved = axis not in (-1, a.ndim - 1)
    x = np.moveaxis(a.data, axis, -1) if moved else a.data
    y2 = kernels.softmax_rows(_rows2d(x))
    y = y2.reshape(x.shape)
    data = np.ascontiguousarray(np.moveaxis(y, -1, axis)) if moved else y

    def vjp(g):
        gm = np.moveaxis(g, axis, -1) if moved else g
        gx2 = kernels.softmax_rows_backward(y2, _rows2d(gm))
        gx = gx2.reshape(x.shape)
        if moved:
            gx = np.ascontiguousarray(np.moveaxis(gx, -1, axis))
        return (gx,)

    return _make(data, (a,), vjp)


def masked_softmax(a: Tensor, allowed: np.ndarray) -> Tensor:
    """Softmax along the last axis restricted to ``allowed`` positions.

    Disallowed entries get probability zero. A row with no allowed position
    has no defined distribution and raises ContractError.
    """
    allowed = np.broadcast_to(np.asarray(allowed, dtype=bool), a.shape)
    if not allowed.any(axis=-1).all():
        raise ContractError("masked_softmax: a query row has every position masked")
    x = np.where(allowed, a.data, a.dtype.type(-np.inf))
    y2 = kernels.softmax_rows(_rows2d(x))
    data = y2.reshape(a.shape)

    def vjp(g):
        gx2 = kernels.softmax_rows_backward(y2, _rows2d(g))
        return (gx2.reshape(a.shape),)

    return _make(data, (a,), vjp)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    if eps <= 0:
        raise ContractError("layer_norm: eps must be positive")
    x2 = _rows2d(a.data)
    out2, xhat, rstd = kernels.layer_norm_rows(
        x2, np.ascontiguousarray(gain.data), np.ascontiguousarray(bias.data), eps
    )
    data = out2.reshape(a.shape)

    def vjp(g):
        gx2, ggain, gbias = kernels.layer_norm_rows_backward(
            xhat, rstd, np.ascontiguousarray(gain.data), _rows2d(g)
        )
        return gx2.reshape(a.shape), ggain, gbias

    return _make(data, (a, gain, bias), vjp)


def dropout(a: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ContractError("dropout in training mode needs an explicit rng")
    keep = (rng.random(a.shape) >= rate).astype(a.dtype)
    scale = a.dtype.type(1.0 / (1.0 - rate))
    data = a.data * keep * scale

    def vjp(g):
        return (g * keep * scale,)

    return _make(data, (a,), vjp)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; gradient scatter-adds into the table."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(
            f"embedding ids out of range [0, {table.shape[0]}): "
            f"min={ids.min()}, max={ids.max()}"
        )
    data = np.ascontiguousarray(table.data[ids])

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (gt,)

    return _make(data, (table,), vjp)


def cross_entropy_label_smoothed(
    logits: Tensor,
    targets: np.ndarray,
    epsilon: float,
    pad_id: int,
) -> Tensor:
    """Mean label-smoothed cross-entropy over non-pad positions.

    The smoothed target distribution puts 1 - epsilon on the gold class and
    epsilon / (V - 1) on every other class; pad positions contribute zero.
    """
    if not 0.0 <= epsilon < 1.0:
        raise ContractError(f"label smoothing must be in [0, 1), got {epsilon}")
    if logits.ndim != 2:
        raise ShapeError(f"expected [T, V] logits, got shape {logits.shape}")
    t, v = logits.shape
    targets = np.asarray(targets)
    if targets.shape != (t,):
        raise ShapeError(f"targets shape {targets.shape} does not match logits rows {t}")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise IndexError(f"target id out of range [0, {v}): min={targets.min()}, max={targets.max()}")
    nonpad = targets != pad_id
    n = int(nonpad.sum())
    if n == 0:
        raise ContractError("loss over a batch with no non-pad target positions")

    x = logits.data
    m = x.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=1, keepdims=True))
    logp = x - lse
    rows = np.arange(t)
    gold_logp = logp[rows, targets]
    if epsilon > 0.0:
        off = epsilon / (v - 1)
        per_pos = -((1.0 - epsilon) * gold_logp + off * (logp.sum(axis=1) - gold_logp))
    else:
        per_pos = -gold_logp
    data = np.asarray((per_pos * nonpad).sum() / n, dtype=logits.dtype)

    def vjp(g):
        p = np.exp(logp)
        q = np.full((t, v), epsilon / (v - 1) if epsilon > 0.0 else 0.0, dtype=logits.dtype)
        q[rows, targets] = 1.0 - epsilon
        gl = (p - q) * nonpad[:, None]
        gl *= g / n
        return (gl.astype(logits.dtype, copy=False),)

    return _make(data, (logits,), vjp)
