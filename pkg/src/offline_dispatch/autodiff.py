"""Minimal reverse-mode automatic differentiation over numpy arrays.

Tensors wrap a numpy array plus an optional gradient buffer and a record
of the op that produced them. Calling :func:`backward` on a scalar loss
walks the graph in reverse topological order and accumulates gradients
into every tensor with ``requires_grad``.

Training runs in float32; tests switch to float64 via
:func:`set_default_dtype` for finite-difference headroom.

Masked softmax / log-sum-exp keep masked entries at exactly zero (and
zero gradient) by multiplying out the mask after the shifted exponential,
so the -infinity convention never produces non-finite arithmetic.
"""

from __future__ import annotations

import numpy as np

from .errors import MaskError, ShapeError
from .rng import SplitMix64

_default_dtype = np.float32


def set_default_dtype(dtype) -> None:
    global _default_dtype
    _default_dtype = np.dtype(dtype).type


def get_default_dtype():
    return _default_dtype


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g, owned: bool = False) -> None:
        """Add g to the gradient buffer.

        owned=True promises g is a freshly allocated array no other node
        aliases, letting the first accumulation adopt it without a copy.
        """
        if self.grad is None:
            if owned and g.shape == self.data.shape and g.dtype == self.data.dtype:
                self.grad = g
            else:
                self.grad = np.array(
                    np.broadcast_to(g, self.data.shape), dtype=self.data.dtype
                )
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; constants are coerced to gradient-free tensors
    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __radd__(self, other):
        return add(_as_tensor(other, self), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0, self))

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    arr = np.asarray(data, dtype=dtype or _default_dtype)
    return Tensor(arr, requires_grad=requires_grad)


def parameter(data, dtype=None) -> Tensor:
    return tensor(data, requires_grad=True, dtype=dtype)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _make(data, parents, backward_fn) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    return Tensor(
        data,
        requires_grad=requires,
        _parents=parents if requires else (),
        _backward=backward_fn if requires else None,
    )


# ---------------------------------------------------------------------------
# elementwise and linear algebra
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward_fn(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.shape)
            a._accumulate(ga, owned=ga is not g)
        if b.requires_grad:
            gb = _unbroadcast(g, b.shape)
            b._accumulate(gb, owned=gb is not g)

    return _make(out_data, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def backward_fn(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.shape)
            a._accumulate(ga, owned=ga is not g)
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape), owned=True)

    return _make(out_data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape), owned=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape), owned=True)

    return _make(out_data, (a, b), backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d tensors, got {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T, owned=True)
        if b.requires_grad:
            b._accumulate(a.data.T @ g, owned=True)

    return _make(out_data, (a, b), backward_fn)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused x @ w + b (row-broadcast bias)."""
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError(f"affine expects 2-d tensors, got {x.shape} @ {w.shape}")
    out_data = x.data @ w.data
    out_data += b.data

    def backward_fn(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T, owned=True)
        if w.requires_grad:
            w._accumulate(x.data.T @ g, owned=True)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0), owned=True)

    return _make(out_data, (x, w, b), backward_fn)


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    out_data = np.where(keep, x.data, 0)

    def backward_fn(g):
        x._accumulate(g * keep, owned=True)

    return _make(out_data, (x,), backward_fn)


def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)

    def backward_fn(g):
        x._accumulate(g * out_data, owned=True)

    return _make(out_data, (x,), backward_fn)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    take_a = a.data <= b.data
    out_data = np.where(take_a, a.data, b.data)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * take_a, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~take_a, b.shape))

    return _make(out_data, (a, b), backward_fn)


def huber(x: Tensor, kappa: float = 1.0) -> Tensor:
    """0.5 u^2 inside |u| <= kappa, kappa(|u| - kappa/2) outside."""
    absx = np.abs(x.data)
    inside = absx <= kappa
    out_data = np.where(inside, 0.5 * x.data * x.data, kappa * (absx - 0.5 * kappa))

    def backward_fn(g):
        x._accumulate(g * np.where(inside, x.data, kappa * np.sign(x.data)),
                      owned=True)

    return _make(out_data, (x,), backward_fn)


def dropout(x: Tensor, p: float, train: bool, rng: SplitMix64) -> Tensor:
    """Inverted dropout: scales kept entries by 1/(1-p) so eval is identity."""
    if not train or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    u = rng.random_array(x.shape)
    scale = (u >= p).astype(x.data.dtype) / (1.0 - p)
    out_data = x.data * scale

    def backward_fn(g):
        x._accumulate(g * scale, owned=True)

    return _make(out_data, (x,), backward_fn)


# ---------------------------------------------------------------------------
# reductions and indexing
# ---------------------------------------------------------------------------


def mean(x: Tensor) -> Tensor:
    out_data = np.asarray(x.data.mean())

    def backward_fn(g):
        x._accumulate(np.full_like(x.data, g / x.data.size))

    return _make(out_data, (x,), backward_fn)


def total(x: Tensor) -> Tensor:
    out_data = np.asarray(x.data.sum())

    def backward_fn(g):
        x._accumulate(np.full_like(x.data, g))

    return _make(out_data, (x,), backward_fn)


def sum_axis(x: Tensor, axis: int) -> Tensor:
    out_data = x.data.sum(axis=axis)

    def backward_fn(g):
        x._accumulate(np.broadcast_to(np.expand_dims(g, axis), x.shape).copy())

    return _make(out_data, (x,), backward_fn)


def mean_axis(x: Tensor, axis: int) -> Tensor:
    n = x.shape[axis]
    out_data = x.data.mean(axis=axis)

    def backward_fn(g):
        x._accumulate(np.broadcast_to(np.expand_dims(g / n, axis), x.shape).copy())

    return _make(out_data, (x,), backward_fn)


def reshape(x: Tensor, shape) -> Tensor:
    out_data = x.data.reshape(shape)

    def backward_fn(g):
        x._accumulate(g.reshape(x.shape))

    return _make(out_data, (x,), backward_fn)


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                t._accumulate(g[tuple(index)])

    return _make(out_data, tuple(tensors), backward_fn)


def gather_rows(x: Tensor, idx) -> Tensor:
    idx = np.asarray(idx)
    out_data = x.data[idx]

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        x._accumulate(gx, owned=True)

    return _make(out_data, (x,), backward_fn)


def take_per_row(x: Tensor, idx) -> Tensor:
    """out[b] = x[b, idx[b]] for a 2-d tensor."""
    if x.ndim != 2:
        raise ShapeError(f"take_per_row expects 2-d input, got {x.shape}")
    idx = np.asarray(idx)
    rows = np.arange(x.shape[0])
    out_data = x.data[rows, idx]

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, idx), g)
        x._accumulate(gx, owned=True)

    return _make(out_data, (x,), backward_fn)


def spmm(matrix, matrix_t, x: Tensor) -> Tensor:
    """Sparse @ dense with a precomputed transpose for the backward pass.

    Used for neighbor aggregation: matrix[v, u] counts edges u -> v.
    """
    out_data = matrix @ x.data

    def backward_fn(g):
        x._accumulate(matrix_t @ g, owned=True)

    return _make(out_data, (x,), backward_fn)


def sum_segments(x: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Row-wise scatter-add: out[s] = sum of rows i with segment_ids[i] == s."""
    segment_ids = np.asarray(segment_ids)
    if segment_ids.shape[0] != x.shape[0]:
        raise ShapeError("segment_ids length must match the leading axis")
    out_data = np.zeros((num_segments,) + x.shape[1:], dtype=x.data.dtype)
    np.add.at(out_data, segment_ids, x.data)

    def backward_fn(g):
        x._accumulate(g[segment_ids], owned=True)

    return _make(out_data, (x,), backward_fn)


# ---------------------------------------------------------------------------
# masked softmax family
# ---------------------------------------------------------------------------


def _check_mask(x: Tensor, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ShapeError(f"mask shape {mask.shape} != input shape {x.shape}")
    if not mask.any(axis=-1).all():
        raise MaskError("every row needs at least one unmasked entry")
    return mask


def _masked_shift(x: Tensor, mask: np.ndarray):
    """Row max over unmasked entries, for a stable exponential."""
    shifted = np.where(mask, x.data, -np.inf)
    row_max = shifted.max(axis=-1, keepdims=True)
    expx = np.exp(np.where(mask, x.data - row_max, 0.0)) * mask
    return row_max, expx


def softmax_masked(x: Tensor, mask) -> Tensor:
    """Probabilities over unmasked entries; masked entries exactly 0."""
    mask = _check_mask(x, mask)
    _, expx = _masked_shift(x, mask)
    out_data = expx / expx.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        g = g * mask
        inner = (g * out_data).sum(axis=-1, keepdims=True)
        x._accumulate(out_data * (g - inner))

    return _make(out_data, (x,), backward_fn)


def log_softmax_masked(x: Tensor, mask) -> Tensor:
    """log probabilities at unmasked entries; masked entries exactly 0."""
    mask = _check_mask(x, mask)
    row_max, expx = _masked_shift(x, mask)
    lse = row_max + np.log(expx.sum(axis=-1, keepdims=True))
    out_data = np.where(mask, x.data - lse, 0.0)
    probs = expx / expx.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        g = g * mask
        x._accumulate(g - probs * g.sum(axis=-1, keepdims=True))

    return _make(out_data, (x,), backward_fn)


def logsumexp_masked(x: Tensor, mask) -> Tensor:
    """Row-wise log-sum-exp over unmasked entries only."""
    mask = _check_mask(x, mask)
    row_max, expx = _masked_shift(x, mask)
    sums = expx.sum(axis=-1, keepdims=True)
    out_data = (row_max + np.log(sums)).squeeze(-1)
    probs = expx / sums

    def backward_fn(g):
        x._accumulate(probs * np.expand_dims(g, -1))

    return _make(out_data, (x,), backward_fn)


# ---------------------------------------------------------------------------
# backprop driver and optimizer
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate .grad on every parameter reachable from a scalar loss.

    Parameter gradients accumulate across calls until zeroed; intermediate
    node gradients are reset on every call.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    for node in topo:
        if node._parents:
            node.grad = None
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


class Adam:
    """Standard Adam with bias correction over named parameter tensors."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** t)
            v_hat = v / (1 - self.beta2 ** t)
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(
                p.data.dtype
            )


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    step: int,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> np.ndarray:
    """Single functional Adam update (buffers updated in place)."""
    beta1, beta2 = betas
    m *= beta1
    m += (1 - beta1) * grad
    v *= beta2
    v += (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** step)
    v_hat = v / (1 - beta2 ** step)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps)
