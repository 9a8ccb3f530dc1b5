"""
Dense float64 tensors with reverse-mode differentiation.

Every op records its parents and a backward closure on the output tensor;
`Tensor.backward` replays that tape in reverse topological order. Only leaf
tensors keep a `.grad` buffer after a backward pass.
"""
from __future__ import annotations

import logging

from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Any, SupportsIndex

import numpy as np

from numpy.typing import ArrayLike, NDArray

from twostream.errors import (
    BadConfigError,
    BadLabelError,
    EmptyVectorError,
    NonfiniteFunctionError,
    ShapeMismatchError,
)

logger = logging.getLogger(__name__)

type Array = NDArray[np.float64]
type Axis = int | tuple[int, ...] | None
type Backward = Callable[[Array], tuple[Array | None, ...]]

CLIP_EPSILON = 1e-12
"""Floor applied to the target probability inside `cross_entropy`."""

_grad_enabled: ContextVar[bool] = ContextVar('grad_enabled', default=True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Suppress tape recording for the enclosed block (current thread only)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Tensor:
    data: Array
    """Row-major float64 values"""
    grad: Array | None
    """Accumulated gradient, leaves only"""
    requires_grad: bool

    def __init__(self, data: ArrayLike, requires_grad: bool = False) -> None:
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Backward | None = None
        self._op = ''

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> Array:
        return self.data.copy()

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        op = f', op={self._op}' if self._op else ''
        return f'Tensor(shape={self.shape}{op}, requires_grad={self.requires_grad})'

    def _topological_order(self) -> list[Tensor]:
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self, grad: ArrayLike | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf that requires a gradient."""
        if not self.requires_grad:
            return
        seed = (
            np.ones_like(self.data) if grad is None
            else np.asarray(grad, dtype=np.float64)
        )
        if seed.shape != self.shape:
            raise ShapeMismatchError(f'seed {seed.shape} for tensor {self.shape}')

        pending: dict[int, Array] = {id(self): seed}
        for node in reversed(self._topological_order()):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = np.array(g) if node.grad is None else node.grad + g
                continue
            for parent, parent_grad in zip(node._parents, node._backward(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = (
                    parent_grad if key not in pending else pending[key] + parent_grad
                )

    # operators

    def __add__(self, other: Tensor | ArrayLike) -> Tensor:
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Tensor | ArrayLike) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: Tensor | ArrayLike) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> Tensor:
        return mul(other, self)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other: Tensor | ArrayLike) -> Tensor:
        return matmul(self, other)

    def __getitem__(self, key: Any) -> Tensor:
        return index(self, key)

    def sum(self, axis: Axis = None, keepdims: bool = False) -> Tensor:
        return sum_(self, axis, keepdims)

    def mean(self, axis: Axis = None, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims)

    def reshape(self, *shape: SupportsIndex) -> Tensor:
        return reshape(self, tuple(int(n) for n in shape))

    def exp(self) -> Tensor:
        return exp(self)

    def tanh(self) -> Tensor:
        return tanh(self)

    def sigmoid(self) -> Tensor:
        return sigmoid(self)


def _lift(value: Tensor | ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(
    data: ArrayLike, parents: tuple[Tensor, ...], backward: Backward, op: str
) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.grad = None
    out.requires_grad = _grad_enabled.get() and any(p.requires_grad for p in parents)
    out._parents = parents if out.requires_grad else ()
    out._backward = backward if out.requires_grad else None
    out._op = op
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _normalize_axes(axis: Axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def _broadcast(fn: Callable[[Array, Array], Array], a: Tensor, b: Tensor) -> Array:
    try:
        return fn(a.data, b.data)
    except ValueError as e:
        raise ShapeMismatchError(f'{a.shape} vs {b.shape}') from e


def add(a: Tensor | ArrayLike, b: Tensor | ArrayLike) -> Tensor:
    a, b = _lift(a), _lift(b)

    def backward(g: Array) -> tuple[Array, Array]:
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(_broadcast(np.add, a, b), (a, b), backward, 'add')


def sub(a: Tensor | ArrayLike, b: Tensor | ArrayLike) -> Tensor:
    a, b = _lift(a), _lift(b)

    def backward(g: Array) -> tuple[Array, Array]:
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(_broadcast(np.subtract, a, b), (a, b), backward, 'sub')


def mul(a: Tensor | ArrayLike, b: Tensor | ArrayLike) -> Tensor:
    a, b = _lift(a), _lift(b)

    def backward(g: Array) -> tuple[Array, Array]:
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(_broadcast(np.multiply, a, b), (a, b), backward, 'mul')


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,), 'neg')


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _record(y, (a,), lambda g: (g * y,), 'exp')


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _record(y, (a,), lambda g: (g * (1.0 - y * y),), 'tanh')


def sigmoid(a: Tensor) -> Tensor:
    # tanh form stays finite for large |x|
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _record(y, (a,), lambda g: (g * y * (1.0 - y),), 'sigmoid')


def matmul(a: Tensor | ArrayLike, b: Tensor | ArrayLike) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = _lift(a), _lift(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeMismatchError('matmul of a scalar')
    if a.ndim == 1:
        out = matmul(reshape(a, (1,) + a.shape), b)
        return reshape(out, out.shape[:-2] + out.shape[-1:])
    if b.ndim == 1:
        out = matmul(a, reshape(b, b.shape + (1,)))
        return reshape(out, out.shape[:-1])
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f'matmul {a.shape} @ {b.shape}')

    def backward(g: Array) -> tuple[Array, Array]:
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(_broadcast(np.matmul, a, b), (a, b), backward, 'matmul')


def sum_(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)

    def backward(g: Array) -> tuple[Array]:
        expanded = g if keepdims else np.expand_dims(g, axes)
        return (np.broadcast_to(expanded, a.shape),)

    return _record(a.data.sum(axis=axes, keepdims=keepdims), (a,), backward, 'sum')


def mean(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum_(a, axes, keepdims), 1.0 / count)


def spatial_mean(grid: Tensor) -> Tensor:
    """Average pooling over the (h, w) axes of a (..., h, w, K) grid."""
    if grid.ndim < 3:
        raise ShapeMismatchError(f'grid of shape {grid.shape}')
    return mean(grid, axis=(-3, -2))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeMismatchError(f'reshape {a.shape} to {shape}') from e
    return _record(data, (a,), lambda g: (g.reshape(a.shape),), 'reshape')


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    inverse = tuple(int(ax) for ax in np.argsort(axes))
    return _record(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),),
        'transpose',
    )


def swap_last(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    axes = list(range(a.ndim))
    axes[-2], axes[-1] = axes[-1], axes[-2]
    return transpose(a, axes)


def _is_basic_index(key: Any) -> bool:
    keys = key if isinstance(key, tuple) else (key,)
    return all(
        k is None or k is Ellipsis or isinstance(k, (int, np.integer, slice))
        for k in keys
    )


def index(a: Tensor, key: Any) -> Tensor:
    def backward(g: Array) -> tuple[Array]:
        full = np.zeros_like(a.data)
        if _is_basic_index(key):
            full[key] = g
        else:
            np.add.at(full, key, g)
        return (full,)

    return _record(a.data[key], (a,), backward, 'index')


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeMismatchError('concat of nothing')
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeMismatchError('concat of incompatible shapes') from e
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g: Array) -> tuple[Array, ...]:
        return tuple(np.split(g, splits, axis=axis))

    return _record(data, tuple(tensors), backward, 'concat')


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeMismatchError('stack of nothing')
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeMismatchError('stack of incompatible shapes') from e

    def backward(g: Array) -> tuple[Array, ...]:
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _record(data, tuple(tensors), backward, 'stack')


def softmax(a: Tensor | ArrayLike, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along `axis`."""
    a = _lift(a)
    if a.ndim == 0 or a.data.size == 0 or a.shape[axis] == 0:
        raise EmptyVectorError(f'softmax over shape {a.shape}')
    e = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g: Array) -> tuple[Array]:
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(y, (a,), backward, 'softmax')


def cross_entropy(probs: Tensor, labels: int | ArrayLike) -> Tensor:
    """
    Mean of -ln(max(p[label], CLIP_EPSILON)) over the rows of `probs`.

    `probs` is a (C,) vector with an int label or a (..., C) batch with one
    label per row.
    """
    if probs.ndim == 0 or probs.shape[-1] == 0:
        raise EmptyVectorError('cross entropy over no classes')
    num_classes = probs.shape[-1]
    rows = probs.data.reshape(-1, num_classes)
    targets = np.asarray(labels, dtype=np.int64).reshape(-1)
    if targets.shape[0] != rows.shape[0]:
        raise ShapeMismatchError(f'{targets.shape[0]} labels for {rows.shape[0]} rows')
    if np.any(targets < 0) or np.any(targets >= num_classes):
        raise BadLabelError(f'labels outside [0, {num_classes})')

    n = rows.shape[0]
    picked = rows[np.arange(n), targets]
    clipped = np.maximum(picked, CLIP_EPSILON)

    def backward(g: Array) -> tuple[Array]:
        grad = np.zeros_like(rows)
        grad[np.arange(n), targets] = np.where(
            picked > CLIP_EPSILON, -g / (n * clipped), 0.0
        )
        return (grad.reshape(probs.shape),)

    return _record(-np.log(clipped).mean(), (probs,), backward, 'cross_entropy')


def conv2d_3x3(
    x: Tensor | ArrayLike, kernels: Tensor | ArrayLike, bias: Tensor | ArrayLike
) -> Tensor:
    """
    Stride-1 cross-correlation with a 3x3 window and one cell of zero padding.

    x: (..., h, w, K_in); kernels: (3, 3, K_in, K_out); bias: (K_out,)
    """
    x, kernels, bias = _lift(x), _lift(kernels), _lift(bias)
    if (
        x.ndim < 3
        or kernels.ndim != 4
        or kernels.shape[:2] != (3, 3)
        or kernels.shape[2] != x.shape[-1]
        or bias.shape != (kernels.shape[3],)
    ):
        raise ShapeMismatchError(
            f'conv of {x.shape} with kernels {kernels.shape} and bias {bias.shape}'
        )

    h, w, k_in = x.shape[-3:]
    k_out = kernels.shape[3]
    lead = x.shape[:-3]
    offsets = [(dy, dx) for dy in range(3) for dx in range(3)]

    padded = np.pad(x.data, [(0, 0)] * len(lead) + [(1, 1), (1, 1), (0, 0)])
    cols = np.stack(
        [padded[..., dy:dy + h, dx:dx + w, :] for dy, dx in offsets], axis=-2
    ).reshape(-1, 9 * k_in)
    flat_kernels = kernels.data.reshape(9 * k_in, k_out)
    out = (cols @ flat_kernels).reshape(lead + (h, w, k_out)) + bias.data

    def backward(g: Array) -> tuple[Array, Array, Array]:
        g2 = g.reshape(-1, k_out)
        g_kernels = (cols.T @ g2).reshape(kernels.shape)
        g_bias = g2.sum(axis=0)
        g_cols = (g2 @ flat_kernels.T).reshape(lead + (h, w, 9, k_in))
        g_padded = np.zeros_like(padded)
        for i, (dy, dx) in enumerate(offsets):
            g_padded[..., dy:dy + h, dx:dx + w, :] += g_cols[..., i, :]
        return g_padded[..., 1:h + 1, 1:w + 1, :], g_kernels, g_bias

    return _record(out, (x, kernels, bias), backward, 'conv2d_3x3')


def _scalar(value: Tensor) -> float:
    if value.data.size != 1:
        raise ShapeMismatchError(f'expected a scalar, got shape {value.shape}')
    result = float(value.data.reshape(()))
    if not np.isfinite(result):
        raise NonfiniteFunctionError(f'f evaluated to {result}')
    return result


def finite_diff_check(
    f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5
) -> float:
    """
    Max relative error between the tape gradient of scalar `f` at `x` and a
    central difference, |a - n| / max(1, |a|, |n|) over all coordinates.
    """
    if eps <= 0:
        raise BadConfigError(f'eps must be positive, got {eps}')

    leaf = Tensor(x.data, requires_grad=True)
    out = f(leaf)
    _scalar(out)
    analytic = np.zeros_like(leaf.data)
    if out.requires_grad:
        out.backward(np.ones_like(out.data))
        if leaf.grad is not None:
            analytic = leaf.grad

    base = leaf.data.copy()
    worst = 0.0
    for idx in np.ndindex(base.shape):
        shifted = base.copy()
        shifted[idx] = base[idx] + eps
        up = _scalar(f(Tensor(shifted)))
        shifted[idx] = base[idx] - eps
        down = _scalar(f(Tensor(shifted)))
        numeric = (up - down) / (2.0 * eps)
        err = abs(analytic[idx] - numeric) / max(1.0, abs(analytic[idx]), abs(numeric))
        worst = max(worst, err)
    return worst
