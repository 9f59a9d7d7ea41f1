"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Operations on tensors that require
gradients record a closure mapping the output gradient to one gradient per
input; :meth:`Tensor.backward` replays those closures in reverse
topological order and accumulates into the leaves.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class ShapeError(ValueError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


Backward = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Backward | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        label = f"{self.name}: " if self.name else ""
        return f"Tensor({label}shape={self.shape}{flag})"

    def zero_grad(self) -> None:
        self.grad = None

    @staticmethod
    def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Backward) -> Tensor:
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = None
        out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # ------------------------------------------------------------ arithmetic

    def __add__(self, other) -> Tensor:
        b = as_tensor(other)
        sa, sb = self.shape, b.shape
        return Tensor._make(
            self.data + b.data, (self, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
        )

    __radd__ = __add__

    def __neg__(self) -> Tensor:
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> Tensor:
        b = as_tensor(other)
        sa, sb = self.shape, b.shape
        return Tensor._make(
            self.data - b.data, (self, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb))
        )

    def __rsub__(self, other) -> Tensor:
        return as_tensor(other) - self

    def __mul__(self, other) -> Tensor:
        b = as_tensor(other)
        ad, bd = self.data, b.data

        def backward(g):
            return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

        return Tensor._make(ad * bd, (self, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other) -> Tensor:
        if isinstance(other, Tensor):
            return self * other.pow(-1.0)
        return self * (1.0 / other)

    def pow(self, exponent: float) -> Tensor:
        ad = self.data
        return Tensor._make(ad**exponent, (self,), lambda g: (g * exponent * ad ** (exponent - 1),))

    __pow__ = pow

    def __matmul__(self, other) -> Tensor:
        b = as_tensor(other)
        ad, bd = self.data, b.data
        if ad.ndim < 2 or bd.ndim < 2:
            raise ShapeError(f"matmul needs rank >= 2 operands, got {ad.shape} @ {bd.shape}")
        if ad.shape[-1] != bd.shape[-2]:
            raise ShapeError(f"matmul: inner dimensions disagree {ad.shape} @ {bd.shape}")

        def backward(g):
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
            return ga, gb

        return Tensor._make(ad @ bd, (self, b), backward)

    # ------------------------------------------------------------ reductions

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return Tensor._make(np.asarray(self.data.sum(axis=axis, keepdims=keepdims)), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        if axis is None:
            n = self.data.size
        else:
            n = int(np.prod([self.shape[i] for i in np.atleast_1d(axis)]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # --------------------------------------------------------------- shaping

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(orig),))

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        axes = axes or tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor._make(self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),))

    def swapaxes(self, i: int, j: int) -> Tensor:
        return Tensor._make(np.swapaxes(self.data, i, j), (self,), lambda g: (np.swapaxes(g, i, j),))

    @property
    def T(self) -> Tensor:
        return self.transpose()

    def __getitem__(self, idx) -> Tensor:
        if isinstance(idx, Tensor):
            idx = idx.data.astype(np.int64)
        ad = self.data

        def backward(g):
            full = np.zeros_like(ad)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor._make(np.asarray(ad[idx]), (self,), backward)

    # ----------------------------------------------------------- elementwise

    def exp(self) -> Tensor:
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,))

    def log(self) -> Tensor:
        ad = self.data
        return Tensor._make(np.log(ad), (self,), lambda g: (g / ad,))

    def sigmoid(self) -> Tensor:
        out = sigmoid_np(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out * (1.0 - out),))

    def tanh(self) -> Tensor:
        out = np.tanh(self.data)
        return Tensor._make(out, (self,), lambda g: (g * (1.0 - out * out),))

    def silu(self) -> Tensor:
        ad = self.data
        s = sigmoid_np(ad)
        return Tensor._make(ad * s, (self,), lambda g: (g * (s * (1.0 + ad * (1.0 - s))),))

    def log_softmax(self, axis: int = -1) -> Tensor:
        out = log_softmax_np(self.data, axis=axis)

        def backward(g):
            return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

        return Tensor._make(out, (self,), backward)

    def softmax(self, axis: int = -1) -> Tensor:
        out = softmax_np(self.data, axis=axis)

        def backward(g):
            return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

        return Tensor._make(out, (self,), backward)

    # -------------------------------------------------------------- autograd

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise RuntimeError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)

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
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        pending: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if not np.all(np.isfinite(g)):
                    raise FloatingPointError(f"non-finite gradient reached {node!r}")
                if node.grad is None:
                    node.grad = np.array(g, dtype=node.data.dtype)
                else:
                    node.grad = node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                pending[key] = pending[key] + pg if key in pending else pg


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    # split on sign so neither branch overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def backward(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            out.append(g[tuple(sl)])
        return out

    return Tensor._make(np.concatenate([t.data for t in ts], axis=axis), ts, backward)


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    return Tensor._make(
        np.stack([t.data for t in ts], axis=axis),
        ts,
        lambda g: [np.take(g, i, axis=axis) for i in range(len(ts))],
    )
