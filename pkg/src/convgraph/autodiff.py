"""Minimal reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps a float64 ndarray and records its parents on a tape as
operations compose; ``backward`` replays the tape in reverse topological
order and accumulates gradients into every reachable leaf with
``requires_grad``.  Only the handful of primitives used by the graph encoder
and the toy language model are implemented; everything runs on the CPU in
64-bit so gradient checks against central differences are meaningful.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "as_tensor",
    "parameter",
    "concat",
    "gather_rows",
    "gather_elements",
    "segment_sum",
    "narrow",
    "leaky_relu",
    "elu",
    "gelu",
    "softmax_last",
    "log_softmax_last",
    "dropout",
    "layer_norm",
]


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[np.ndarray], None] | None = None,
    ):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | float | None = None) -> None:
        """Accumulate gradients of this tensor into all reachable leaves."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed requires a scalar tensor")
            grad = np.ones_like(self.data)
        grad = _as_array(grad).reshape(self.data.shape)

        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            node._backward_apply(g, grads)

    def _backward_apply(self, g: np.ndarray, grads: dict[int, np.ndarray]) -> None:
        parent_grads = self._backward(g)
        for parent, pg in zip(self._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out_data = self.data + other.data

        def backward(g):
            return (_unbroadcast(g, self.data.shape), _unbroadcast(g, other.data.shape))

        return Tensor(out_data, parents=(self, other), backward=backward)

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, parents=(self,), backward=lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out_data = self.data * other.data

        def backward(g):
            return (
                _unbroadcast(g * other.data, self.data.shape),
                _unbroadcast(g * self.data, other.data.shape),
            )

        return Tensor(out_data, parents=(self, other), backward=backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out_data = self.data / other.data

        def backward(g):
            return (
                _unbroadcast(g / other.data, self.data.shape),
                _unbroadcast(-g * self.data / (other.data**2), other.data.shape),
            )

        return Tensor(out_data, parents=(self, other), backward=backward)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent: float):
        out_data = self.data**exponent

        def backward(g):
            return (g * exponent * self.data ** (exponent - 1),)

        return Tensor(out_data, parents=(self,), backward=backward)

    def __matmul__(self, other):
        other = as_tensor(other)
        out_data = np.matmul(self.data, other.data)
        a_shape, b_shape = self.data.shape, other.data.shape

        def backward(g):
            a, b = self.data, other.data
            if a.ndim == 1:
                a2 = a[None, :]
                ga = np.matmul(g[..., None, :], np.swapaxes(b, -1, -2))[..., 0, :]
            else:
                a2 = a
                ga = np.matmul(g if b.ndim > 1 else g[..., :, None],
                               np.swapaxes(b, -1, -2) if b.ndim > 1 else b[None, :])
            if b.ndim == 1:
                gb = np.matmul(np.swapaxes(a2, -1, -2), g[..., :, None])[..., 0]
            else:
                gb = np.matmul(np.swapaxes(a2, -1, -2), g if a.ndim > 1 else g[None, :])
            return (ga if ga.shape == a_shape else _unbroadcast(ga, a_shape),
                    gb if gb.shape == b_shape else _unbroadcast(gb, b_shape))

        return Tensor(out_data, parents=(self, other), backward=backward)

    # -- shape ops ----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old_shape = self.data.shape
        return Tensor(
            self.data.reshape(shape),
            parents=(self,),
            backward=lambda g: (g.reshape(old_shape),),
        )

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor(
            self.data.transpose(axes),
            parents=(self,),
            backward=lambda g: (g.transpose(inverse),),
        )

    @property
    def T(self):
        return self.transpose()

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.data.shape

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            g_exp = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(g_exp, shape).copy(),)

        return Tensor(out_data, parents=(self,), backward=backward)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            count = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- elementwise --------------------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)
        return Tensor(out_data, parents=(self,), backward=lambda g: (g * out_data,))

    def log(self):
        return Tensor(np.log(self.data), parents=(self,), backward=lambda g: (g / self.data,))

    def sqrt(self):
        out_data = np.sqrt(self.data)
        return Tensor(out_data, parents=(self,), backward=lambda g: (g * 0.5 / out_data,))

    def tanh(self):
        out_data = np.tanh(self.data)
        return Tensor(out_data, parents=(self,), backward=lambda g: (g * (1.0 - out_data**2),))

    def item(self) -> float:
        return float(self.data)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        pieces = []
        for i in range(len(tensors)):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(index)])
        return tuple(pieces)

    return Tensor(out_data, parents=tuple(tensors), backward=backward)


def gather_rows(t: Tensor, idx) -> Tensor:
    """Select rows along axis 0; duplicate indices accumulate on backward."""
    idx = np.asarray(idx, dtype=np.int64)
    out_data = t.data[idx]

    def backward(g):
        grad = np.zeros_like(t.data)
        np.add.at(grad, idx, g)
        return (grad,)

    return Tensor(out_data, parents=(t,), backward=backward)


def gather_elements(t: Tensor, col_idx) -> Tensor:
    """out[r] = t[r, col_idx[r]] for a 2-D tensor."""
    col_idx = np.asarray(col_idx, dtype=np.int64)
    rows = np.arange(t.data.shape[0])
    out_data = t.data[rows, col_idx]

    def backward(g):
        grad = np.zeros_like(t.data)
        np.add.at(grad, (rows, col_idx), g)
        return (grad,)

    return Tensor(out_data, parents=(t,), backward=backward)


def segment_sum(t: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Sum rows (axis 0) into ``num_segments`` buckets."""
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    out_data = np.zeros((num_segments,) + t.data.shape[1:], dtype=np.float64)
    np.add.at(out_data, segment_ids, t.data)

    def backward(g):
        return (g[segment_ids],)

    return Tensor(out_data, parents=(t,), backward=backward)


def narrow(t: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis (backward zero-pads)."""
    index = [slice(None)] * t.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out_data = t.data[index]

    def backward(g):
        grad = np.zeros_like(t.data)
        grad[index] = g
        return (grad,)

    return Tensor(out_data, parents=(t,), backward=backward)


def leaky_relu(t: Tensor, slope: float = 0.2) -> Tensor:
    mask = t.data > 0
    out_data = np.where(mask, t.data, slope * t.data)

    def backward(g):
        return (g * np.where(mask, 1.0, slope),)

    return Tensor(out_data, parents=(t,), backward=backward)


def elu(t: Tensor, alpha: float = 1.0) -> Tensor:
    mask = t.data > 0
    exp_part = alpha * (np.exp(np.minimum(t.data, 0.0)) - 1.0)
    out_data = np.where(mask, t.data, exp_part)

    def backward(g):
        return (g * np.where(mask, 1.0, exp_part + alpha),)

    return Tensor(out_data, parents=(t,), backward=backward)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(t: Tensor) -> Tensor:
    """tanh approximation of GELU (smooth, which keeps finite differences clean)."""
    inner = (t * _GELU_C) + (t**3.0) * (_GELU_C * 0.044715)
    return t * 0.5 * (inner.tanh() + 1.0)


def softmax_last(t: Tensor) -> Tensor:
    shift = t.data.max(axis=-1, keepdims=True)  # constant shift: no gradient path
    z = (t - shift).exp()
    return z / z.sum(axis=-1, keepdims=True)


def log_softmax_last(t: Tensor) -> Tensor:
    shift = t.data.max(axis=-1, keepdims=True)
    shifted = t - shift
    return shifted - shifted.exp().sum(axis=-1, keepdims=True).log()


def dropout(t: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    if not training or p <= 0.0:
        return t
    keep = (rng.random(t.data.shape) >= p).astype(np.float64) / (1.0 - p)
    return t * keep


def layer_norm(t: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = t.mean(axis=-1, keepdims=True)
    centered = t - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / (var + eps).sqrt() * gamma + beta
