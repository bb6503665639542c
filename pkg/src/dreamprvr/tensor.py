"""Dense numpy tensors with reverse-mode gradient propagation.

Every operation returns a new :class:`Tensor`. When any operand requires a
gradient the result remembers its parents and a closure that maps the output
gradient to one gradient per parent. :meth:`Tensor.backward` walks that graph
in reverse topological order and accumulates into the ``grad`` of every leaf
that requires it.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

LARGE_NEGATIVE = -1e30


class ShapeError(ValueError):
    """Operand shapes do not conform for an operation."""


class DomainError(ValueError):
    """An operation was applied outside its mathematical domain."""


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_ufunc__ = None  # make ndarray <op> Tensor defer to the reflected Tensor method

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar("item", self.shape)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> Tensor:
        axes = list(range(self.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
        return transpose(self, axes)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims: bool = False) -> Tensor:
        return tmax(self, axis, keepdims)

    def exp(self) -> Tensor:
        return exp(self)

    def log(self) -> Tensor:
        return log(self)

    def sqrt(self) -> Tensor:
        return sqrt(self)

    def softmax(self, axis: int = -1) -> Tensor:
        return softmax(self, axis)

    # -- differentiation -----------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every leaf that requires a gradient."""
        if self.data.size != 1:
            raise ValueError(f"backward: root must be a scalar tensor, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = np.array(g, copy=True) if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


def _not_scalar(op: str, shape) -> float:
    raise ValueError(f"{op}: expected a single-element tensor, got shape {shape}")


def _topological_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(op: str, fn, a, b):
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    try:
        data = fn(a.data, b.data)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None
    return a, b, data


# -- elementwise arithmetic ----------------------------------------------

def add(a, b) -> Tensor:
    a, b, data = _binary("add", np.add, a, b)
    return _node(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b, data = _binary("sub", np.subtract, a, b)
    return _node(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b, data = _binary("mul", np.multiply, a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b, data = _binary("div", np.divide, a, b)

    def backward(g):
        gb = _unbroadcast(-g * data / b.data, b.shape) if b.requires_grad else None
        return _unbroadcast(g / b.data, a.shape), gb

    return _node(data, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    data = a.data ** exponent
    return _node(data, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),), "pow")


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    return _node(data, (a,), lambda g: (g * data,), "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise DomainError(f"log: negative input (min {a.data.min():.3g})")
    data = np.log(a.data)
    return _node(data, (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise DomainError(f"sqrt: negative input (min {a.data.min():.3g})")
    data = np.sqrt(a.data)
    return _node(data, (a,), lambda g: (g / (2.0 * data),), "sqrt")


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)
    return _node(data, (a,), lambda g: (g * (a.data > 0),), "relu")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh approximation of GELU."""
    x = a.data
    x2 = x * x  # float power is far slower than repeated multiplication
    inner = _GELU_C * x * (1.0 + 0.044715 * x2)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _node(data, (a,), backward, "gelu")


def softplus(a: Tensor) -> Tensor:
    data = np.logaddexp(0.0, a.data)
    return _node(data, (a,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * a.data)),), "softplus")


# -- linear algebra and shape manipulation -------------------------------

def matmul(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    try:
        data = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(data, (a, b), backward, "matmul")


def reshape(a: Tensor, shape) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return _node(data, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def _has_advanced_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return any(isinstance(p, (list, np.ndarray, Tensor)) for p in parts)


def getitem(a: Tensor, index) -> Tensor:
    if isinstance(index, Tensor):
        index = index.data.astype(np.intp)
    data = a.data[index]
    advanced = _has_advanced_index(index)

    def backward(g):
        out = np.zeros_like(a.data)
        if advanced:
            np.add.at(out, index, g)
        else:
            out[index] = g
        return (out,)

    return _node(np.array(data, copy=True) if not advanced else data, (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat: cannot join shapes {shapes} along axis {axis}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(data, tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"stack: shapes differ: {shapes}") from None

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _node(data, tensors, backward, "stack")


# -- reductions ------------------------------------------------------------

def _expand_reduced(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))
    return _node(data, (a,), lambda g: (_expand_reduced(g, a.shape, axis, keepdims),), "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = np.asarray(a.data.mean(axis=axis, keepdims=keepdims))
    count = a.data.size // max(data.size, 1)
    return _node(data, (a,), lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,), "mean")


def tmax(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Maximum; the gradient is shared equally between tied maxima."""
    full = a.data.max(axis=axis, keepdims=True)
    data = full if keepdims else np.asarray(a.data.max(axis=axis))

    def backward(g):
        mask = (a.data == full).astype(a.data.dtype)
        mask /= mask.sum(axis=axis, keepdims=True)
        return (_expand_reduced(g, a.shape, axis, keepdims) * mask,)

    return _node(data, (a,), backward, "max")


def segment_max(a: Tensor, lengths: Sequence[int]) -> Tensor:
    """Maximum over contiguous segments of the last axis."""
    lengths = np.asarray(lengths, dtype=np.intp)
    if lengths.sum() != a.shape[-1] or np.any(lengths < 1):
        raise ShapeError(f"segment_max: segment lengths {lengths.tolist()} do not tile last axis of {a.shape}")
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    data = np.maximum.reduceat(a.data, starts, axis=-1)

    def backward(g):
        mask = (a.data == np.repeat(data, lengths, axis=-1)).astype(a.data.dtype)
        counts = np.add.reduceat(mask, starts, axis=-1)
        return (np.repeat(g / counts, lengths, axis=-1) * mask,)

    return _node(data, (a,), backward, "segment_max")


# -- normalisations ------------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (data * (g - (g * data).sum(axis=axis, keepdims=True)),)

    return _node(data, (a,), backward, "softmax")


def logsumexp(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    full = np.log(s) + m
    data = full if keepdims else np.squeeze(full, axis=axis)

    def backward(g):
        return (_expand_reduced(g, a.shape, axis, keepdims) * (e / s),)

    return _node(data, (a,), backward, "logsumexp")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale by ``gain`` and shift by ``bias``."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    try:
        data = xhat * gain.data + bias.data
    except ValueError:
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not fit input {x.shape}") from None
    n = x.shape[-1]

    def backward(g):
        gx_hat = g * gain.data
        gx = inv_std / n * (
            n * gx_hat - gx_hat.sum(axis=-1, keepdims=True) - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True)
        )
        return _unbroadcast(gx, x.shape), _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _node(data, (x, gain, bias), backward, "layer_norm")


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """x / max(||x||, eps); a zero vector maps to zero."""
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, eps)
    data = x.data / denom

    def backward(g):
        radial = np.where(norm > eps, (g * data).sum(axis=axis, keepdims=True), 0.0)
        return ((g - data * radial) / denom,)

    return _node(data, (x,), backward, "l2_normalize")


def cosine_similarity(a: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    return tsum(l2_normalize(a, axis) * l2_normalize(b, axis), axis=axis)


def cosine_matrix(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine similarities between the rows of ``a`` and ``b``."""
    return matmul(l2_normalize(a), transpose(l2_normalize(b)))


# -- attention -----------------------------------------------------------

def attention(q: Tensor, k: Tensor, v: Tensor, gauss=None, mask=None, return_weights: bool = False):
    """softmax(mask + gauss * (q k^T / sqrt(d_h))) v over the last two axes.

    ``gauss`` multiplies the scaled scores elementwise and ``mask`` is added
    afterwards; both are constant arrays broadcast against the score matrix.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape} do not conform")
    scale = 1.0 / np.sqrt(q.shape[-1])
    raw = (q.data @ np.swapaxes(k.data, -1, -2)) * scale
    scores = raw * gauss if gauss is not None else raw
    if mask is not None:
        scores = scores + mask
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    weights = e / e.sum(axis=-1, keepdims=True)
    data = weights @ v.data

    def backward(g):
        gw = g @ np.swapaxes(v.data, -1, -2)
        gv = _unbroadcast(np.swapaxes(weights, -1, -2) @ g, v.shape)
        gs = weights * (gw - (gw * weights).sum(axis=-1, keepdims=True))
        if gauss is not None:
            gs = gs * gauss
        gs = gs * scale
        gq = _unbroadcast(gs @ k.data, q.shape)
        gk = _unbroadcast(np.swapaxes(gs, -1, -2) @ q.data, k.shape)
        return gq, gk, gv

    out = _node(data, (q, k, v), backward, "attention")
    return (out, weights) if return_weights else out


def zeros(shape, dtype=np.float64) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))
