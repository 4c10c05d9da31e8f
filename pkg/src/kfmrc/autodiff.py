"""Eager reverse-mode automatic differentiation over dense numpy arrays.

Every differentiable op builds a node holding its parents and a closure that
maps the output gradient to per-parent gradients. :func:`backward` orders the
reachable nodes by creation sequence and walks them in exact reverse.

Binary elementwise ops accept equal shapes, scalars, or a trailing-dimension
broadcast (the smaller operand's shape is a suffix of the larger one). Anything
else raises :class:`ShapeError`; use :meth:`Tensor.expand` to broadcast
explicitly.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "DegenerateVectorError",
    "Tensor",
    "Tape",
    "ParameterSet",
    "no_grad",
    "set_default_dtype",
    "get_default_dtype",
    "tensor",
    "matmul",
    "softmax",
    "log_softmax",
    "sigmoid",
    "tanh",
    "gelu",
    "relu",
    "exp",
    "log",
    "clip",
    "concat",
    "stack",
    "where",
    "take_rows",
    "dropout",
    "cosine",
    "layer_norm",
    "backward",
    "grad_check",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class DegenerateVectorError(ValueError):
    """A vector norm fell below the tolerance required by the op."""


_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True
_SEQ = itertools.count()


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph construction inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_array(data, dtype=None) -> np.ndarray:
    if dtype is None:
        if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            return data
        dtype = _DEFAULT_DTYPE
    return np.asarray(data, dtype=dtype)


class Tensor:
    """Dense float array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_seq", "_op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._seq = next(_SEQ)
        self._op = "leaf"

    # -- introspection ---------------------------------------------------------
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
    def T(self) -> Tensor:
        return self.transpose()

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators -------------------------------------------------------------
    def __add__(self, other):
        return _add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return _add(self, -_lift(other, self))

    def __rsub__(self, other):
        return _add(_lift(other, self), -self)

    def __mul__(self, other):
        return _mul(self, _lift(other, self))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _lift(other, self)
        return _mul(self, other ** -1.0)

    def __rtruediv__(self, other):
        return _mul(_lift(other, self), self ** -1.0)

    def __neg__(self):
        return _make(-self.data, (self,), lambda g: (-g,), "neg")

    def __pow__(self, p: float):
        if isinstance(p, Tensor):
            raise TypeError("tensor exponents are not supported")
        p = float(p)
        x = self.data

        def grad_fn(g):
            return (g * p * x ** (p - 1.0),)

        return _make(x ** p, (self,), grad_fn, "pow")

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        x = self.data
        out = x[idx]

        def grad_fn(g):
            full = np.zeros_like(x)
            np.add.at(full, idx, g)
            return (full,)

        return _make(np.array(out, copy=True), (self,), grad_fn, "getitem")

    # -- shape ops -------------------------------------------------------------
    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        return _make(self.data.reshape(shape), (self,), lambda g: (g.reshape(src),), "reshape")

    def transpose(self, *axes) -> Tensor:
        if not axes:
            axes = tuple(range(self.ndim))[::-1]
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        return _make(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),), "transpose")

    def swapaxes(self, a: int, b: int) -> Tensor:
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(tuple(axes))

    def expand(self, *shape) -> Tensor:
        """Broadcast to ``shape`` (numpy rules); gradients are summed back."""
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        try:
            out = np.broadcast_to(self.data, shape)
        except ValueError as exc:
            raise ShapeError(f"cannot expand {src} to {shape}") from exc
        return _make(np.array(out), (self,), lambda g: (_sum_to(g, src),), "expand")

    def unsqueeze(self, axis: int) -> Tensor:
        shape = list(self.shape)
        axis = axis if axis >= 0 else self.ndim + 1 + axis
        shape.insert(axis, 1)
        return self.reshape(tuple(shape))

    # -- reductions ------------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return _reduce(self, "sum", axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return _reduce(self, "mean", axis, keepdims)

    def backward(self) -> None:
        backward(self)


def tensor(data, requires_grad: bool = False, name: str | None = None, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name, dtype=dtype)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by {op}")


def _make(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    out._op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = grad_fn
    return out


def _sum_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: tuple[int, ...], b: tuple[int, ...], op: str) -> None:
    if a == b or len(a) == 0 or len(b) == 0:
        return
    if len(b) < len(a) and a[len(a) - len(b):] == b:
        return
    if len(a) < len(b) and b[len(b) - len(a):] == a:
        return
    if np.prod(a) == 1 and len(a) <= len(b) or np.prod(b) == 1 and len(b) <= len(a):
        return
    raise ShapeError(f"{op}: shapes {a} and {b} are not equal or trailing-compatible")


def _add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_sum_to(g, sa), _sum_to(g, sb)), "add")


def _mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.shape, b.shape, "mul")
    x, y = a.data, b.data

    def grad_fn(g):
        return _sum_to(g * y, x.shape), _sum_to(g * x, y.shape)

    return _make(x * y, (a, b), grad_fn, "mul")


def _reduce(x: Tensor, kind: str, axis, keepdims: bool) -> Tensor:
    data = x.data
    if axis is None:
        axes = tuple(range(data.ndim))
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % data.ndim for a in axes)
    n = int(np.prod([data.shape[a] for a in axes])) if axes else 1
    if n == 0:
        raise ShapeError(f"{kind} over an empty axis")
    out = data.sum(axis=axes, keepdims=keepdims)
    scale = 1.0
    if kind == "mean":
        scale = 1.0 / n
        out = out * scale
    src = data.shape

    def grad_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g * scale, src).copy(),)

    return _make(np.asarray(out, dtype=data.dtype), (x,), grad_fn, kind)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. ``b`` is either 1-D, 2-D (shared across ``a``'s batch
    dimensions) or carries the same batch dimensions as ``a``."""
    if not isinstance(a, Tensor):
        a = Tensor(a)
    if not isinstance(b, Tensor):
        b = Tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul needs at least 1-D operands")
    x, y = a.data, b.data
    if x.shape[-1] != y.shape[-2 if y.ndim > 1 else 0]:
        raise ShapeError(f"matmul: inner dimensions differ, {x.shape} @ {y.shape}")
    if y.ndim > 2 and x.shape[:-2] != y.shape[:-2]:
        raise ShapeError(f"matmul: batch dimensions differ, {x.shape} @ {y.shape}")
    x2 = x[None, :] if x.ndim == 1 else x
    y2 = y[:, None] if y.ndim == 1 else y
    out = x2 @ y2
    if x.ndim == 1:
        out = out[..., 0, :]
    if y.ndim == 1:
        out = out[..., 0]

    def grad_fn(g):
        g2 = g
        if y.ndim == 1:
            g2 = g2[..., None]
        if x.ndim == 1:
            g2 = g2[..., None, :]
        ga = g2 @ np.swapaxes(y2, -1, -2)
        if y2.ndim == 2 and x2.ndim > 2:
            gb = x2.reshape(-1, x2.shape[-1]).T @ g2.reshape(-1, g2.shape[-1])
        else:
            gb = np.swapaxes(x2, -1, -2) @ g2
        return ga.reshape(x.shape), gb.reshape(y.shape)

    return _make(out, (a, b), grad_fn, "matmul")


def _unary(x: Tensor, out: np.ndarray, local_grad: np.ndarray, op: str) -> Tensor:
    return _make(out, (x,), lambda g: (g * local_grad,), op)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    return _unary(x, out, out * (1.0 - out), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _unary(x, out, 1.0 - out * out, "tanh")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _unary(x, out, out, "exp")


def log(x: Tensor) -> Tensor:
    d = x.data
    if np.any(d <= 0):
        raise FloatingPointError("log of a non-positive value")
    return _unary(x, np.log(d), 1.0 / d, "log")


def relu(x: Tensor) -> Tensor:
    """``max(0, x)``; the subgradient at exactly 0 is taken as 0."""
    d = x.data
    return _unary(x, np.maximum(d, 0.0), (d > 0).astype(d.dtype), "relu")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    d = x.data
    inside = ((d >= lo) & (d <= hi)).astype(d.dtype)
    return _unary(x, np.clip(d, lo, hi), inside, "clip")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh approximation of GELU, as used by BERT."""
    d = x.data
    d2 = d * d
    inner = _GELU_C * (d + 0.044715 * d2 * d)
    t = np.tanh(inner)
    out = 0.5 * d * (1.0 + t)
    local = 0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * d2)
    return _unary(x, out, local, "gelu")


def _masked_softmax_np(d: np.ndarray, axis: int, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        shifted = d - d.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=axis, keepdims=True)
    mask = np.broadcast_to(mask, d.shape)
    m = np.where(mask, d, -np.inf).max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(mask, np.exp(np.where(mask, d - m, 0.0)), 0.0)
    s = e.sum(axis=axis, keepdims=True)
    return e / np.where(s > 0, s, 1.0)


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis`` with max subtraction.

    ``mask`` (boolean, broadcastable to ``x``) excludes entries: they get
    probability exactly 0, and a fully masked slice yields all zeros.
    """
    y = _masked_softmax_np(x.data, axis, mask)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), grad_fn, "softmax")


def log_softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Log-softmax along ``axis``. Masked entries are reported as 0 and carry
    no gradient; only unmasked entries are meaningful."""
    d = x.data
    if mask is None:
        mask_b = np.ones(d.shape, dtype=bool)
    else:
        mask_b = np.broadcast_to(mask, d.shape)
    m = np.where(mask_b, d, -np.inf).max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    shifted = np.where(mask_b, d - m, 0.0)
    s = np.where(mask_b, np.exp(shifted), 0.0).sum(axis=axis, keepdims=True)
    lse = np.log(np.where(s > 0, s, 1.0))
    out = np.where(mask_b, shifted - lse, 0.0)
    p = np.where(mask_b, np.exp(out), 0.0)

    def grad_fn(g):
        g = np.where(mask_b, g, 0.0)
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), grad_fn, "log_softmax")


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [p if isinstance(p, Tensor) else Tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat of an empty list")
    nd = parts[0].ndim
    ax = axis % nd
    for p in parts[1:]:
        if p.ndim != nd or any(p.shape[i] != parts[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: {p.shape} incompatible with {parts[0].shape} on axis {axis}")
    bounds = np.cumsum([p.shape[ax] for p in parts])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(np.concatenate([p.data for p in parts], axis=ax), tuple(parts), grad_fn, "concat")


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    return concat([p.unsqueeze(axis) for p in parts], axis=axis)


def where(cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Select from ``a`` where the constant ``cond`` holds, else from ``b``."""
    if a.shape != b.shape:
        raise ShapeError(f"where: {a.shape} vs {b.shape}")
    c = np.broadcast_to(np.asarray(cond, dtype=bool), a.shape)
    return _make(np.where(c, a.data, b.data), (a, b),
                 lambda g: (np.where(c, g, 0.0), np.where(c, 0.0, g)), "where")


def take_rows(table: Tensor, ids) -> Tensor:
    """Gather rows of a 2-D table by an integer index array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"row id out of range [0, {n})")
    w = table.data

    def grad_fn(g):
        full = np.zeros_like(w)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, w.shape[1]))
        return (full,)

    return _make(w[ids], (table,), grad_fn, "take_rows")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * Tensor(keep)


def cosine(a: Tensor, b: Tensor, eps: float = 1e-12) -> Tensor:
    """Cosine similarity along the last axis (batched over leading axes)."""
    if a.shape != b.shape:
        raise ShapeError(f"cosine: {a.shape} vs {b.shape}")
    na = np.sqrt((a.data ** 2).sum(-1))
    nb = np.sqrt((b.data ** 2).sum(-1))
    if np.any(na <= eps) or np.any(nb <= eps):
        raise DegenerateVectorError("cosine of a vector with near-zero norm")
    dot = (a * b).sum(-1)
    norm_a = ((a * a).sum(-1)) ** 0.5
    norm_b = ((b * b).sum(-1)) ** 0.5
    return dot / (norm_a * norm_b)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    mu = x.mean(-1, keepdims=True)
    centered = x - mu.expand(x.shape)
    var = (centered * centered).mean(-1, keepdims=True)
    inv = (var + eps) ** -0.5
    return centered * inv.expand(x.shape) * gain + bias


class Tape:
    """Operations reachable from an output, in execution order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def record(cls, output: Tensor) -> "Tape":
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack = [output]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._parents)
        nodes.sort(key=lambda t: t._seq)
        return cls(nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def reversed(self):
        return reversed(self.nodes)


def backward(loss: Tensor) -> Tape:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor requiring grad."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    _check_finite(loss.data, "loss")
    tape = Tape.record(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in tape.reversed():
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg
    return tape


class ParameterSet:
    """Named collection of trainable tensors."""

    def __init__(self, params: dict[str, Tensor] | None = None):
        self._params: dict[str, Tensor] = {}
        for name, t in (params or {}).items():
            self.add(name, t)

    def add(self, name: str, value, requires_grad: bool = True) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = requires_grad
        t.name = name
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(k, v) for k, v in self._params.items() if v.requires_grad]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = np.zeros_like(t.data) if t.requires_grad else None

    def update(self, other: "ParameterSet") -> None:
        for name, t in other.items():
            self.add(name, t, requires_grad=t.requires_grad)

    def num_values(self) -> int:
        return sum(t.size for t in self._params.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}


def grad_check(
    params: ParameterSet | Iterable[Tensor],
    loss_fn: Callable[[], Tensor],
    h: float = 1e-5,
    floor: float = 1e-8,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per entry is ``|a - n| / max(|a|, |n|, floor)``; every entry
    of every tensor is perturbed.
    """
    tensors = [t for _, t in params.trainable()] if isinstance(params, ParameterSet) else list(params)
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    worst = 0.0
    with no_grad():
        for t, a in zip(tensors, analytic):
            flat = t.data.reshape(-1)
            af = a.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = float(loss_fn().data)
                flat[i] = orig - h
                down = float(loss_fn().data)
                flat[i] = orig
                num = (up - down) / (2.0 * h)
                err = abs(af[i] - num) / max(abs(af[i]), abs(num), floor)
                worst = max(worst, err)
    return worst
