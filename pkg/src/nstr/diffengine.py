"""Dense tensor arithmetic with reverse-mode gradients and forward spatial tangents.

Two facilities live here:

* ``Tensor`` records every operation it takes part in, so ``backward`` can
  push exact parameter gradients through the graph.
* ``Jet`` pairs a value tensor with its derivative with respect to the input
  coordinates. Jet arithmetic is written in terms of ``Tensor`` ops, so the
  spatial derivatives it produces are themselves differentiable with respect
  to the parameters.

Parameters live on a ``ParamTape``: one flat float64 vector plus a gradient
vector of the same length, sliced into named segments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


def _check(data: np.ndarray, op: str) -> np.ndarray:
    # a NaN or Inf anywhere makes the sum non-finite
    if not math.isfinite(np.add.reduce(data, axis=None)):
        if not np.isfinite(data).all():
            raise NonFiniteError(f"non-finite values produced by {op}")
    return data


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An array node in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_sink", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        if not _parents:
            _check(self.data, op)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self._sink: np.ndarray | None = None
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self, seed: np.ndarray | float = 1.0) -> None:
        """Accumulate d(self)/d(leaf) into every leaf that requires a gradient.

        Leaves bound to a ``ParamTape`` add their gradient into the tape's
        gradient vector; other leaves collect it in ``.grad``.
        """
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.broadcast_to(np.asarray(seed, dtype=np.float64), self.shape).copy()}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node._sink is not None:
                    node._sink += g.reshape(node._sink.shape)
                else:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in node._backward(g):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


TensorLike = Tensor | np.ndarray | float


def as_tensor(x: TensorLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple, op: str, backward) -> Tensor:
    out = Tensor(_check(data, op), _parents=parents, op=op)
    if out.requires_grad:
        out._backward = backward
    return out


# ---------------------------------------------------------------- elementwise


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _node(a.data + b.data, (a, b), "add", back)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape)))

    return _node(a.data - b.data, (a, b), "sub", back)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ((a, ga), (b, gb))

    return _node(a.data * b.data, (a, b), "mul", back)


def square(a: Tensor) -> Tensor:
    def back(g):
        return ((a, 2.0 * a.data * g),)

    return _node(a.data * a.data, (a,), "square", back)


def tabs(a: Tensor) -> Tensor:
    def back(g):
        return ((a, np.sign(a.data) * g),)

    return _node(np.abs(a.data), (a,), "abs", back)


def tsin(a: Tensor) -> Tensor:
    def back(g):
        return ((a, np.cos(a.data) * g),)

    return _node(np.sin(a.data), (a,), "sin", back)


def tcos(a: Tensor) -> Tensor:
    def back(g):
        return ((a, -np.sin(a.data) * g),)

    return _node(np.cos(a.data), (a,), "cos", back)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def back(g):
        return ((a, g * mask),)

    return _node(a.data * mask, (a,), "relu", back)


def ttanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def back(g):
        return ((a, (1.0 - y * y) * g),)

    return _node(y, (a,), "tanh", back)


# ---------------------------------------------------------------- reductions / shape


def tsum(a: Tensor, axis=None) -> Tensor:
    def back(g):
        if axis is None:
            return ((a, np.broadcast_to(g, a.shape).copy()),)
        return ((a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy()),)

    return _node(np.asarray(a.data.sum(axis=axis)), (a,), "sum", back)


def mean(a: Tensor) -> Tensor:
    n = a.data.size

    def back(g):
        return ((a, np.full(a.shape, float(g) / n)),)

    return _node(np.asarray(a.data.mean()), (a,), "mean", back)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    def back(g):
        return ((a, g.reshape(a.shape)),)

    return _node(a.data.reshape(shape), (a,), "reshape", back)


def getitem(a: Tensor, idx) -> Tensor:
    def back(g):
        full = np.zeros(a.shape)
        full[idx] = g
        return ((a, full),)

    return _node(np.asarray(a.data[idx]), (a,), "getitem", back)


def concat(parts: Sequence[TensorLike], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    ax = axis % parts[0].ndim
    sizes = [p.shape[ax] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        out = []
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(lo, hi)
            out.append((p, g[tuple(sl)]))
        return tuple(out)

    return _node(np.concatenate([p.data for p in parts], axis=ax), tuple(parts), "concat", back)


def expand_last(a: Tensor) -> Tensor:
    return reshape(a, a.shape + (1,))


def expand_mid(a: Tensor) -> Tensor:
    """(N, w) -> (N, 1, w), to scale a (N, d, w) tangent."""
    return reshape(a, (a.shape[0], 1) + a.shape[1:])


def transpose(a: Tensor, axes: tuple) -> Tensor:
    inv = tuple(np.argsort(axes))

    def back(g):
        return ((a, g.transpose(inv)),)

    return _node(np.ascontiguousarray(a.data.transpose(axes)), (a,), "transpose", back)


# ---------------------------------------------------------------- linear algebra


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ((a, ga), (b, gb))

    return _node(a.data @ b.data, (a, b), "matmul", back)


def linear(x: TensorLike, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` with ``w`` stored as (out, in)."""
    x = as_tensor(x)
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        res = [(x, g @ w.data if x.requires_grad else None), (w, g.T @ x.data if w.requires_grad else None)]
        if b is not None:
            res.append((b, g.sum(axis=0)))
        return tuple(res)

    return _node(out, parents, "linear", back)


def linear_tangent(tan: Tensor, w: Tensor) -> Tensor:
    """Push a (N, d, in) tangent through ``w`` (out, in): result (N, d, out)."""
    n, d, i = tan.shape
    t2 = tan.data.reshape(n * d, i)
    out = (t2 @ w.data.T).reshape(n, d, -1)

    def back(g):
        g2 = g.reshape(n * d, -1)
        gt = (g2 @ w.data).reshape(n, d, i) if tan.requires_grad else None
        gw = g2.T @ t2 if w.requires_grad else None
        return ((tan, gt), (w, gw))

    return _node(out, (tan, w), "linear_tangent", back)


def sparse_matmul(m: sp.spmatrix, a: Tensor) -> Tensor:
    """Constant sparse matrix times a dense tensor (grid interpolation)."""
    mt = m.T.tocsr()

    def back(g):
        return ((a, np.asarray(mt @ g)),)

    return _node(np.asarray(m @ a.data), (a,), "sparse_matmul", back)


# ---------------------------------------------------------------- spatial tangents


class Jet:
    """A value together with its Jacobian with respect to the input coordinates.

    ``val`` has shape (N, w); ``tan`` has shape (N, d, w), i.e. row k of a
    sample's tangent is the derivative along coordinate axis k.
    """

    __slots__ = ("val", "tan")

    def __init__(self, val: Tensor, tan: Tensor):
        self.val = as_tensor(val)
        self.tan = as_tensor(tan)

    @classmethod
    def seed(cls, x: np.ndarray) -> "Jet":
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n, d = x.shape
        eye = np.broadcast_to(np.eye(d), (n, d, d)).copy()
        return cls(Tensor(x), Tensor(eye))

    @property
    def shape(self) -> tuple:
        return self.val.shape

    def __getitem__(self, idx) -> "Jet":
        if not (isinstance(idx, tuple) and len(idx) == 2):
            raise IndexError("Jet indexing needs (rows, cols)")
        return Jet(self.val[idx], self.tan[(idx[0], slice(None), idx[1])])

    def jacobian(self) -> np.ndarray:
        """(N, w, d) array of d val / d x."""
        return self.tan.data.transpose(0, 2, 1)

    def __add__(self, other) -> "Jet":
        if isinstance(other, Jet):
            return Jet(self.val + other.val, self.tan + other.tan)
        return Jet(self.val + other, self.tan)

    __radd__ = __add__

    def __sub__(self, other) -> "Jet":
        if isinstance(other, Jet):
            return Jet(self.val - other.val, self.tan - other.tan)
        return Jet(self.val - other, self.tan)

    def __mul__(self, other) -> "Jet":
        if isinstance(other, Jet):
            return Jet(
                self.val * other.val,
                self.tan * expand_mid(other.val) + other.tan * expand_mid(self.val),
            )
        if isinstance(other, Tensor):
            return Jet(self.val * other, self.tan * expand_mid(other))
        arr = np.asarray(other, dtype=np.float64)
        return Jet(self.val * arr, self.tan * (arr[:, None, :] if arr.ndim == 2 else arr))

    __rmul__ = __mul__


Value = Tensor | Jet


# Polymorphic layer vocabulary: each accepts a Tensor or a Jet.


def affine(h: Value, w: Tensor, b: Tensor | None = None) -> Value:
    if isinstance(h, Jet):
        return Jet(linear(h.val, w, b), linear_tangent(h.tan, w))
    return linear(h, w, b)


def tanh(h: Value) -> Value:
    if isinstance(h, Jet):
        y = ttanh(h.val)
        return Jet(y, h.tan * expand_mid(1.0 - square(y)))
    return ttanh(as_tensor(h))


def sin(h: Value) -> Value:
    if isinstance(h, Jet):
        return Jet(tsin(h.val), h.tan * expand_mid(tcos(h.val)))
    return tsin(as_tensor(h))


def cat(parts: Sequence[Value]) -> Value:
    """Concatenate along the feature axis."""
    if any(isinstance(p, Jet) for p in parts):
        if not all(isinstance(p, Jet) for p in parts):
            raise TypeError("cannot mix Jet and Tensor in cat")
        return Jet(concat([p.val for p in parts], axis=1), concat([p.tan for p in parts], axis=2))
    return concat(parts, axis=1)


def value_of(h: Value) -> Tensor:
    return h.val if isinstance(h, Jet) else h


# ---------------------------------------------------------------- parameter tape


@dataclass(frozen=True)
class InitSpec:
    """How a parameter segment is filled at registration.

    kind is one of ``constant``, ``uniform``, ``normal``, ``siren``.
    For ``siren``, ``fan_in`` and ``omega0`` set the bound; ``first=True``
    selects the first-layer rule ``U(-1/fan_in, 1/fan_in)``, otherwise
    ``U(-sqrt(6/fan_in)/omega0, sqrt(6/fan_in)/omega0)``.
    """

    kind: str = "constant"
    value: float = 0.0
    low: float = -1.0
    high: float = 1.0
    std: float = 1.0
    fan_in: int = 1
    omega0: float = 30.0
    first: bool = False

    @classmethod
    def constant(cls, value: float = 0.0) -> "InitSpec":
        return cls("constant", value=value)

    @classmethod
    def uniform(cls, low: float, high: float) -> "InitSpec":
        return cls("uniform", low=low, high=high)

    @classmethod
    def normal(cls, std: float) -> "InitSpec":
        return cls("normal", std=std)

    @classmethod
    def siren(cls, fan_in: int, omega0: float = 30.0, first: bool = False) -> "InitSpec":
        return cls("siren", fan_in=fan_in, omega0=omega0, first=first)

    def bound(self) -> float:
        if self.kind != "siren":
            raise ValueError("bound() is only defined for siren init")
        if self.first:
            return 1.0 / self.fan_in
        return float(np.sqrt(6.0 / self.fan_in) / self.omega0)

    def sample(self, shape: tuple, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "constant":
            return np.full(shape, float(self.value))
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high, size=shape)
        if self.kind == "normal":
            return rng.normal(0.0, self.std, size=shape)
        if self.kind == "siren":
            lim = self.bound()
            return rng.uniform(-lim, lim, size=shape)
        raise ValueError(f"unknown init kind {self.kind!r}")


@dataclass(frozen=True)
class SegmentHandle:
    name: str
    offset: int
    shape: tuple
    trainable: bool = True

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


class ParamTape:
    """Flat parameter store with a matching gradient vector."""

    def __init__(self):
        self.params = np.zeros(0)
        self.grads = np.zeros(0)
        self.segments: dict[str, SegmentHandle] = {}

    def __len__(self) -> int:
        return self.params.size

    def register(
        self,
        name: str,
        shape: Iterable[int],
        init: InitSpec,
        rng: np.random.Generator | None = None,
        trainable: bool = True,
    ) -> SegmentHandle:
        shape = tuple(int(s) for s in shape)
        if name in self.segments:
            raise KeyError(f"segment {name!r} already registered")
        if not shape or any(s < 1 for s in shape):
            raise ValueError(f"segment {name!r} needs a nonempty shape, got {shape}")
        if rng is None:
            rng = np.random.default_rng(0)
        values = _check(np.asarray(init.sample(shape, rng), dtype=np.float64).ravel(), f"init of {name}")
        handle = SegmentHandle(name, self.params.size, shape, trainable)
        self.params = np.concatenate([self.params, values])
        self.grads = np.zeros_like(self.params)
        self.segments[name] = handle
        return handle

    def view(self, name: str) -> np.ndarray:
        h = self.segments[name]
        return self.params[h.offset : h.offset + h.size].reshape(h.shape)

    def grad_view(self, name: str) -> np.ndarray:
        h = self.segments[name]
        return self.grads[h.offset : h.offset + h.size].reshape(h.shape)

    def tensor(self, name: str) -> Tensor:
        """Leaf tensor over a segment; backward adds into the tape's grads."""
        h = self.segments[name]
        t = Tensor(self.view(name), requires_grad=h.trainable, op=f"param:{name}")
        if h.trainable:
            t._sink = self.grad_view(name)
        return t

    def zero_grad(self) -> None:
        self.grads[:] = 0.0

    def trainable_mask(self) -> np.ndarray:
        mask = np.zeros(self.params.size, dtype=bool)
        for h in self.segments.values():
            if h.trainable:
                mask[h.offset : h.offset + h.size] = True
        return mask

    def trainable_count(self) -> int:
        return int(sum(h.size for h in self.segments.values() if h.trainable))

    def set_trainable(self, name: str, trainable: bool) -> None:
        h = self.segments[name]
        self.segments[name] = SegmentHandle(h.name, h.offset, h.shape, trainable)

    def registry(self) -> list[dict]:
        return [
            {"name": h.name, "offset": h.offset, "shape": list(h.shape), "trainable": h.trainable}
            for h in self.segments.values()
        ]


# ---------------------------------------------------------------- drivers


def grad_of_loss(model_eval: Callable[[ParamTape], Tensor], tape: ParamTape) -> float:
    """Evaluate the scalar loss and add its parameter gradient into ``tape.grads``.

    Gradients accumulate: call ``tape.zero_grad()`` between independent steps.
    """
    loss = model_eval(tape)
    if not isinstance(loss, Tensor):
        loss = Tensor(loss)
    value = float(np.asarray(loss.data).reshape(()))
    if not np.isfinite(value):
        raise NonFiniteError("loss is not finite")
    if loss.requires_grad:
        loss.backward()
    return value


def spatial_jacobian(
    field_eval: Callable[[Value], Value],
    x: np.ndarray,
    mode: str = "analytic",
    eps: float = 1e-4,
    lo: float = -1.0,
    hi: float = 1.0,
) -> np.ndarray:
    """Jacobian of a coordinate field, shape (out_dim, d), or (N, out_dim, d) for a batch.

    ``field_eval`` receives either a ``Tensor`` of coordinates (N, d) or a
    ``Jet`` seeded at them, and must be written with the polymorphic layer
    functions of this module. In ``fd`` mode central differences are used;
    stencil points are clamped into [-1, 1] and the step is shortened there.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    if mode == "analytic":
        out = field_eval(Jet.seed(xs))
        if not isinstance(out, Jet):
            raise TypeError("field_eval must propagate a Jet")
        jac = out.jacobian()
    elif mode == "fd":
        jac = fd_jacobian(lambda pts: value_of(field_eval(Tensor(pts))).data, xs, eps, lo, hi)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    _check(jac, "spatial_jacobian")
    return jac[0] if single else jac


def fd_stencil(xs: np.ndarray, axis: int, eps: float, lo: float = -1.0, hi: float = 1.0):
    """Return (x_plus, x_minus, step) for a clamped central difference along ``axis``."""
    xp = xs.copy()
    xm = xs.copy()
    xp[:, axis] = np.minimum(xs[:, axis] + eps, hi)
    xm[:, axis] = np.maximum(xs[:, axis] - eps, lo)
    return xp, xm, xp[:, axis] - xm[:, axis]


def fd_jacobian(
    f: Callable[[np.ndarray], np.ndarray], xs: np.ndarray, eps: float, lo: float = -1.0, hi: float = 1.0
) -> np.ndarray:
    n, d = xs.shape
    cols = []
    for k in range(d):
        xp, xm, step = fd_stencil(xs, k, eps, lo, hi)
        cols.append((np.asarray(f(xp)) - np.asarray(f(xm))) / step[:, None])
    return np.stack(cols, axis=-1)
