"""Dense float tensors with a recorded reverse pass.

Storage is a row-major numpy array. Every differentiable operation is a
:class:`Function` subclass with an explicit ``forward``/``backward`` pair;
calling ``Tensor.backward`` replays the recorded graph in reverse
topological order and accumulates ``.grad`` on leaf tensors that require it.

Training runs in float32. Gradient verification switches the default dtype
to float64 with :func:`precision`.
"""
from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Function", "TensorError", "ShapeError", "DomainError", "NonFiniteError",
    "no_grad", "precision", "get_default_dtype", "set_finite_checks", "as_tensor",
    "add", "sub", "mul", "div", "neg", "power", "exp", "log", "sin", "relu", "leaky_relu",
    "sigmoid", "tanh", "abs_", "sqrt", "sum_", "mean", "max_", "matmul", "softmax",
    "log_softmax", "masked_softmax", "l2_normalize", "cosine_similarity", "concat", "stack",
    "reshape", "transpose", "swapaxes", "getitem", "broadcast_shape", "zeros", "ones",
]

_state = {"dtype": np.dtype(np.float32), "grad": True, "finite": True}


class TensorError(Exception):
    """Base class for errors raised by tensor operations."""


class ShapeError(TensorError, ValueError):
    pass


class DomainError(TensorError, ValueError):
    pass


class NonFiniteError(TensorError, FloatingPointError):
    def __init__(self, op: str):
        super().__init__(f"non-finite value produced by '{op}'")
        self.op = op


def get_default_dtype() -> np.dtype:
    return _state["dtype"]


@contextlib.contextmanager
def precision(dtype=np.float64):
    """Temporarily change the dtype used for newly created tensors."""
    prev = _state["dtype"]
    _state["dtype"] = np.dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = prev


@contextlib.contextmanager
def no_grad():
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


def set_finite_checks(enabled: bool) -> bool:
    """Toggle the per-op finiteness guard; returns the previous setting."""
    prev = _state["finite"]
    _state["finite"] = bool(enabled)
    return prev


def broadcast_shape(*shapes: Sequence[int]) -> tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(*[tuple(s) for s in shapes]))
    except ValueError as exc:
        raise ShapeError(f"shapes {[tuple(s) for s in shapes]} are not broadcastable") from exc


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of trailing-dimension broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __array_priority__ = 100.0
    __slots__ = ("data", "grad", "requires_grad", "_ctx", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if dtype is None:
            dtype = _state["dtype"]
        self.data = np.asarray(data, dtype=dtype, order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._ctx: Function | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = requires_grad
        t._ctx = None
        t.name = None
        return t

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self.shape)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def zero_grad(self) -> None:
        self.grad = None

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- reverse pass -----------------------------------------------------
    def backward(self, grad=None) -> None:
        if not self.requires_grad:
            raise TensorError("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.dtype).reshape(self.shape)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in node._ctx.inputs:
                    if parent is not None and parent.requires_grad and id(parent) not in seen:
                        stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            ctx = node._ctx
            if ctx is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            in_grads = ctx.backward(g)
            if not isinstance(in_grads, tuple):
                in_grads = (in_grads,)
            for parent, pg in zip(ctx.inputs, in_grads):
                if parent is None or pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise ShapeError(f"'{ctx.name}' returned gradient of shape {pg.shape} "
                                     f"for input of shape {parent.shape}")
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg

    # -- operator sugar ---------------------------------------------------
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __pow__(self, p): return power(self, p)
    def __matmul__(self, o): return matmul(self, o)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims=False): return sum_(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def max(self, axis=None, keepdims=False): return max_(self, axis, keepdims)
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)
    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)
    def exp(self): return exp(self)
    def log(self): return log(self)
    def relu(self): return relu(self)
    def sigmoid(self): return sigmoid(self)
    def tanh(self): return tanh(self)
    def abs(self): return abs_(self)

    @property
    def T(self): return transpose(self, None)


def _raise_item(shape):
    raise ShapeError(f"item() needs a single-element tensor, got shape {shape}")


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None and isinstance(x, np.ndarray) and x.dtype.kind == "f":
        dtype = x.dtype
    return Tensor(x, dtype=dtype)


def zeros(shape, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_state["dtype"]), requires_grad)


def ones(shape, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape, dtype=_state["dtype"]), requires_grad)


class Function:
    """One differentiable operation. Subclasses implement forward/backward on arrays."""

    name = "op"
    inputs: tuple[Tensor | None, ...]

    def forward(self, *arrays, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray):
        """Return one gradient (or None) per tensor input, in call order."""
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        fn = cls()
        tensors = tuple(as_tensor(x, _dtype_hint(inputs)) for x in inputs)
        fn.needs = tuple(t.requires_grad for t in tensors)
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        if _state["finite"] and out.dtype.kind == "f" and not np.isfinite(out).all():
            raise NonFiniteError(fn.name)
        track = _state["grad"] and any(fn.needs)
        res = Tensor._wrap(out, track)
        if track:
            fn.inputs = tensors
            res._ctx = fn
        return res


def _dtype_hint(inputs) -> np.dtype | None:
    for x in inputs:
        if isinstance(x, Tensor):
            return x.dtype
    return None


# ---------------------------------------------------------------------------
# elementwise binary
# ---------------------------------------------------------------------------

class _Binary(Function):
    def _shapes(self, a, b):
        broadcast_shape(a.shape, b.shape)
        self.sa, self.sb = a.shape, b.shape


class Add(_Binary):
    name = "add"

    def forward(self, a, b):
        self._shapes(a, b)
        return a + b

    def backward(self, g):
        return (_unbroadcast(g, self.sa) if self.needs[0] else None,
                _unbroadcast(g, self.sb) if self.needs[1] else None)


class Sub(_Binary):
    name = "sub"

    def forward(self, a, b):
        self._shapes(a, b)
        return a - b

    def backward(self, g):
        return (_unbroadcast(g, self.sa) if self.needs[0] else None,
                _unbroadcast(-g, self.sb) if self.needs[1] else None)


class Mul(_Binary):
    name = "mul"

    def forward(self, a, b):
        self._shapes(a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, g):
        return (_unbroadcast(g * self.b, self.sa) if self.needs[0] else None,
                _unbroadcast(g * self.a, self.sb) if self.needs[1] else None)


class Div(_Binary):
    name = "div"

    def forward(self, a, b):
        self._shapes(a, b)
        if np.any(b == 0):
            raise DomainError("div: division by zero")
        self.a, self.b = a, b
        return a / b

    def backward(self, g):
        ga = _unbroadcast(g / self.b, self.sa) if self.needs[0] else None
        gb = _unbroadcast(-g * self.a / (self.b * self.b), self.sb) if self.needs[1] else None
        return ga, gb


def add(a, b) -> Tensor: return Add.apply(a, b)
def sub(a, b) -> Tensor: return Sub.apply(a, b)
def mul(a, b) -> Tensor: return Mul.apply(a, b)
def div(a, b) -> Tensor: return Div.apply(a, b)


# ---------------------------------------------------------------------------
# elementwise unary
# ---------------------------------------------------------------------------

class Neg(Function):
    name = "neg"

    def forward(self, x):
        return -x

    def backward(self, g):
        return -g


class Power(Function):
    name = "pow"

    def forward(self, x, p: float = 2.0):
        if p != int(p) and np.any(x < 0):
            raise DomainError("pow: negative base with fractional exponent")
        if p < 0 and np.any(x == 0):
            raise DomainError("pow: zero base with negative exponent")
        self.x, self.p = x, p
        return x ** p

    def backward(self, g):
        return g * self.p * self.x ** (self.p - 1)


class Exp(Function):
    name = "exp"

    def forward(self, x):
        with np.errstate(over="ignore"):     # overflow is reported by the finiteness guard
            self.y = np.exp(x)
        return self.y

    def backward(self, g):
        return g * self.y


class Log(Function):
    name = "log"

    def forward(self, x):
        if np.any(x <= 0):
            raise DomainError("log: non-positive input")
        self.x = x
        return np.log(x)

    def backward(self, g):
        return g / self.x


class Sin(Function):
    name = "sin"

    def forward(self, x):
        self.x = x
        return np.sin(x)

    def backward(self, g):
        return g * np.cos(self.x)


class Sqrt(Function):
    name = "sqrt"

    def forward(self, x):
        if np.any(x < 0):
            raise DomainError("sqrt: negative input")
        self.y = np.sqrt(x)
        return self.y

    def backward(self, g):
        if np.any(self.y == 0):
            raise DomainError("sqrt: gradient undefined at zero")
        return g / (2.0 * self.y)


class Relu(Function):
    name = "relu"

    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, g):
        return g * self.mask


class LeakyRelu(Function):
    name = "leaky_relu"

    def forward(self, x, slope: float = 0.01):
        self.scale = np.where(x > 0, 1.0, slope).astype(x.dtype)
        return x * self.scale

    def backward(self, g):
        return g * self.scale


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, x):
        # split by sign so exp never overflows
        e = np.exp(-np.abs(x))
        self.y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
        return self.y

    def backward(self, g):
        return g * self.y * (1.0 - self.y)


class Tanh(Function):
    name = "tanh"

    def forward(self, x):
        self.y = np.tanh(x)
        return self.y

    def backward(self, g):
        return g * (1.0 - self.y * self.y)


class Abs(Function):
    """|x| with subgradient 0 at 0."""
    name = "abs"

    def forward(self, x):
        self.s = np.sign(x)
        return np.abs(x)

    def backward(self, g):
        return g * self.s


def neg(x) -> Tensor: return Neg.apply(x)
def power(x, p: float) -> Tensor: return Power.apply(x, p=float(p))
def exp(x) -> Tensor: return Exp.apply(x)
def log(x) -> Tensor: return Log.apply(x)
def sin(x) -> Tensor: return Sin.apply(x)
def sqrt(x) -> Tensor: return Sqrt.apply(x)
def relu(x) -> Tensor: return Relu.apply(x)
def leaky_relu(x, slope: float = 0.01) -> Tensor: return LeakyRelu.apply(x, slope=slope)
def sigmoid(x) -> Tensor: return Sigmoid.apply(x)
def tanh(x) -> Tensor: return Tanh.apply(x)
def abs_(x) -> Tensor: return Abs.apply(x)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand(g, shape, axes, keepdims):
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


class Sum(Function):
    name = "sum"

    def forward(self, x, axis=None, keepdims=False):
        self.shape = x.shape
        self.axes = _norm_axis(axis, x.ndim)
        self.keep = keepdims
        return np.asarray(x.sum(axis=self.axes, keepdims=keepdims))

    def backward(self, g):
        return np.array(_expand(g, self.shape, self.axes, self.keep))


class Mean(Function):
    name = "mean"

    def forward(self, x, axis=None, keepdims=False):
        self.shape = x.shape
        self.axes = _norm_axis(axis, x.ndim)
        self.keep = keepdims
        self.n = int(np.prod([x.shape[a] for a in self.axes])) if self.axes else 1
        return np.asarray(x.mean(axis=self.axes, keepdims=keepdims))

    def backward(self, g):
        return np.array(_expand(g, self.shape, self.axes, self.keep)) / self.n


class Max(Function):
    """Max reduction; tied maxima share the gradient equally."""
    name = "max"

    def forward(self, x, axis=None, keepdims=False):
        self.shape = x.shape
        self.axes = _norm_axis(axis, x.ndim)
        self.keep = keepdims
        m = x.max(axis=self.axes, keepdims=True)
        hit = (x == m).astype(x.dtype)
        self.weight = hit / hit.sum(axis=self.axes, keepdims=True)
        return np.asarray(m if keepdims else m.squeeze(axis=self.axes))

    def backward(self, g):
        return _expand(g, self.shape, self.axes, self.keep) * self.weight


def sum_(x, axis=None, keepdims=False) -> Tensor: return Sum.apply(x, axis=axis, keepdims=keepdims)
def mean(x, axis=None, keepdims=False) -> Tensor: return Mean.apply(x, axis=axis, keepdims=keepdims)
def max_(x, axis=None, keepdims=False) -> Tensor: return Max.apply(x, axis=axis, keepdims=keepdims)


# ---------------------------------------------------------------------------
# linear algebra and axis-wise normalisations
# ---------------------------------------------------------------------------

class MatMul(Function):
    name = "matmul"

    def forward(self, a, b):
        if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        self.va, self.vb = a.ndim == 1, b.ndim == 1
        self.sa, self.sb = a.shape, b.shape
        self.a = a[None, :] if self.va else a
        self.b = b[:, None] if self.vb else b
        out = self.a @ self.b
        if self.va:
            out = out[..., 0, :]
        if self.vb:
            out = out[..., 0]
        return out

    def backward(self, g):
        if self.va:
            g = np.expand_dims(g, -2)
        if self.vb:
            g = np.expand_dims(g, -1)
        ga = gb = None
        if self.needs[0]:
            ga = g @ np.swapaxes(self.b, -1, -2)
            ga = _unbroadcast(ga, self.a.shape).reshape(self.sa)
        if self.needs[1]:
            gb = np.swapaxes(self.a, -1, -2) @ g
            gb = _unbroadcast(gb, self.b.shape).reshape(self.sb)
        return ga, gb


class Softmax(Function):
    name = "softmax"

    def forward(self, x, axis=-1):
        self.axis = axis
        z = np.exp(x - x.max(axis=axis, keepdims=True))
        self.y = z / z.sum(axis=axis, keepdims=True)
        return self.y

    def backward(self, g):
        y = self.y
        return y * (g - (g * y).sum(axis=self.axis, keepdims=True))


class LogSoftmax(Function):
    name = "log_softmax"

    def forward(self, x, axis=-1):
        self.axis = axis
        s = x - x.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(s).sum(axis=axis, keepdims=True))
        out = s - lse
        self.p = np.exp(out)
        return out

    def backward(self, g):
        return g - self.p * g.sum(axis=self.axis, keepdims=True)


class MaskedSoftmax(Function):
    """Softmax where entries with ``mask == False`` are excluded (output exactly 0)."""
    name = "masked_softmax"

    def forward(self, x, mask=None, axis=-1):
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=axis).all():
            raise DomainError("masked_softmax: a row has every entry masked")
        self.axis = axis
        filled = np.where(mask, x, -np.inf)
        z = np.where(mask, np.exp(filled - filled.max(axis=axis, keepdims=True)), 0.0)
        self.y = (z / z.sum(axis=axis, keepdims=True)).astype(x.dtype)
        return self.y

    def backward(self, g):
        y = self.y
        return y * (g - (g * y).sum(axis=self.axis, keepdims=True))


class L2Normalize(Function):
    name = "l2_normalize"

    def forward(self, x, axis=-1, eps=1e-12):
        self.axis = axis
        n = np.sqrt((x * x).sum(axis=axis, keepdims=True))
        self.small = n <= eps
        self.n = np.maximum(n, eps)
        self.y = x / self.n
        return self.y

    def backward(self, g):
        proj = (g * self.y).sum(axis=self.axis, keepdims=True)
        full = (g - self.y * proj) / self.n
        return np.where(self.small, g / self.n, full)


class CosineSimilarity(Function):
    """<a, b> / (|a| |b| + eps) along ``axis``; zero vectors get a zero gradient."""
    name = "cosine_similarity"

    def forward(self, a, b, axis=1, eps=1e-8):
        if a.shape != b.shape:
            raise ShapeError(f"cosine_similarity: {a.shape} vs {b.shape}")
        self.axis = axis
        self.a, self.b = a, b
        self.dot = (a * b).sum(axis=axis, keepdims=True)
        self.na = np.sqrt((a * a).sum(axis=axis, keepdims=True))
        self.nb = np.sqrt((b * b).sum(axis=axis, keepdims=True))
        self.den = self.na * self.nb + eps
        return np.squeeze(self.dot / self.den, axis=axis)

    def backward(self, g):
        g = np.expand_dims(g, self.axis)
        den2 = self.den * self.den
        out = []
        for mine, other, n_mine, n_other, need in (
            (self.a, self.b, self.na, self.nb, self.needs[0]),
            (self.b, self.a, self.nb, self.na, self.needs[1]),
        ):
            if not need:
                out.append(None)
                continue
            unit = np.divide(mine, n_mine, out=np.zeros_like(mine), where=n_mine > 0)
            out.append(g * (other / self.den - self.dot * n_other * unit / den2))
        return tuple(out)


def matmul(a, b) -> Tensor: return MatMul.apply(a, b)
def softmax(x, axis=-1) -> Tensor: return Softmax.apply(x, axis=axis)
def log_softmax(x, axis=-1) -> Tensor: return LogSoftmax.apply(x, axis=axis)
def masked_softmax(x, mask, axis=-1) -> Tensor: return MaskedSoftmax.apply(x, mask=mask, axis=axis)
def l2_normalize(x, axis=-1, eps=1e-12) -> Tensor: return L2Normalize.apply(x, axis=axis, eps=eps)


def cosine_similarity(a, b, axis=1, eps=1e-8) -> Tensor:
    return CosineSimilarity.apply(a, b, axis=axis, eps=eps)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

class Concat(Function):
    name = "concat"

    def forward(self, *xs, axis=0):
        ref = xs[0].shape
        ax = axis % len(ref)
        for x in xs[1:]:
            if x.ndim != len(ref) or any(x.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
                raise ShapeError(f"concat: {ref} vs {x.shape} along axis {axis}")
        self.axis = ax
        self.splits = np.cumsum([x.shape[ax] for x in xs])[:-1]
        return np.concatenate(xs, axis=ax)

    def backward(self, g):
        return tuple(np.split(g, self.splits, axis=self.axis))


class Stack(Function):
    name = "stack"

    def forward(self, *xs, axis=0):
        self.axis = axis
        return np.stack(xs, axis=axis)

    def backward(self, g):
        return tuple(np.moveaxis(g, self.axis, 0))


class Reshape(Function):
    name = "reshape"

    def forward(self, x, shape=()):
        self.shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError as exc:
            raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from exc

    def backward(self, g):
        return g.reshape(self.shape)


class Transpose(Function):
    name = "transpose"

    def forward(self, x, axes=None):
        self.axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
        return np.ascontiguousarray(np.transpose(x, self.axes))

    def backward(self, g):
        return np.ascontiguousarray(np.transpose(g, np.argsort(self.axes)))


class GetItem(Function):
    name = "getitem"

    def forward(self, x, index=None):
        self.shape, self.index, self.dtype = x.shape, index, x.dtype
        return np.asarray(x[index], order="C")

    def backward(self, g):
        out = np.zeros(self.shape, dtype=g.dtype)
        idx = self.index if isinstance(self.index, tuple) else (self.index,)
        if any(isinstance(i, (np.ndarray, list)) for i in idx):
            np.add.at(out, self.index, g)
        else:
            out[self.index] = g
        return out


def concat(xs: Iterable, axis: int = 0) -> Tensor:
    return Concat.apply(*list(xs), axis=axis)


def stack(xs: Iterable, axis: int = 0) -> Tensor:
    return Stack.apply(*list(xs), axis=axis)


def reshape(x, shape) -> Tensor: return Reshape.apply(x, shape=tuple(shape))
def transpose(x, axes=None) -> Tensor: return Transpose.apply(x, axes=axes)


def swapaxes(x, a: int, b: int) -> Tensor:
    axes = list(range(as_tensor(x).ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, axes)


def getitem(x, index) -> Tensor:
    return GetItem.apply(x, index=index)
