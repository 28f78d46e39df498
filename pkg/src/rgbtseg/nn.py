"""Neural building blocks: parameter containers, convolution, normalisation,
bilinear sampling and modulated deformable convolution.

All spatial tensors are ``[B, C, H, W]``. Convolutions use zero padding.
"""
from __future__ import annotations

from typing import Iterator

import numpy as np
from scipy import sparse

from .tensor import (
    DomainError, Function, ShapeError, Tensor, as_tensor, get_default_dtype, relu, sigmoid,
)

# ---------------------------------------------------------------------------
# parameters and modules
# ---------------------------------------------------------------------------


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Attribute-discovered parameter tree, in attribute insertion order."""

    training = True
    _buffer_names: tuple[str, ...] = ()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def modules(self) -> Iterator["Module"]:
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for b in self._buffer_names:
            yield f"{prefix}{b}", getattr(self, b)
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield from val.named_buffers(f"{prefix}{key}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {n: p.data for n, p in self.named_parameters()}
        state.update({f"buffer:{n}": b for n, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = dict(self.named_parameters())
        missing = [n for n in params if n not in state]
        if strict and missing:
            raise KeyError(f"state is missing parameters: {missing[:5]}")
        for n, p in params.items():
            if n in state:
                if state[n].shape != p.shape:
                    raise ShapeError(f"{n}: stored shape {state[n].shape} != {p.shape}")
                p.data = np.array(state[n], dtype=p.dtype)
        for m_prefix, m in self._module_prefixes():
            for b in m._buffer_names:
                key = f"buffer:{m_prefix}{b}"
                if key in state:
                    setattr(m, b, np.array(state[key], dtype=getattr(m, b).dtype))
                elif strict:
                    raise KeyError(f"state is missing buffer {key}")

    def _module_prefixes(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield from val._module_prefixes(f"{prefix}{key}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item._module_prefixes(f"{prefix}{key}.{i}.")

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for _, m in self._module_prefixes():
            for b in m._buffer_names:
                setattr(m, b, getattr(m, b).astype(dtype))
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


class Conv2dFn(Function):
    name = "conv2d"

    def forward(self, x, w, b, stride=1, padding=0):
        if x.ndim != 4 or w.ndim != 4:
            raise ShapeError(f"conv2d: expected 4-D input and weight, got {x.shape}, {w.shape}")
        B, C, H, W = x.shape
        O, Cw, k, k2 = w.shape
        if C != Cw or k != k2:
            raise ShapeError(f"conv2d: input has {C} channels, weight expects {Cw}")
        Ho, Wo = _out_size(H, k, stride, padding), _out_size(W, k, stride, padding)
        self.geom = (B, C, H, W, O, k, stride, padding, Ho, Wo)
        if k == 1 and padding == 0:
            xs = x[:, :, ::stride, ::stride] if stride > 1 else x
            cols = xs.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, C)
        else:
            xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
            win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
            win = win[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
            cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * k * k)
        self.cols, self.w = cols, w
        out = cols @ w.reshape(O, -1).T + b
        return np.ascontiguousarray(out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2))

    def backward(self, g):
        B, C, H, W, O, k, s, p, Ho, Wo = self.geom
        gf = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        gw = (gf.T @ self.cols).reshape(self.w.shape) if self.needs[1] else None
        gb = gf.sum(axis=0) if self.needs[2] else None
        gx = None
        if self.needs[0]:
            gcols = gf @ self.w.reshape(O, -1)
            if k == 1 and p == 0:
                gsub = gcols.reshape(B, Ho, Wo, C).transpose(0, 3, 1, 2)
                gx = np.zeros((B, C, H, W), dtype=g.dtype)
                gx[:, :, ::s, ::s][:, :, :Ho, :Wo] = gsub
            else:
                gcols = gcols.reshape(B, Ho, Wo, C, k, k)
                gxp = np.zeros((B, C, H + 2 * p, W + 2 * p), dtype=g.dtype)
                for i in range(k):
                    for j in range(k):
                        gxp[:, :, i:i + s * Ho:s, j:j + s * Wo:s] += gcols[..., i, j].transpose(0, 3, 1, 2)
                gx = gxp[:, :, p:p + H, p:p + W]
                gx = np.ascontiguousarray(gx)
        return gx, gw, gb


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    if bias is None:
        bias = Tensor(np.zeros(weight.shape[0]), dtype=as_tensor(weight).dtype)
    return Conv2dFn.apply(x, weight, bias, stride=stride, padding=padding)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int = 3, stride: int = 1, padding: int | None = None,
                 rng: np.random.Generator | None = None, bias: bool = True):
        if k % 2 == 0:
            raise ValueError("kernel size must be odd")
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.weight = Parameter(kaiming_uniform(rng, (c_out, c_in, k, k), c_in * k * k))
        self.bias = Parameter(np.zeros(c_out))

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------


class BatchNormFn(Function):
    name = "batch_norm"

    def forward(self, x, gamma, beta, eps=1e-5):
        axes = (0, 2, 3)
        self.n = x.shape[0] * x.shape[2] * x.shape[3]
        self.mean = x.mean(axis=axes)
        self.var = x.var(axis=axes)
        self.inv = 1.0 / np.sqrt(self.var + eps)
        self.xhat = (x - self.mean[:, None, None]) * self.inv[:, None, None]
        self.gamma = gamma
        return self.xhat * gamma[:, None, None] + beta[:, None, None]

    def backward(self, g):
        axes = (0, 2, 3)
        gbeta = g.sum(axis=axes)
        ggamma = (g * self.xhat).sum(axis=axes)
        gxhat = g * self.gamma[:, None, None]
        gx = (self.inv[:, None, None] / self.n) * (
            self.n * gxhat - gxhat.sum(axis=axes)[:, None, None]
            - self.xhat * (gxhat * self.xhat).sum(axis=axes)[:, None, None])
        return gx, ggamma, gbeta


class GroupNormFn(Function):
    name = "group_norm"

    def forward(self, x, gamma, beta, groups=1, eps=1e-5):
        B, C, H, W = x.shape
        if C % groups:
            raise ShapeError(f"group_norm: {C} channels not divisible into {groups} groups")
        self.shape, self.groups = x.shape, groups
        xg = x.reshape(B, groups, -1)
        mean = xg.mean(axis=2, keepdims=True)
        var = xg.var(axis=2, keepdims=True)
        self.inv = 1.0 / np.sqrt(var + eps)
        self.xhat = ((xg - mean) * self.inv).reshape(x.shape)
        self.gamma = gamma
        return self.xhat * gamma[:, None, None] + beta[:, None, None]

    def backward(self, g):
        B, C, H, W = self.shape
        gbeta = g.sum(axis=(0, 2, 3))
        ggamma = (g * self.xhat).sum(axis=(0, 2, 3))
        gxhat = (g * self.gamma[:, None, None]).reshape(B, self.groups, -1)
        xhat = self.xhat.reshape(B, self.groups, -1)
        n = xhat.shape[2]
        gx = (self.inv / n) * (n * gxhat - gxhat.sum(axis=2, keepdims=True)
                               - xhat * (gxhat * xhat).sum(axis=2, keepdims=True))
        return gx.reshape(self.shape), ggamma, gbeta


class BatchNorm2d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, c: int, momentum: float = 0.1, eps: float = 1e-5):
        self.momentum, self.eps = momentum, eps
        self.weight = Parameter(np.ones(c))
        self.bias = Parameter(np.zeros(c))
        self.running_mean = np.zeros(c, dtype=get_default_dtype())
        self.running_var = np.ones(c, dtype=get_default_dtype())

    def forward(self, x):
        x = as_tensor(x)
        if x.shape[1] != self.weight.shape[0]:
            raise ShapeError(f"batch_norm: expected {self.weight.shape[0]} channels, got {x.shape[1]}")
        if self.training:
            fn_out = BatchNormFn.apply(x, self.weight, self.bias, eps=self.eps)
            n = x.shape[0] * x.shape[2] * x.shape[3]
            mean = x.data.mean(axis=(0, 2, 3))
            var = x.data.var(axis=(0, 2, 3)) * (n / max(n - 1, 1))
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean + m * mean).astype(self.running_mean.dtype)
            self.running_var = ((1 - m) * self.running_var + m * var).astype(self.running_var.dtype)
            return fn_out
        inv = 1.0 / np.sqrt(self.running_var + self.eps)
        scale = self.weight * Tensor(inv, dtype=x.dtype)
        shift = self.bias - scale * Tensor(self.running_mean, dtype=x.dtype)
        return x * scale.reshape(1, -1, 1, 1) + shift.reshape(1, -1, 1, 1)


class GroupNorm(Module):
    def __init__(self, c: int, group_size: int = 8, eps: float = 1e-5):
        if c % group_size:
            raise ShapeError(f"group norm: {c} channels not a multiple of group size {group_size}")
        self.groups, self.eps = c // group_size, eps
        self.weight = Parameter(np.ones(c))
        self.bias = Parameter(np.zeros(c))

    def forward(self, x):
        return GroupNormFn.apply(x, self.weight, self.bias, groups=self.groups, eps=self.eps)


def make_norm(kind: str, c: int) -> Module:
    if kind == "batch":
        return BatchNorm2d(c)
    if kind == "group":
        return GroupNorm(c, group_size=max(d for d in range(1, 9) if c % d == 0))
    raise ValueError(f"unknown norm kind {kind!r}")


class ConvNormReLU(Module):
    def __init__(self, c_in, c_out, k=3, stride=1, norm="batch", rng=None):
        self.conv = Conv2d(c_in, c_out, k, stride, rng=rng)
        self.norm = make_norm(norm, c_out)

    def forward(self, x):
        return relu(self.norm(self.conv(x)))


# ---------------------------------------------------------------------------
# dense layers and pooling
# ---------------------------------------------------------------------------


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng=None, zero: bool = False):
        rng = rng or np.random.default_rng(0)
        w = np.zeros((d_in, d_out)) if zero else kaiming_uniform(rng, (d_in, d_out), d_in)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(d_out))

    def forward(self, x):
        return x @ self.weight + self.bias


class MLP(Module):
    """Two affine layers with a ReLU between them."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng=None, zero_last: bool = False):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng, zero=zero_last)

    def forward(self, x):
        return self.fc2(relu(self.fc1(x)))


def gap(x) -> Tensor:
    """Global average pool ``[B, C, H, W] -> [B, C, 1, 1]``."""
    return as_tensor(x).mean(axis=(2, 3), keepdims=True)


def avg_pool2d(x, k: int) -> Tensor:
    """Non-overlapping ``k x k`` average pooling; a ragged border is dropped."""
    x = as_tensor(x)
    B, C, H, W = x.shape
    hn, wn = H // k, W // k
    if hn < 1 or wn < 1:
        raise ShapeError(f"avg_pool2d: kernel {k} larger than input {H}x{W}")
    if hn * k != H or wn * k != W:
        x = x[:, :, :hn * k, :wn * k]
    return x.reshape(B, C, hn, k, wn, k).mean(axis=(3, 5))


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------


def _resize_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Row-stochastic bilinear interpolation matrix (half-pixel centres, edge clamp)."""
    scale = n_in / n_out
    src = np.maximum((np.arange(n_out) + 0.5) * scale - 0.5, 0.0)
    i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in), dtype=dtype)
    np.add.at(m, (np.arange(n_out), i0), 1.0 - frac)
    np.add.at(m, (np.arange(n_out), i1), frac)
    return m


class ResizeFn(Function):
    name = "resize_bilinear"

    def forward(self, x, size=(1, 1)):
        self.ry = _resize_matrix(x.shape[2], size[0], x.dtype)
        self.rx = _resize_matrix(x.shape[3], size[1], x.dtype)
        return np.ascontiguousarray(self.ry @ x @ self.rx.T)

    def backward(self, g):
        return np.ascontiguousarray(self.ry.T @ g @ self.rx)


def resize_bilinear(x, size: tuple[int, int]) -> Tensor:
    x = as_tensor(x)
    if tuple(x.shape[2:]) == tuple(size):
        return x
    return ResizeFn.apply(x, size=tuple(size))


def _corner_matrices(shape, px: np.ndarray, py: np.ndarray, dtype):
    """Sparse [B*N, B*H*W] interpolation matrix plus its d/dx and d/dy companions.

    Every row holds the four bilinear corners; out-of-bounds corners carry weight 0.
    """
    B, H, W = shape
    N = px.shape[1]
    x0f, y0f = np.floor(px), np.floor(py)
    fx, fy = px - x0f, py - y0f
    x0, y0 = x0f.astype(np.int64), y0f.astype(np.int64)
    cols, wts, dxs, dys = [], [], [], []
    corner = (((0, 0), (1 - fy) * (1 - fx), -(1 - fy), -(1 - fx)),
              ((0, 1), (1 - fy) * fx, (1 - fy), -fx),
              ((1, 0), fy * (1 - fx), -fy, (1 - fx)),
              ((1, 1), fy * fx, fy, fx))
    offset = (np.arange(B) * (H * W))[:, None]
    for (dy, dx), w, wdx, wdy in corner:
        yy, xx = y0 + dy, x0 + dx
        valid = (xx >= 0) & (xx < W) & (yy >= 0) & (yy < H)
        cols.append(np.where(valid, yy * W + xx, 0) + offset)
        wts.append(w * valid)
        dxs.append(wdx * valid)
        dys.append(wdy * valid)
    idx = np.stack(cols, axis=-1).reshape(-1)
    ptr = np.arange(0, 4 * B * N + 1, 4)
    size = (B * N, B * H * W)
    mk = lambda parts: sparse.csr_matrix(
        (np.stack(parts, axis=-1).reshape(-1).astype(dtype), idx, ptr), shape=size)
    return mk(wts), mk(dxs), mk(dys)


def _bilinear_forward(x: np.ndarray, px: np.ndarray, py: np.ndarray):
    """Sample ``x [B,C,H,W]`` at float coordinates ``px, py [B,N]`` with zero padding."""
    B, C, H, W = x.shape
    N = px.shape[1]
    s, sx, sy = _corner_matrices((B, H, W), px, py, x.dtype)
    xt = np.ascontiguousarray(x.transpose(0, 2, 3, 1)).reshape(B * H * W, C)
    rows = s @ xt                                               # [B*N, C]
    out = rows.reshape(B, N, C).transpose(0, 2, 1)
    cache = (x.shape, xt, s, sx, sy)
    return out, cache


def _bilinear_backward(g: np.ndarray, cache, need_x=True, need_xy=True):
    """Gradients of the bilinear sampler for upstream ``g [B,C,N]``."""
    (B, C, H, W), xt, s, sx, sy = cache
    N = g.shape[2]
    gt = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(B * N, C)
    gx = gpx = gpy = None
    if need_x:
        gx = (s.T @ gt).reshape(B, H, W, C).transpose(0, 3, 1, 2).astype(g.dtype)
    if need_xy:
        gpx = ((sx @ xt) * gt).sum(axis=1).reshape(B, N)
        gpy = ((sy @ xt) * gt).sum(axis=1).reshape(B, N)
    return gx, gpx, gpy


class BilinearSampleFn(Function):
    name = "bilinear_sample"

    def forward(self, feat, coords):
        B, C, H, W = feat.shape
        if coords.shape[0] != B or coords.shape[1] != 2:
            raise ShapeError(f"bilinear_sample: coords must be [B,2,...], got {coords.shape}")
        self.cshape = coords.shape
        px = coords[:, 0].reshape(B, -1)
        py = coords[:, 1].reshape(B, -1)
        out, self.cache = _bilinear_forward(feat, px, py)
        return out.reshape((B, C) + coords.shape[2:])

    def backward(self, g):
        B, C = g.shape[:2]
        gx, gpx, gpy = _bilinear_backward(g.reshape(B, C, -1), self.cache, self.needs[0], self.needs[1])
        gc = None
        if self.needs[1]:
            gc = np.stack([gpx, gpy], axis=1).reshape(self.cshape)
        return gx, gc


def bilinear_sample(feature, coords) -> Tensor:
    """Sample ``feature`` at absolute pixel coordinates ``coords[:, 0] = x, coords[:, 1] = y``."""
    return BilinearSampleFn.apply(feature, coords)


# 3x3 tap displacements in row-major kernel order
_TAPS = np.array([(ky, kx) for ky in (-1, 0, 1) for kx in (-1, 0, 1)], dtype=np.float64)


class DeformConvFn(Function):
    """Modulated 3x3 deformable convolution, stride 1, zero-padded borders.

    ``offsets`` holds (dy, dx) per tap, taps in row-major kernel order; ``mask``
    is the already-squashed modulation in [0, 1].
    """

    name = "deform_conv"

    def forward(self, x, offsets, mask, w, b):
        B, C, H, W = x.shape
        O = w.shape[0]
        if offsets.shape != (B, 18, H, W) or mask.shape != (B, 9, H, W):
            raise ShapeError(f"deform_conv: offsets {offsets.shape} / mask {mask.shape} "
                             f"do not match input {x.shape}")
        if w.shape != (O, C, 3, 3):
            raise ShapeError(f"deform_conv: weight {w.shape} does not match {C} input channels")
        off = offsets.reshape(B, 9, 2, H, W)
        hh = np.arange(H, dtype=x.dtype)[:, None]
        ww = np.arange(W, dtype=x.dtype)[None, :]
        py = hh + _TAPS[:, 0, None, None].astype(x.dtype) + off[:, :, 0]
        px = ww + _TAPS[:, 1, None, None].astype(x.dtype) + off[:, :, 1]
        vals, self.cache = _bilinear_forward(x, px.reshape(B, -1), py.reshape(B, -1))
        self.vals = vals.reshape(B, C, 9, H * W)
        self.m = mask.reshape(B, 1, 9, H * W)
        self.cols = (self.vals * self.m).reshape(B, C * 9, H * W)
        self.w, self.geom = w, (B, C, H, W, O)
        out = w.reshape(O, C * 9) @ self.cols + b[None, :, None]
        return out.reshape(B, O, H, W)

    def backward(self, g):
        B, C, H, W, O = self.geom
        gf = g.reshape(B, O, H * W)
        wm = self.w.reshape(O, C * 9)
        gw = np.einsum("bon,bkn->ok", gf, self.cols).reshape(self.w.shape) if self.needs[3] else None
        gb = gf.sum(axis=(0, 2)) if self.needs[4] else None
        gx = goff = gmask = None
        if self.needs[0] or self.needs[1] or self.needs[2]:
            gcols = (wm.T @ gf).reshape(B, C, 9, H * W)
            if self.needs[2]:
                gmask = (gcols * self.vals).sum(axis=1).reshape(B, 9, H, W)
            if self.needs[0] or self.needs[1]:
                gvals = (gcols * self.m).reshape(B, C, 9 * H * W)
                gx, gpx, gpy = _bilinear_backward(gvals, self.cache, self.needs[0], self.needs[1])
                if self.needs[1]:
                    goff = np.stack([gpy.reshape(B, 9, H, W), gpx.reshape(B, 9, H, W)], axis=2)
                    goff = goff.reshape(B, 18, H, W)
        return gx, goff, gmask, gw, gb


def deform_conv(feature, offsets, mask, weight, bias=None) -> Tensor:
    if bias is None:
        bias = Tensor(np.zeros(weight.shape[0]), dtype=as_tensor(weight).dtype)
    return DeformConvFn.apply(feature, offsets, mask, weight, bias)


def identity_kernel(c: int) -> np.ndarray:
    """Centre-one 3x3 kernel mapping channel c to channel c."""
    w = np.zeros((c, c, 3, 3))
    w[np.arange(c), np.arange(c), 1, 1] = 1.0
    return w


class DeformConv2d(Module):
    def __init__(self, c: int, rng=None, identity: bool = True):
        rng = rng or np.random.default_rng(0)
        w = identity_kernel(c) if identity else kaiming_uniform(rng, (c, c, 3, 3), 9 * c)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(c))

    def forward(self, x, offsets, mask):
        return deform_conv(x, offsets, mask, self.weight, self.bias)


# ---------------------------------------------------------------------------
# classification loss
# ---------------------------------------------------------------------------


class WeightedCrossEntropyFn(Function):
    """``sum_p weight[p] * -log softmax(logits)[label[p]]`` over the class axis 1."""

    name = "cross_entropy"

    def forward(self, logits, labels=None, weights=None):
        K = logits.shape[1]
        lab = np.asarray(labels)
        if lab.shape != logits.shape[:1] + logits.shape[2:]:
            raise ShapeError(f"cross_entropy: labels {lab.shape} vs logits {logits.shape}")
        if np.any((lab < 0) | (lab >= K)):
            raise DomainError("cross_entropy: label outside [0, K)")
        s = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(s).sum(axis=1, keepdims=True))
        logp = s - lse
        self.p = np.exp(logp)
        self.lab = lab
        self.w = np.asarray(weights, dtype=logits.dtype)
        picked = np.take_along_axis(logp, lab[:, None], axis=1)[:, 0]
        return np.asarray((-picked * self.w).sum(), dtype=logits.dtype)

    def backward(self, g):
        grad = self.p.copy()
        onehot = np.zeros_like(grad)
        np.put_along_axis(onehot, self.lab[:, None], 1.0, axis=1)
        grad -= onehot
        return grad * (self.w[:, None] * g)


def weighted_cross_entropy(logits, labels: np.ndarray, weights: np.ndarray) -> Tensor:
    return WeightedCrossEntropyFn.apply(logits, labels=labels, weights=weights)


def mean_cross_entropy(logits, labels: np.ndarray, ignore_index: int = 65535):
    """Mean CE over non-ignored pixels. Returns ``(loss, valid_count)``; zero loss if none valid."""
    lab = np.asarray(labels).astype(np.int64)
    valid = lab != ignore_index
    n = int(valid.sum())
    logits = as_tensor(logits)
    safe = np.where(valid, lab, 0)
    w = valid.astype(logits.dtype) / max(n, 1)
    return weighted_cross_entropy(logits, safe, w), n
