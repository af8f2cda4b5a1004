"""Differentiable primitives over :class:`~smalltarget.tensor.Tensor`.

Feature maps are laid out (batch, channels, height, width). Each function
returns a new tensor and, when gradients are enabled, a closure producing the
input gradients from the output gradient.
"""

from __future__ import annotations

import builtins
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .tensor import ShapeError, Tensor, as_tensor, make_node

GELU_C = math.sqrt(2.0 / math.pi)
GELU_K = 0.044715


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    if a.ndim != b.ndim:
        raise ShapeError(f"{op}: rank mismatch {a.shape} vs {b.shape}", axis="rank")
    axis = next(i for i, (p, q) in enumerate(zip(a.shape, b.shape)) if p != q)
    raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}", axis=axis)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return make_node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return make_node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two same-shape tensors."""
    _same_shape(a, b, "mul")
    return make_node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    out = a.data / b.data
    return make_node(out, (a, b), lambda g: (g / b.data, -g * out / b.data), "div")


def neg(a: Tensor) -> Tensor:
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def absolute(a: Tensor) -> Tensor:
    """|a|; the subgradient at 0 is 0."""
    sign = np.sign(a.data)
    return make_node(np.abs(a.data), (a,), lambda g: (g * sign,), "absolute")


def add_scalar(a: Tensor, c: float) -> Tensor:
    return make_node(a.data + a.data.dtype.type(c), (a,), lambda g: (g,), "add_scalar")


def scale(x: Tensor, factor) -> Tensor:
    """Multiply ``x`` by a scalar or by a tensor broadcastable to ``x``.

    Broadcast factors are how channel gates (n, c, 1, 1) and spatial gates
    (n, 1, h, w) are applied.
    """
    if not isinstance(factor, Tensor):
        f = x.data.dtype.type(factor)
        return make_node(x.data * f, (x,), lambda g: (g * f,), "scale")
    try:
        shape = np.broadcast_shapes(x.shape, factor.shape)
    except ValueError:
        raise ShapeError(f"scale: cannot broadcast {factor.shape} onto {x.shape}") from None
    if shape != x.shape:
        raise ShapeError(f"scale: factor {factor.shape} would enlarge {x.shape}")

    def bw(g):
        return g * factor.data, _unbroadcast(g * x.data, factor.shape)

    return make_node(x.data * factor.data, (x, factor), bw, "scale")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_node(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return make_node(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return make_node(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def square(x: Tensor) -> Tensor:
    return make_node(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def atan(x: Tensor) -> Tensor:
    return make_node(np.arctan(x.data), (x,), lambda g: (g / (1.0 + x.data * x.data),), "atan")


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    _same_shape(a, b, "maximum")
    pick = a.data >= b.data
    return make_node(np.where(pick, a.data, b.data), (a, b),
                     lambda g: (g * pick, g * ~pick), "maximum")


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    _same_shape(a, b, "minimum")
    pick = a.data <= b.data
    return make_node(np.where(pick, a.data, b.data), (a, b),
                     lambda g: (g * pick, g * ~pick), "minimum")


def clamp(x: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    out = np.clip(x.data, lo, hi)
    inside = out == x.data
    return make_node(out, (x,), lambda g: (g * inside,), "clamp")


# ---------------------------------------------------------------- activations

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, kept inside the open interval (0, 1) at the working precision."""
    fi = np.finfo(x.dtype)
    out = np.clip(expit(x.data), fi.tiny, 1.0 - fi.epsneg)
    return make_node(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(x: Tensor) -> Tensor:
    s = expit(x.data)
    return make_node(x.data * s, (x,), lambda g: (g * s * (1.0 + x.data * (1.0 - s)),), "silu")


def gelu(x: Tensor) -> Tensor:
    """tanh approximation: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))."""
    v = x.data
    t = np.tanh(GELU_C * (v + GELU_K * v ** 3))

    def bw(g):
        dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * v * v)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * dt),)

    return make_node(0.5 * v * (1.0 + t), (x,), bw, "gelu")


def softplus(x: Tensor) -> Tensor:
    return make_node(np.logaddexp(0, x.data).astype(x.dtype), (x,),
                     lambda g: (g * expit(x.data),), "softplus")


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Elementwise binary cross-entropy of sigmoid(logits) against targets."""
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise ShapeError(f"bce: targets {t.shape} vs logits {logits.shape}")
    z = logits.data
    out = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    return make_node(out, (logits,), lambda g: (g * (expit(z) - t),), "bce_with_logits")


# ---------------------------------------------------------------- reductions / shape

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_node(np.asarray(out), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum(x, axis, keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)
    return make_node(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                     lambda g: (g.transpose(inv),), "transpose")


def take(x: Tensor, index, axis: int) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate gradient."""
    index = np.asarray(index, dtype=np.int64)
    out = np.take(x.data, index, axis=axis)

    def bw(g):
        gx = np.zeros_like(x.data)
        moved = np.moveaxis(gx, axis, 0)
        np.add.at(moved, index, np.moveaxis(g, axis, 0))
        return (gx,)

    return make_node(out, (x,), bw, "take")


def permute_tokens(x: Tensor, perm: np.ndarray) -> Tensor:
    """Reorder the last axis by a permutation (scatter gradient, no accumulation)."""
    inv = np.argsort(perm)
    return make_node(x.data[..., perm], (x,), lambda g: (g[..., inv],), "permute_tokens")


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    ref = xs[0].shape
    for t in xs[1:]:
        for ax, (p, q) in enumerate(zip(ref, t.shape)):
            if ax != axis and p != q:
                raise ShapeError(f"concat: {ref} vs {t.shape}", axis=ax)
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum(sizes)[:-1]
    return make_node(np.concatenate([t.data for t in xs], axis=axis), tuple(xs),
                     lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return make_node(x.data[index].copy(), (x,), bw, "slice")


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    return slice_axis(x, 1, start, stop)


def split(x: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    """Split along the channel axis into consecutive blocks of ``sizes``."""
    if builtins.sum(sizes) != x.shape[1]:
        raise ShapeError(f"split: sizes {list(sizes)} do not cover {x.shape[1]} channels", axis=1)
    out, start = [], 0
    for s in sizes:
        out.append(slice_channels(x, start, start + s))
        start += s
    return out


def space_to_depth(x: Tensor) -> Tensor:
    """(n, c, h, w) -> (n, 4c, h/2, w/2), sub-pixel groups ordered
    [(0,0), (1,0), (0,1), (1,1)] as (row offset, col offset)."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"space_to_depth needs even spatial dims, got {h}x{w}",
                         axis="height" if h % 2 else "width")
    offsets = ((0, 0), (1, 0), (0, 1), (1, 1))
    out = np.concatenate([x.data[:, :, i::2, j::2] for i, j in offsets], axis=1)

    def bw(g):
        gx = np.empty_like(x.data)
        for k, (i, j) in enumerate(offsets):
            gx[:, :, i::2, j::2] = g[:, k * c:(k + 1) * c]
        return (gx,)

    return make_node(out, (x,), bw, "space_to_depth")


# ---------------------------------------------------------------- pooling

def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)
    return make_node(out, (x,), lambda g: (np.broadcast_to(g / (h * w), x.shape).copy(),),
                     "global_avg_pool")


def adaptive_avg_pool(x: Tensor, out: int = 1) -> Tensor:
    if out == 1:
        return global_avg_pool(x)
    n, c, h, w = x.shape
    if h % out or w % out:
        raise ShapeError(f"adaptive_avg_pool: {h}x{w} not divisible by {out}")
    r = reshape(x, (n, c, out, h // out, out, w // out))
    return mean(mean(r, axis=5), axis=3)


def adaptive_max_pool(x: Tensor, out: int = 1) -> Tensor:
    """Max over the spatial grid; ties go to the lowest linear index."""
    if out != 1:
        raise NotImplementedError("adaptive_max_pool supports out=1")
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    idx = flat.argmax(axis=2)
    val = np.take_along_axis(flat, idx[..., None], axis=2).reshape(n, c, 1, 1)

    def bw(g):
        gx = np.zeros((n, c, h * w), dtype=x.dtype)
        np.put_along_axis(gx, idx[..., None], g.reshape(n, c, 1), axis=2)
        return (gx.reshape(x.shape),)

    return make_node(val, (x,), bw, "adaptive_max_pool")


def channel_mean(x: Tensor) -> Tensor:
    c = x.shape[1]
    return make_node(x.data.mean(axis=1, keepdims=True), (x,),
                     lambda g: (np.broadcast_to(g / c, x.shape).copy(),), "channel_mean")


def channel_max(x: Tensor) -> Tensor:
    """Max over channels; ties go to the lowest channel index."""
    idx = x.data.argmax(axis=1)[:, None]
    val = np.take_along_axis(x.data, idx, axis=1)

    def bw(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, g, axis=1)
        return (gx,)

    return make_node(val, (x,), bw, "channel_max")


# ---------------------------------------------------------------- linear / conv

def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x Wᵀ + b for x of shape (n, in) and W of shape (out, in)."""
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError(f"linear expects 2-D operands, got {x.shape} and {w.shape}", axis="rank")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input width {x.shape[1]} vs weight {w.shape}", axis=1)
    out = x.data @ w.data.T
    if b is not None:
        if b.shape != (w.shape[0],):
            raise ShapeError(f"linear: bias {b.shape} vs {w.shape[0]} outputs", axis=0)
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        grads = [g @ w.data, g.T @ x.data]
        if b is not None:
            grads.append(g.sum(axis=0))
        return grads

    return make_node(out, parents, bw, "linear")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation. ``w`` has shape (c_out, c_in/groups, k, k)."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be (n, c, h, w), got {x.shape}", axis="rank")
    n, c_in, h, wd = x.shape
    c_out, c_per, kh, kw = w.shape
    if kh != kw:
        raise ShapeError(f"conv2d: non-square kernel {kh}x{kw}", axis="kernel")
    if c_in % groups or c_out % groups:
        raise ShapeError(f"conv2d: channels {c_in}->{c_out} not divisible by groups={groups}",
                         axis="channels")
    if c_per != c_in // groups:
        raise ShapeError(f"conv2d: weight expects {c_per * groups} input channels, got {c_in}",
                         axis="channels")
    if b is not None and b.shape != (c_out,):
        raise ShapeError(f"conv2d: bias {b.shape} vs {c_out} outputs", axis="channels")
    k = kh
    oh = (h + 2 * padding - k) // stride + 1
    ow = (wd + 2 * padding - k) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {h}x{wd}", axis="height")

    if k == 1 and stride == 1 and padding == 0 and groups == 1:
        out, bw_core = _conv1x1(x.data, w.data)
    elif groups == c_in and c_out == c_in:
        out, bw_core = _conv_depthwise(x.data, w.data, stride, padding, oh, ow)
    elif groups == 1:
        out, bw_core = _conv_dense(x.data, w.data, stride, padding, oh, ow)
    else:
        out, bw_core = _conv_grouped(x.data, w.data, stride, padding, groups, oh, ow)
    if b is not None:
        out += b.data[None, :, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gx, gw = bw_core(g)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return make_node(out, parents, bw, "conv2d")


def _conv1x1(x: np.ndarray, w: np.ndarray):
    n, c, h, wd = x.shape
    wm = w.reshape(w.shape[0], c)
    xf = x.reshape(n, c, h * wd)
    out = np.matmul(wm, xf).reshape(n, -1, h, wd)

    def bw(g):
        gf = g.reshape(n, -1, h * wd)
        gx = np.matmul(wm.T, gf).reshape(x.shape)
        gw = np.einsum("nol,ncl->oc", gf, xf).reshape(w.shape)
        return gx, gw

    return out, bw


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _windows(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride][:, :, :oh, :ow]  # (n, c, oh, ow, k, k)


def _col2im(gcols: np.ndarray, xshape, k, stride, padding, oh, ow, dtype) -> np.ndarray:
    """Scatter-add window gradients (n, c, oh, ow, k, k) back onto the input."""
    n, c, h, w = xshape
    gxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=dtype)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += gcols[..., i, j]
    if padding:
        gxp = gxp[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(gxp)


def _conv_dense(x, w, stride, padding, oh, ow):
    n, c, _, _ = x.shape
    c_out, _, k, _ = w.shape
    win = _windows(_pad(x, padding), k, stride, oh, ow)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * k * k)
    wm = w.reshape(c_out, -1)
    out = (cols @ wm.T).reshape(n, oh, ow, c_out).transpose(0, 3, 1, 2)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, c_out)
        gw = (g2.T @ cols).reshape(w.shape)
        gcols = (g2 @ wm).reshape(n, oh, ow, c, k, k).transpose(0, 3, 1, 2, 4, 5)
        return _col2im(gcols, x.shape, k, stride, padding, oh, ow, x.dtype), gw

    return np.ascontiguousarray(out), bw


def _conv_depthwise(x, w, stride, padding, oh, ow):
    k = w.shape[2]
    xp = _pad(x, padding)
    win = _windows(xp, k, stride, oh, ow)
    wk = w[:, 0]  # (c, k, k)
    out = np.einsum("nchwij,cij->nchw", win, wk, optimize=True)

    def bw(g):
        gw = np.einsum("nchwij,nchw->cij", win, g, optimize=True)[:, None]
        gcols = g[..., None, None] * wk[None, :, None, None]
        return _col2im(gcols, x.shape, k, stride, padding, oh, ow, x.dtype), gw

    return out, bw


def _conv_grouped(x, w, stride, padding, groups, oh, ow):
    c_in = x.shape[1]
    c_out = w.shape[0]
    ci, co = c_in // groups, c_out // groups
    parts = [_conv_dense(x[:, gi * ci:(gi + 1) * ci], w[gi * co:(gi + 1) * co], stride, padding,
                         oh, ow) for gi in range(groups)]
    out = np.concatenate([p[0] for p in parts], axis=1)

    def bw(g):
        gxs, gws = zip(*(p[1](g[:, gi * co:(gi + 1) * co]) for gi, p in enumerate(parts)))
        return np.concatenate(gxs, axis=1), np.concatenate(gws, axis=0)

    return out, bw


# ---------------------------------------------------------------- batch norm

class UninitializedStatsError(RuntimeError):
    """Eval-mode batch norm was called before any statistics were collected."""


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray
    tracked: int = 0
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32) -> RunningStats:
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, stats: RunningStats,
               training: bool) -> Tensor:
    """Per-channel normalization over (n, h, w).

    Training mode uses batch statistics and updates ``stats`` in place
    (unbiased variance for the running estimate). Eval mode uses ``stats``.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: affine params {gamma.shape} vs {c} channels", axis=1)
    axes = (0, 2, 3)
    shp = (1, c, 1, 1)
    if not training:
        if stats.tracked == 0:
            raise UninitializedStatsError("batch_norm in eval mode before any training step")
        inv = 1.0 / np.sqrt(stats.var.astype(x.dtype) + stats.eps)
        xhat = (x.data - stats.mean.reshape(shp)) * inv.reshape(shp)
        out = gamma.data.reshape(shp) * xhat + beta.data.reshape(shp)

        def bw_eval(g):
            return (g * (gamma.data * inv).reshape(shp), (g * xhat).sum(axes), g.sum(axes))

        return make_node(out.astype(x.dtype), (x, gamma, beta), bw_eval, "batch_norm")

    m = x.data.size // c
    mu = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    inv = 1.0 / np.sqrt(var + stats.eps)
    xhat = (x.data - mu.reshape(shp)) * inv.reshape(shp)
    out = gamma.data.reshape(shp) * xhat + beta.data.reshape(shp)

    unbiased = var * (m / (m - 1)) if m > 1 else var
    mom = stats.momentum
    stats.mean[...] = (1 - mom) * stats.mean + mom * mu
    stats.var[...] = (1 - mom) * stats.var + mom * unbiased
    stats.tracked += 1

    def bw(g):
        gxhat = g * gamma.data.reshape(shp)
        s1 = gxhat.sum(axes).reshape(shp)
        s2 = (gxhat * xhat).sum(axes).reshape(shp)
        gx = inv.reshape(shp) / m * (m * gxhat - s1 - xhat * s2)
        return gx, (g * xhat).sum(axes), g.sum(axes)

    return make_node(out, (x, gamma, beta), bw, "batch_norm")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the channel axis at every (n, h, w) position."""
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm: affine params {gamma.shape} vs {c} channels", axis=1)
    shp = (1, c) + (1,) * (x.ndim - 2)
    red = (0,) + tuple(range(2, x.ndim))
    mu = x.data.mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(x.data.var(axis=1, keepdims=True) + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data.reshape(shp) * xhat + beta.data.reshape(shp)

    def bw(g):
        gxhat = g * gamma.data.reshape(shp)
        s1 = gxhat.mean(axis=1, keepdims=True)
        s2 = (gxhat * xhat).mean(axis=1, keepdims=True)
        return inv * (gxhat - s1 - xhat * s2), (g * xhat).sum(red), g.sum(red)

    return make_node(out.astype(x.dtype), (x, gamma, beta), bw, "layer_norm")


__all__ = [
    "RunningStats", "UninitializedStatsError", "absolute", "add", "add_scalar", "adaptive_avg_pool",
    "adaptive_max_pool", "atan", "batch_norm", "bce_with_logits", "channel_max", "channel_mean",
    "clamp", "concat", "conv2d", "div", "exp", "gelu", "global_avg_pool", "layer_norm", "linear", "log",
    "maximum", "mean", "minimum", "mul", "neg", "permute_tokens", "relu", "reshape", "scale",
    "sigmoid", "silu", "slice_axis", "slice_channels", "softplus", "space_to_depth", "split", "sqrt", "square",
    "sub", "sum", "take", "transpose", "as_tensor",
]
