"""Differentiable primitives on 4-D ``(n, c, h, w)`` tensors and their flat views."""
from __future__ import annotations

import numpy as np
from scipy.special import erf

from . import kernels
from .core import DimensionError, ContractError, Tensor, as_tensor, make_result

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not match") from None


# ----------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), add)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return make_result(a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), sub)


def hadamard(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "hadamard")
    return make_result(a.data * b.data, (a, b),
                       lambda g: (_unbroadcast(g * b.data, a.shape),
                                  _unbroadcast(g * a.data, b.shape)), hadamard)


def scale(a: Tensor, factor: float) -> Tensor:
    return make_result(a.data * factor, (a,), lambda g: (g * factor,), scale, {"factor": factor})


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return make_result(y, (a,), lambda g: (g * y,), exp)


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return make_result(y, (a,), lambda g: (g * y * (1.0 - y),), sigmoid)


def silu(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return make_result(a.data * s, (a,), lambda g: (g * s * (1.0 + a.data * (1.0 - s)),), silu)


def softplus(a: Tensor) -> Tensor:
    x = a.data
    y = np.logaddexp(0.0, x)
    return make_result(y, (a,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * x)),), softplus)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    return make_result(x * cdf, (a,),
                       lambda g: (g * (cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)),), gelu)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    return make_result(y, (a,), bw, softmax, {"axis": axis})


# alias used by the block code and documentation
softmax_over_axis = softmax


def l2_normalize(a: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """``x / max(||x||, eps)`` along ``axis``."""
    x = a.data
    norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    clipped = norm <= eps
    denom = np.where(clipped, eps, norm)
    y = x / denom

    def bw(g):
        proj = (g * y).sum(axis=axis, keepdims=True)
        return (np.where(clipped, g / eps, (g - y * proj) / denom),)
    return make_result(y, (a,), bw, l2_normalize, {"axis": axis, "eps": eps})


# ------------------------------------------------------------------ reductions

def sum_all(a: Tensor) -> Tensor:
    return make_result(np.array(a.data.sum()), (a,),
                       lambda g: (np.broadcast_to(g, a.shape).copy(),), sum_all)


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    return make_result(np.array(a.data.mean()), (a,),
                       lambda g: (np.full(a.shape, float(g) / n),), mean_all)


def mean_spatial(a: Tensor) -> Tensor:
    """Global average pool over (h, w), keeping dims."""
    h, w = a.shape[2], a.shape[3]
    return make_result(a.data.mean(axis=(2, 3), keepdims=True), (a,),
                       lambda g: (np.broadcast_to(g / (h * w), a.shape).copy(),), mean_spatial)


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error."""
    target = as_tensor(target)
    _check_broadcast(pred, target, "l1_loss")
    diff = pred.data - target.data
    n = diff.size

    def bw(g):
        s = np.sign(diff) * (float(g) / n)
        return s, -s
    return make_result(np.array(np.abs(diff).mean()), (pred, target), bw, l1_loss)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error."""
    target = as_tensor(target)
    _check_broadcast(pred, target, "mse_loss")
    diff = pred.data - target.data
    n = diff.size

    def bw(g):
        s = diff * (2.0 * float(g) / n)
        return s, -s
    return make_result(np.array((diff * diff).mean()), (pred, target), bw, mse_loss)


# ------------------------------------------------------------- shape plumbing

def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(shape)
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),),
                       reshape, {"shape": shape})


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                       lambda g: (g.transpose(inv),), transpose, {"axes": axes})


def take_last(a: Tensor, index: np.ndarray) -> Tensor:
    """Gather along the last axis with a permutation ``index``."""
    inv = np.empty_like(index)
    inv[index] = np.arange(index.size)
    return make_result(a.data[..., index], (a,), lambda g: (g[..., inv],),
                       take_last, {"index": index})


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise DimensionError(f"concat: shapes {a.shape} and {b.shape} do not match")
    ca = a.shape[1]
    return make_result(np.concatenate([a.data, b.data], axis=1), (a, b),
                       lambda g: (g[:, :ca], g[:, ca:]), concat_channels)


def slice_channels(a: Tensor, start: int, stop: int) -> Tensor:
    def bw(g):
        out = np.zeros_like(a.data)
        out[:, start:stop] = g
        return (out,)
    return make_result(a.data[:, start:stop].copy(), (a,), bw, slice_channels,
                       {"start": start, "stop": stop})


def pixel_unshuffle(a: Tensor, r: int = 2) -> Tensor:
    """(n, c, h, w) -> (n, c*r*r, h/r, w/r); channel index = c*r*r + dy*r + dx."""
    n, c, h, w = a.shape
    if h % r or w % r:
        raise DimensionError(f"pixel_unshuffle: spatial dims {(h, w)} not divisible by {r}")
    y = a.data.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4)
    y = np.ascontiguousarray(y).reshape(n, c * r * r, h // r, w // r)

    def bw(g):
        g = g.reshape(n, c, r, r, h // r, w // r).transpose(0, 1, 4, 2, 5, 3)
        return (np.ascontiguousarray(g).reshape(n, c, h, w),)
    return make_result(y, (a,), bw, pixel_unshuffle, {"r": r})


def pixel_shuffle(a: Tensor, r: int = 2) -> Tensor:
    """Exact inverse of :func:`pixel_unshuffle`."""
    n, c, h, w = a.shape
    if c % (r * r):
        raise DimensionError(f"pixel_shuffle: channels {c} not divisible by {r * r}")
    co = c // (r * r)
    y = a.data.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    y = np.ascontiguousarray(y).reshape(n, co, h * r, w * r)

    def bw(g):
        g = g.reshape(n, co, h, r, w, r).transpose(0, 1, 3, 5, 2, 4)
        return (np.ascontiguousarray(g).reshape(n, c, h, w),)
    return make_result(y, (a,), bw, pixel_shuffle, {"r": r})


# ---------------------------------------------------------------- linear maps

def batched_matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading axes."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"batched_matmul: inner dimensions of {a.shape} and {b.shape} differ")
    y = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return make_result(y, (a, b), bw, batched_matmul)


def conv_1x1(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    n, ci, h, w = x.shape
    co = weight.shape[0]
    if weight.ndim != 4 or weight.shape[1] != ci or weight.shape[2:] != (1, 1):
        raise DimensionError(f"conv_1x1: weight {weight.shape} incompatible with input {x.shape}")
    w2 = weight.data.reshape(co, ci)
    xr = x.data.reshape(n, ci, h * w)
    y = np.matmul(w2, xr)
    if bias is not None:
        y += bias.data[None, :, None]
    y = y.reshape(n, co, h, w)

    def bw(g):
        gr = g.reshape(n, co, h * w)
        gx = np.matmul(w2.T, gr).reshape(x.shape)
        gw = np.tensordot(gr, xr, axes=([0, 2], [0, 2])).reshape(weight.shape)
        out = [gx, gw]
        if bias is not None:
            out.append(gr.sum(axis=(0, 2)))
        return tuple(out)
    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(y, parents, bw, conv_1x1)


def depthwise_conv_3x3(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel 3x3 cross-correlation, stride 1, zero padding 1."""
    n, c, h, w = x.shape
    if weight.shape != (c, 1, 3, 3):
        raise DimensionError(f"depthwise_conv_3x3: weight {weight.shape} incompatible with input {x.shape}")
    backend = kernels.active()
    xd = np.ascontiguousarray(x.data)
    k = np.ascontiguousarray(weight.data[:, 0])
    y = np.asarray(backend.dwconv3x3_forward(xd, k))
    if bias is not None:
        y += bias.data[None, :, None, None]

    def bw(g):
        gx, gk = backend.dwconv3x3_backward(np.ascontiguousarray(g), xd, k)
        out = [np.asarray(gx), np.asarray(gk).reshape(c, 1, 3, 3)]
        if bias is not None:
            out.append(g.sum(axis=(0, 2, 3)))
        return tuple(out)
    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(y, parents, bw, depthwise_conv_3x3)


def im2col_3x3(x: Tensor) -> Tensor:
    """(n, c, h, w) -> (n, 9c, h, w); channel order (c, dy, dx), zero padding 1."""
    n, c, h, w = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((n, c, 9, h, w))
    for dy in range(3):
        for dx in range(3):
            cols[:, :, dy * 3 + dx] = xp[:, :, dy:dy + h, dx:dx + w]

    def bw(g):
        g = g.reshape(n, c, 9, h, w)
        gxp = np.zeros_like(xp)
        for dy in range(3):
            for dx in range(3):
                gxp[:, :, dy:dy + h, dx:dx + w] += g[:, :, dy * 3 + dx]
        return (gxp[:, :, 1:-1, 1:-1],)
    return make_result(cols.reshape(n, 9 * c, h, w), (x,), bw, im2col_3x3)


def conv_3x3(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Dense 3x3 convolution, stride 1, zero padding 1."""
    co, ci = weight.shape[:2]
    if weight.shape != (co, x.shape[1], 3, 3):
        raise DimensionError(f"conv_3x3: weight {weight.shape} incompatible with input {x.shape}")
    w1 = reshape(weight, (co, ci * 9, 1, 1))
    return conv_1x1(im2col_3x3(x), w1, bias)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize across channels at every pixel, then affine."""
    if eps <= 0:
        raise ContractError("layer_norm: eps must be positive")
    c = x.shape[1]
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gam = gamma.data[None, :, None, None]
    y = xhat * gam + beta.data[None, :, None, None]

    def bw(g):
        gxhat = g * gam
        gx = inv / c * (c * gxhat - gxhat.sum(axis=1, keepdims=True)
                        - xhat * (gxhat * xhat).sum(axis=1, keepdims=True))
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))
    return make_result(y, (x, gamma, beta), bw, layer_norm, {"eps": eps})


def channel_scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply (n, c, h, w) by a per-sample per-channel (n, c, 1, 1) tensor or a scalar."""
    return hadamard(x, s)
