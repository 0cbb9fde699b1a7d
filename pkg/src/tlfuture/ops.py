"""Differentiable operations on :class:`~tlfuture.tensor.Tensor`.

Spatial tensors are channel-last: ``[batch, rows, cols, channels]``.
Convolution kernels are stored as ``[kh, kw, c_in, c_out]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor, as_tensor, make

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.9


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make(out, (a, b), bw, "div")


def neg(a: Tensor) -> Tensor:
    return make(-a.data, (a,), lambda g: (-g,), "neg")


def pow_scalar(a: Tensor, exponent: float) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)
    out = np.power(a.data, exponent)

    def bw(g):
        if exponent == 0.0:
            return (np.zeros_like(a.data),)
        return (g * exponent * np.power(a.data, exponent - 1.0),)

    return make(out, (a,), bw, "pow")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow surfaces as a non-finite error in make()
        out = np.exp(a.data)
    return make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    if (a.data <= 0).any():
        raise FloatingPointError("log of non-positive value")
    return make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


def logcosh(delta: Tensor, m: float = 1.0) -> Tensor:
    """Elementwise ``log(m * cosh(delta))`` without overflow for large ``|delta|``."""
    if m <= 0:
        raise ValueError("m must be positive")
    d = delta.data
    ad = np.abs(d)
    out = math.log(m) + ad + np.log1p(np.exp(-2.0 * ad)) - math.log(2.0)
    return make(out, (delta,), lambda g: (g * np.tanh(d),), "logcosh")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axis(axis, a.ndim)
    if any(a.shape[ax] == 0 for ax in axes):
        raise ValueError("empty reduction extent")
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make(np.asarray(out), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if count == 0:
        raise ValueError("empty reduction extent")
    return sum(a, axis, keepdims) * (1.0 / count)


def max(a: Tensor, axis: int) -> tuple[Tensor, np.ndarray]:  # noqa: A001
    """Maximum along ``axis`` and its argmax (ties resolve to the lowest index)."""
    if a.shape[axis] == 0:
        raise ValueError("empty reduction extent")
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def bw(g):
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return make(out, (a,), bw, "max"), idx


def argmax(a, axis: int = -1) -> np.ndarray:
    data = a.data if isinstance(a, Tensor) else np.asarray(a)
    return np.argmax(data, axis=axis)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def bw(g):
        grad = np.zeros_like(a.data)
        if _is_fancy(index):
            np.add.at(grad, index, g)
        else:
            grad[index] = g  # basic indexing never repeats an element
        return (grad,)

    return make(np.array(out), (a,), bw, "getitem")


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors)))

    return make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make(np.stack([t.data for t in tensors], axis=axis), tensors, bw, "stack")


def split(a: Tensor, sections: int, axis: int = -1) -> list[Tensor]:
    """Split into ``sections`` equal chunks along ``axis``."""
    extent = a.shape[axis]
    if extent % sections:
        raise ValueError(f"cannot split extent {extent} into {sections} equal parts")
    step = extent // sections
    axis = axis % a.ndim
    out = []
    for k in range(sections):
        index = [slice(None)] * a.ndim
        index[axis] = slice(k * step, (k + 1) * step)
        out.append(getitem(a, tuple(index)))
    return out


# ---------------------------------------------------------------------------
# network layers
# ---------------------------------------------------------------------------

def conv_output_size(extent: int, k: int, stride: int, dilation: int, padding: str) -> tuple[int, int]:
    """Return ``(output_extent, pad_per_side)``."""
    span = dilation * (k - 1)
    pad = span // 2 if padding == "same" else 0
    out = (extent + 2 * pad - span - 1) // stride + 1
    return out, pad


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1,
           dilation: int = 1, padding: str = "same") -> Tensor:
    """2-D convolution (cross-correlation) on ``[B, H, W, C_in]`` input.

    Same padding zero-pads ``dilation * (k - 1) // 2`` on each side.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError("conv2d expects x [B,H,W,C] and kernel [kh,kw,Cin,Cout]")
    kh, kw, cin, cout = kernel.shape
    if x.shape[3] != cin:
        raise ValueError(f"kernel expects {cin} input channels, input has {x.shape[3]}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel extents must be odd")
    if stride < 1 or dilation < 1:
        raise ValueError("stride and dilation must be >= 1")
    if padding not in ("same", "valid"):
        raise ValueError(f"unknown padding {padding!r}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError("bias shape must be (C_out,)")
    B, H, W, _ = x.shape
    Ho, ph = conv_output_size(H, kh, stride, dilation, padding)
    Wo, pw = conv_output_size(W, kw, stride, dilation, padding)
    if Ho < 1 or Wo < 1:
        raise ValueError("input too small for kernel")
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x.data
    rows = [slice(i * dilation, i * dilation + stride * (Ho - 1) + 1, stride) for i in range(kh)]
    cols_ = [slice(j * dilation, j * dilation + stride * (Wo - 1) + 1, stride) for j in range(kw)]
    if kh == 1 and kw == 1:
        cols = xp[:, rows[0], cols_[0], :].reshape(B * Ho * Wo, cin)
    else:
        cols = np.empty((B, Ho, Wo, kh, kw, cin))
        for i in range(kh):
            for j in range(kw):
                cols[:, :, :, i, j, :] = xp[:, rows[i], cols_[j], :]
        cols = cols.reshape(B * Ho * Wo, kh * kw * cin)
    kmat = kernel.data.reshape(kh * kw * cin, cout)
    out = cols @ kmat
    if bias is not None:
        out += bias.data
    out = out.reshape(B, Ho, Wo, cout)

    def bw(g):
        g2 = g.reshape(-1, cout)
        gk = (cols.T @ g2).reshape(kernel.shape) if kernel.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ kmat.T).reshape(B, Ho, Wo, kh, kw, cin)
            dxp = np.zeros(xp.shape)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, rows[i], cols_[j], :] += dcols[:, :, :, i, j, :]
            gx = dxp[:, ph:ph + H, pw:pw + W, :]
            gx = np.ascontiguousarray(gx)
        return (gx, gk, gb) if bias is not None else (gx, gk)

    parents = (x, kernel, bias) if bias is not None else (x, kernel)
    return make(out, parents, bw, "conv2d")


def interp_matrix(n: int, factor: int) -> np.ndarray:
    """Half-pixel-centre linear interpolation weights, shape ``[n * factor, n]``."""
    m = np.zeros((n * factor, n))
    for dst in range(n * factor):
        src = (dst + 0.5) / factor - 0.5
        src = src if src > 0.0 else 0.0
        lo = int(math.floor(src))
        hi = lo + 1 if lo + 1 < n else n - 1
        frac = src - lo
        m[dst, lo] += 1.0 - frac
        m[dst, hi] += frac
    return m


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """Bilinear upsampling of ``[B, h, w, C]`` by an integer factor."""
    if factor < 1:
        raise ValueError("upsample factor must be >= 1")
    if factor == 1:
        return x
    B, h, w, C = x.shape
    uh = interp_matrix(h, factor)
    uw = interp_matrix(w, factor)
    xt = x.data.transpose(0, 3, 1, 2)
    out = (uh @ xt @ uw.T).transpose(0, 2, 3, 1)

    def bw(g):
        gt = g.transpose(0, 3, 1, 2)
        return (np.ascontiguousarray((uh.T @ gt @ uw).transpose(0, 2, 3, 1)),)

    return make(np.ascontiguousarray(out), (x,), bw, "upsample")


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def init(cls, channels: int) -> "RunningStats":
        return cls(np.zeros(channels), np.ones(channels))


def batch_norm(x: Tensor, scale: Tensor, shift: Tensor, stats: RunningStats, training: bool,
               momentum: float = BN_MOMENTUM, eps: float = BN_EPSILON) -> Tensor:
    """Per-channel normalisation over every axis except the last."""
    axes = tuple(range(x.ndim - 1))
    n = int(np.prod(x.shape[:-1]))
    if training:
        if n == 0:
            raise ValueError("batch_norm in train mode needs a non-empty batch")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        stats.mean = momentum * stats.mean + (1.0 - momentum) * mu
        stats.var = momentum * stats.var + (1.0 - momentum) * var
    else:
        mu, var = stats.mean, stats.var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = xhat * scale.data + shift.data

    def bw(g):
        gscale = (g * xhat).sum(axis=axes)
        gshift = g.sum(axis=axes)
        dxhat = g * scale.data
        if training:
            gx = inv_std / n * (n * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        else:
            gx = dxhat * inv_std
        return gx, gscale, gshift

    return make(out, (x, scale, shift), bw, "batch_norm")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make(out, (x,), bw, "softmax")


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis; ``weight`` is ``[out, in]``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ValueError(f"dense: input width {x.shape[-1]} vs weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError("dense: bias shape mismatch")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def bw(g):
        gx = g @ weight.data if x.requires_grad else None
        g2 = g.reshape(-1, weight.shape[0])
        gw = g2.T @ x.data.reshape(-1, weight.shape[1]) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return make(out, parents, bw, "dense")


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; the identity outside training."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return make(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"labels outside [0, {classes})")
    return np.eye(classes)[labels.astype(np.int64)]
