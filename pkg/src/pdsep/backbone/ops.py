"""Differentiable operation catalogue.

Every op computes its forward value with numpy and records a closure on the
tape. Backward rules are module-level functions looked up at call time, so a
rule can be swapped (e.g. to test the gradient checker) without rebuilding
graphs.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import ShapeError, Tensor, get_dtype

__all__ = [
    "add", "sub", "mul", "neg", "scale", "add_scalar", "matmul",
    "conv1d", "conv2d", "upsample", "leaky_relu", "tanh", "sigmoid",
    "dropout", "sum", "mean", "abs_sum", "mean_abs", "concat",
]


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=get_dtype()))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform") from None


# -- elementwise arithmetic ------------------------------------------------

def _add_backward(sa, sb, g):
    return _unbroadcast(g, sa), _unbroadcast(g, sb)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check(a, b, "add")
    sa, sb = a.shape, b.shape
    return Tensor._result(a.data + b.data, (a, b), lambda g: _add_backward(sa, sb, g), "add")


def _sub_backward(sa, sb, g):
    return _unbroadcast(g, sa), _unbroadcast(-g, sb)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check(a, b, "sub")
    sa, sb = a.shape, b.shape
    return Tensor._result(a.data - b.data, (a, b), lambda g: _sub_backward(sa, sb, g), "sub")


def _mul_backward(a, b, g):
    ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
    gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
    return ga, gb


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check(a, b, "mul")
    return Tensor._result(a.data * b.data, (a, b), lambda g: _mul_backward(a, b, g), "mul")


def _neg_backward(g):
    return (-g,)


def neg(x: Tensor) -> Tensor:
    return Tensor._result(-x.data, (x,), lambda g: _neg_backward(g), "neg")


def _scale_backward(c, g):
    return (g * c,)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a constant scalar."""
    c = x.data.dtype.type(c)
    return Tensor._result(x.data * c, (x,), lambda g: _scale_backward(c, g), "scale")


def _add_scalar_backward(g):
    return (g,)


def add_scalar(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)
    return Tensor._result(x.data + c, (x,), lambda g: _add_scalar_backward(g), "add_scalar")


def _matmul_backward(a, b, g):
    ga = g @ b.data.T if a.requires_grad else None
    gb = a.data.T @ g if b.requires_grad else None
    return ga, gb


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    return Tensor._result(a.data @ b.data, (a, b), lambda g: _matmul_backward(a, b, g), "matmul")


# -- convolution -----------------------------------------------------------

def _zero_pad(a: np.ndarray, pads) -> np.ndarray:
    """Zero-pad the trailing axes; ``pads`` holds one (lo, hi) per axis."""
    if not any(lo or hi for lo, hi in pads):
        return np.ascontiguousarray(a)
    lead = a.ndim - len(pads)
    shape = a.shape[:lead] + tuple(n + lo + hi for n, (lo, hi) in zip(a.shape[lead:], pads))
    out = np.zeros(shape, dtype=a.dtype)
    out[(slice(None),) * lead + tuple(slice(lo, lo + n) for n, (lo, _) in zip(a.shape[lead:], pads))] = a
    return out


def _pair(p):
    if isinstance(p, (int, np.integer)):
        return int(p), int(p)
    lo, hi = p
    return int(lo), int(hi)


def _conv1d_backward(ctx, g):
    x, w, b, cols, stride, (pl, pr), padded_len = ctx
    B, cout, tout = g.shape
    cin, k = w.shape[1], w.shape[2]
    g2 = g.transpose(0, 2, 1).reshape(B * tout, cout)
    gw = (g2.T @ cols).reshape(w.shape) if w.requires_grad else None
    gb = g.sum(axis=(0, 2)) if (b is not None and b.requires_grad) else None
    gx = None
    if x.requires_grad:
        dcols = (g2 @ w.data.reshape(cout, cin * k)).reshape(B, tout, cin, k)
        dxp = np.zeros((B, cin, padded_len), dtype=g.dtype)
        span = stride * (tout - 1) + 1
        for j in range(k):
            dxp[:, :, j:j + span:stride] += dcols[:, :, :, j].transpose(0, 2, 1)
        gx = dxp[:, :, pl:padded_len - pr]
    return (gx, gw) if b is None else (gx, gw, gb)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding=0) -> Tensor:
    """Cross-correlation of ``x`` [B, Cin, T] with ``w`` [Cout, Cin, K].

    ``padding`` is an int (both sides) or a ``(left, right)`` pair of zero
    padding widths.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} and kernel {w.shape} do not conform")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"conv1d: bias {b.shape} does not match kernel {w.shape}")
    if stride < 1:
        raise ValueError(f"conv1d: stride must be >= 1, got {stride}")
    pl, pr = _pair(padding)
    if pl < 0 or pr < 0:
        raise ValueError(f"conv1d: negative padding {(pl, pr)}")
    B, cin, _ = x.shape
    cout, _, k = w.shape
    xp = _zero_pad(x.data, ((pl, pr),))
    tp = xp.shape[2]
    tout = (tp - k) // stride + 1
    if tout < 1:
        raise ShapeError(f"conv1d: input {x.shape} too short for kernel {w.shape}")
    sb, sc, st = xp.strides
    cols = as_strided(xp, shape=(B, tout, cin, k), strides=(sb, st * stride, sc, st))
    cols = cols.reshape(B * tout, cin * k)
    out = (cols @ w.data.reshape(cout, cin * k).T).reshape(B, tout, cout).transpose(0, 2, 1)
    if b is not None:
        out = out + b.data[None, :, None]
    else:
        out = np.ascontiguousarray(out)
    ctx = (x, w, b, cols, stride, (pl, pr), tp)
    parents = (x, w) if b is None else (x, w, b)
    return Tensor._result(out, parents, lambda g: _conv1d_backward(ctx, g), "conv1d")


def _conv2d_backward(ctx, g):
    x, w, b, cols, stride, pads, padded = ctx
    (pt, pb), (pl, pr) = pads
    B, cout, ho, wo = g.shape
    cin, kh, kw = w.shape[1:]
    g2 = g.transpose(0, 2, 3, 1).reshape(B * ho * wo, cout)
    gw = (g2.T @ cols).reshape(w.shape) if w.requires_grad else None
    gb = g.sum(axis=(0, 2, 3)) if (b is not None and b.requires_grad) else None
    gx = None
    if x.requires_grad:
        dcols = (g2 @ w.data.reshape(cout, -1)).reshape(B, ho, wo, cin, kh, kw)
        dxp = np.zeros((B, cin) + padded, dtype=g.dtype)
        sh = stride * (ho - 1) + 1
        sw = stride * (wo - 1) + 1
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + sh:stride, j:j + sw:stride] += dcols[..., i, j].transpose(0, 3, 1, 2)
        gx = dxp[:, :, pt:padded[0] - pb, pl:padded[1] - pr]
    return (gx, gw) if b is None else (gx, gw, gb)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding=0) -> Tensor:
    """Cross-correlation of ``x`` [B, Cin, H, W] with ``w`` [Cout, Cin, kh, kw].

    ``padding`` is an int, or ``((top, bottom), (left, right))``.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} and kernel {w.shape} do not conform")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias {b.shape} does not match kernel {w.shape}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if isinstance(padding, (int, np.integer)):
        pads = ((int(padding),) * 2,) * 2
    else:
        pads = (_pair(padding[0]), _pair(padding[1]))
    if min(pads[0] + pads[1]) < 0:
        raise ValueError(f"conv2d: negative padding {pads}")
    B, cin = x.shape[:2]
    cout, _, kh, kw = w.shape
    xp = _zero_pad(x.data, pads)
    hp, wp = xp.shape[2:]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: input {x.shape} too small for kernel {w.shape}")
    sb, sc, sh, sw = xp.strides
    cols = as_strided(
        xp,
        shape=(B, ho, wo, cin, kh, kw),
        strides=(sb, sh * stride, sw * stride, sc, sh, sw),
    ).reshape(B * ho * wo, cin * kh * kw)
    out = (cols @ w.data.reshape(cout, -1).T).reshape(B, ho, wo, cout).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]
    else:
        out = np.ascontiguousarray(out)
    ctx = (x, w, b, cols, stride, pads, (hp, wp))
    parents = (x, w) if b is None else (x, w, b)
    return Tensor._result(out, parents, lambda g: _conv2d_backward(ctx, g), "conv2d")


def _upsample_backward(spatial, g):
    if spatial == 1:
        B, C, T = g.shape
        return (g.reshape(B, C, T // 2, 2).sum(axis=3),)
    B, C, H, W = g.shape
    return (g.reshape(B, C, H // 2, 2, W // 2, 2).sum(axis=(3, 5)),)


def upsample(x: Tensor) -> Tensor:
    """Nearest-neighbour upsampling by 2 along every spatial axis."""
    if x.ndim == 3:
        out = np.repeat(x.data, 2, axis=2)
    elif x.ndim == 4:
        out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    else:
        raise ShapeError(f"upsample: expected [B, C, T] or [B, C, H, W], got {x.shape}")
    spatial = x.ndim - 2
    return Tensor._result(out, (x,), lambda g: _upsample_backward(spatial, g), "upsample")


# -- activations -------------------------------------------------------------

def _leaky_relu_backward(slope_mask, g):
    return (g * slope_mask,)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    d = x.data
    mask = np.where(d > 0, d.dtype.type(1), d.dtype.type(slope))
    return Tensor._result(d * mask, (x,), lambda g: _leaky_relu_backward(mask, g), "leaky_relu")


def _tanh_backward(y, g):
    return (g * (1 - y * y),)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return Tensor._result(y, (x,), lambda g: _tanh_backward(y, g), "tanh")


def _sigmoid_backward(y, g):
    return (g * y * (1 - y),)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(d.dtype, copy=False)
    return Tensor._result(y, (x,), lambda g: _sigmoid_backward(y, g), "sigmoid")


def _dropout_backward(mask, g):
    return (g * mask,)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: survivors are scaled by 1 / (1 - rate).

    A fresh mask is drawn from ``rng`` on every call.
    """
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0:
        return x
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.data.dtype) * x.data.dtype.type(1.0 / (1.0 - rate))
    return Tensor._result(x.data * mask, (x,), lambda g: _dropout_backward(mask, g), "dropout")


# -- reductions and structure ---------------------------------------------

def _sum_backward(shape, g):
    return (np.broadcast_to(g, shape).copy(),)


def sum(x: Tensor) -> Tensor:  # noqa: A001
    shape = x.shape
    return Tensor._result(np.asarray(x.data.sum()), (x,), lambda g: _sum_backward(shape, g), "sum")


def _mean_backward(shape, n, g):
    return (np.broadcast_to(g / n, shape).copy(),)


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return Tensor._result(np.asarray(x.data.mean()), (x,), lambda g: _mean_backward(shape, n, g), "mean")


def _abs_sum_backward(sign, g):
    return (g * sign,)


def abs_sum(x: Tensor) -> Tensor:
    """L1 norm: sum of absolute values."""
    sign = np.sign(x.data)
    return Tensor._result(np.asarray(np.abs(x.data).sum()), (x,), lambda g: _abs_sum_backward(sign, g), "abs_sum")


def _mean_abs_backward(sign, n, g):
    return (g * sign / n,)


def mean_abs(x: Tensor) -> Tensor:
    """Mean absolute value (L1 norm divided by the element count)."""
    sign, n = np.sign(x.data), x.size
    return Tensor._result(
        np.asarray(np.abs(x.data).mean()), (x,), lambda g: _mean_abs_backward(sign, n, g), "mean_abs"
    )


def _concat_backward(bounds, axis, g):
    lead = (slice(None),) * (axis % g.ndim)
    return tuple(g[lead + (slice(lo, hi),)] for lo, hi in bounds)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(ref, t.shape)) if i != axis % len(ref)):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} do not conform on axis {axis}")
    bounds, start = [], 0
    for t in tensors:
        bounds.append((start, start + t.shape[axis]))
        start += t.shape[axis]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._result(out, tuple(tensors), lambda g: _concat_backward(bounds, axis, g), "concat")
