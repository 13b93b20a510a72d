"""Differentiable array ops.

Binary elementwise ops accept equal shapes or a right/left operand whose shape
is a suffix of the other's (broadcast over leading axes only); anything else
is a :class:`DimensionError`.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import erf

from .core import Tensor, as_tensor, make_op


class DimensionError(ValueError):
    pass


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=like.dtype if like is not None else None)


def _sum_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return g


def _check_suffix(op: str, a: tuple, b: tuple) -> None:
    if a == b:
        return
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    if long_[len(long_) - len(short):] != short:
        raise DimensionError(f"{op}: shapes {a} and {b} differ beyond leading axes")


# ---------------------------------------------------------------------------
# binary elementwise


def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _check_suffix("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return make_op("add", a.data + b.data, (a, b), lambda g: (_sum_to(g, sa), _sum_to(g, sb)))


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _check_suffix("sub", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return make_op("sub", a.data - b.data, (a, b), lambda g: (_sum_to(g, sa), _sum_to(-g, sb)))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        return scale(a, b)
    if not isinstance(a, Tensor) and np.isscalar(a):
        return scale(b, a)
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _check_suffix("mul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def back(g):
        return _sum_to(g * bd, ad.shape), _sum_to(g * ad, bd.shape)

    return make_op("mul", ad * bd, (a, b), back)


def scale(a: Tensor, s: float) -> Tensor:
    s = a.dtype.type(s)
    return make_op("scale", a.data * s, (a,), lambda g: (g * s,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot contract shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(
            f"matmul: batch extents of {a.shape} and {b.shape} do not broadcast"
        ) from None
    ad, bd = a.data, b.data

    def back(g):
        if bd.ndim == 2 and ad.ndim > 2:
            k, n = bd.shape
            gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
            ga = (g.reshape(-1, n) @ bd.T).reshape(ad.shape)
            return ga, gb
        gb = _sum_to(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        ga = _sum_to(g @ np.swapaxes(bd, -1, -2), ad.shape)
        return ga, gb

    if bd.ndim == 2 and ad.ndim > 2:
        out = (ad.reshape(-1, ad.shape[-1]) @ bd).reshape(ad.shape[:-1] + (bd.shape[1],))
    else:
        out = ad @ bd
    return make_op("matmul", out, (a, b), back)


# ---------------------------------------------------------------------------
# unary elementwise


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_op("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,),
                   structural=True)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return make_op("sigmoid", y, (x,), lambda g: (g * y * (1 - y),))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    d = x.data
    cdf = d * d.dtype.type(_INV_SQRT2)
    erf(cdf, out=cdf)
    cdf += 1
    cdf *= 0.5
    y = d * cdf

    def back(g):
        pdf = np.square(d)
        pdf *= -0.5
        np.exp(pdf, out=pdf)
        pdf *= d
        pdf *= d.dtype.type(_INV_SQRT2PI)
        pdf += cdf
        pdf *= g
        return pdf,

    return make_op("gelu", y, (x,), back)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return make_op("exp", y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    d = x.data
    if np.any(d <= 0):
        raise FloatingPointError("log: non-positive input")
    return make_op("log", np.log(d), (x,), lambda g: (g / d,))


def clip_min(x: Tensor, lo: float) -> Tensor:
    mask = x.data >= lo
    y = np.where(mask, x.data, x.dtype.type(lo))
    return make_op("clip_min", y, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reductions and normalisations


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy(),

    return make_op("sum", np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([x.shape[a] for a in axes]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def _axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _axis(x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return y * (g - (g * y).sum(axis=axis, keepdims=True)),

    return make_op("softmax", y, (x,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    axis = _axis(x, axis)
    n = x.shape[axis]
    if n == 0:
        raise DimensionError("layer_norm over a zero-length axis")
    if gamma.shape != (n,) or beta.shape != (n,):
        raise DimensionError(f"layer_norm: gamma/beta must have shape ({n},)")
    bshape = [1] * x.ndim
    bshape[axis] = n
    gd = gamma.data.reshape(bshape)
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axis, keepdims=True) + eps)
    xhat = xc * inv
    other = tuple(i for i in range(x.ndim) if i != axis)

    def back(g):
        gx_hat = g * gd
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=axis, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=axis, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=other), g.sum(axis=other)

    y = xhat * gd + beta.data.reshape(bshape)
    return make_op("layer_norm", y.astype(x.dtype), (x, gamma, beta), back)


# ---------------------------------------------------------------------------
# rearrangements


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    n = int(np.prod([s for s in shape if s != -1])) if shape else 1
    if -1 not in shape and n != x.size:
        raise DimensionError(f"reshape: cannot view {x.shape} ({x.size} elements) as {shape}")
    if -1 in shape and (n == 0 or x.size % n):
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    src = x.shape
    return make_op("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(src),),
                   structural=True)


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(a) % x.ndim for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"permute: {axes} is not a permutation of {x.ndim} axes")
    inv = tuple(np.argsort(axes))
    return make_op("permute", np.ascontiguousarray(x.data.transpose(axes)), (x,),
                   lambda g: (g.transpose(inv),), structural=True)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    if not xs:
        raise DimensionError("concat of an empty list")
    axis = _axis(xs[0], axis)
    ref = xs[0].shape
    for t in xs[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise DimensionError(f"concat: off-axis extents differ, {ref} vs {t.shape}")
    cuts = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return make_op("concat", np.concatenate([t.data for t in xs], axis=axis), tuple(xs), back,
                   structural=True)


def getitem(x: Tensor, idx) -> Tensor:
    shape, dtype = x.shape, x.dtype
    advanced = any(isinstance(i, (list, np.ndarray)) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def back(g):
        out = np.zeros(shape, dtype=dtype)
        if advanced:
            np.add.at(out, idx, g)
        else:
            out[idx] = g
        return out,

    return make_op("getitem", np.array(x.data[idx]), (x,), back, structural=True)


def pad(x: Tensor, widths: Sequence[tuple[int, int]]) -> Tensor:
    """Zero padding; ``widths`` has one (before, after) pair per axis."""
    widths = tuple((int(a), int(b)) for a, b in widths)
    if not any(a or b for a, b in widths):
        return x
    crop = tuple(slice(a, a + n) for (a, _), n in zip(widths, x.shape))
    return make_op("pad", np.pad(x.data, widths), (x,), lambda g: (g[crop],), structural=True)


def roll(x: Tensor, shifts: Sequence[int], axes: Sequence[int]) -> Tensor:
    shifts, axes = tuple(shifts), tuple(axes)
    if not any(shifts):
        return x
    neg = tuple(-s for s in shifts)
    return make_op("roll", np.roll(x.data, shifts, axes), (x,), lambda g: (np.roll(g, neg, axes),),
                   structural=True)


def pick(x: Tensor, index: np.ndarray) -> Tensor:
    """``x[i, index[i]]`` for a 2-D ``x``."""
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(x.shape[0])
    return getitem(x, (rows, index))


def resample_grid(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Apply constant linear maps over the two grid axes of ``x[b, H, W, F]``.

    ``rows`` is (H', H), ``cols`` is (W', W); used for adaptive pooling and
    nearest upsampling of token grids.
    """
    rows = np.asarray(rows, dtype=x.dtype)
    cols = np.asarray(cols, dtype=x.dtype)
    if x.ndim != 4 or rows.shape[1] != x.shape[1] or cols.shape[1] != x.shape[2]:
        raise DimensionError(
            f"resample_grid: maps {rows.shape}, {cols.shape} do not fit input {x.shape}"
        )
    y = np.einsum("ir,jc,brcf->bijf", rows, cols, x.data, optimize=True)

    def back(g):
        return np.einsum("ir,jc,bijf->brcf", rows, cols, g, optimize=True),

    return make_op("resample_grid", y, (x,), back)
