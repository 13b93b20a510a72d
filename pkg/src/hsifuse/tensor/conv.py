"""3-D convolution, spectral max-pooling and batch normalisation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Tensor, make_op
from .ops import DimensionError, relu


@dataclass
class Conv3dKernel:
    """Weights ``(out, in, depth, height, width)`` plus one bias per output channel."""

    weight: Tensor
    bias: Tensor

    def __post_init__(self):
        w = self.weight.shape
        if len(w) != 5:
            raise DimensionError(f"conv3d weight must have 5 axes, got {w}")
        if any(k % 2 == 0 for k in w[2:]):
            raise DimensionError(f"conv3d kernel extents must be odd, got {w[2:]}")
        if self.bias.shape != (w[0],):
            raise DimensionError(f"conv3d bias must have shape ({w[0]},), got {self.bias.shape}")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def extents(self) -> tuple[int, int, int]:
        return tuple(self.weight.shape[2:])


def _correlate_same(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Zero-padded 'same' cross-correlation, x (N,Ci,D,H,W), w (Co,Ci,kd,kh,kw)."""
    kd, kh, kw = w.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (kd // 2,) * 2, (kh // 2,) * 2, (kw // 2,) * 2))
    win = sliding_window_view(xp, (kd, kh, kw), axis=(2, 3, 4))
    out = np.tensordot(win, w, axes=([1, 5, 6, 7], [1, 2, 3, 4]))  # N,D,H,W,Co
    return np.ascontiguousarray(out.transpose(0, 4, 1, 2, 3))


def conv3d(x: Tensor, kernel: Conv3dKernel, activation: str | None = "relu") -> Tensor:
    """Stride-1 'same' 3-D convolution over (depth, height, width), then activation.

    ``x`` is ``(batch, c_in, D, H, W)``; output keeps D, H, W.
    """
    if x.ndim != 5:
        raise DimensionError(f"conv3d input must be (batch, c, D, H, W), got {x.shape}")
    if x.shape[1] != kernel.in_channels:
        raise DimensionError(
            f"conv3d: input has {x.shape[1]} channels, kernel expects {kernel.in_channels}"
        )
    xd, wd, bd = x.data, kernel.weight.data, kernel.bias.data
    kd, kh, kw = wd.shape[2:]
    if any(k > n + 2 * (k // 2) for k, n in zip((kd, kh, kw), xd.shape[2:])):
        raise DimensionError(f"conv3d kernel {wd.shape[2:]} exceeds padded input {xd.shape[2:]}")
    y = _correlate_same(xd, wd) + bd.reshape(1, -1, 1, 1, 1)

    def back(g):
        gw = np.tensordot(
            g,
            sliding_window_view(
                np.pad(xd, ((0, 0), (0, 0), (kd // 2,) * 2, (kh // 2,) * 2, (kw // 2,) * 2)),
                (kd, kh, kw),
                axis=(2, 3, 4),
            ),
            axes=([0, 2, 3, 4], [0, 2, 3, 4]),
        )
        flipped = np.ascontiguousarray(wd[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4))
        gx = _correlate_same(g, flipped)
        return gx, gw, g.sum(axis=(0, 2, 3, 4))

    out = make_op("conv3d", y.astype(xd.dtype), (x, kernel.weight, kernel.bias), back)
    if activation is None:
        return out
    if activation != "relu":
        raise ValueError(f"unsupported conv3d activation {activation!r}")
    return relu(out)


def max_pool_axis(x: Tensor, axis: int, window: int = 2) -> Tensor:
    """Non-overlapping max-pool along one axis; a trailing remainder is dropped."""
    axis %= x.ndim
    n = x.shape[axis]
    if n < window:
        raise DimensionError(f"max_pool: extent {n} smaller than window {window}")
    m = n // window
    d = x.data
    kept = np.take(d, np.arange(m * window), axis=axis)
    shp = d.shape[:axis] + (m, window) + d.shape[axis + 1:]
    blocks = kept.reshape(shp)
    arg = blocks.argmax(axis=axis + 1)
    y = np.take_along_axis(blocks, np.expand_dims(arg, axis + 1), axis=axis + 1).squeeze(axis + 1)
    full_shape = d.shape

    def back(g):
        gb = np.zeros(shp, dtype=g.dtype)
        np.put_along_axis(gb, np.expand_dims(arg, axis + 1), np.expand_dims(g, axis + 1), axis=axis + 1)
        out = np.zeros(full_shape, dtype=g.dtype)
        sl = [slice(None)] * len(full_shape)
        sl[axis] = slice(0, m * window)
        out[tuple(sl)] = gb.reshape(kept.shape)
        return out,

    return make_op("max_pool", np.ascontiguousarray(y), (x,), back, structural=True)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel (axis 1) batch normalisation.

    In training mode the batch statistics are used and the running buffers are
    updated in place as ``momentum * running + (1 - momentum) * batch``. In
    evaluation mode the frozen running statistics are used and nothing mutates.
    """
    c = x.shape[1]
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    gd = gamma.data.reshape(bshape)
    if training:
        mu = x.data.mean(axis=axes, keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        running_mean *= momentum
        running_mean += (1 - momentum) * mu.reshape(c)
        running_var *= momentum
        running_var += (1 - momentum) * var.reshape(c)
    else:
        mu = running_mean.reshape(bshape).astype(x.dtype)
        xc = x.data - mu
        var = running_var.reshape(bshape).astype(x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def back(g):
        gx_hat = g * gd
        if training:
            gx = inv * (
                gx_hat
                - gx_hat.mean(axis=axes, keepdims=True)
                - xhat * (gx_hat * xhat).mean(axis=axes, keepdims=True)
            )
        else:
            gx = gx_hat * inv
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    y = xhat * gd + beta.data.reshape(bshape)
    return make_op("batch_norm", y.astype(x.dtype), (x, gamma, beta), back)
