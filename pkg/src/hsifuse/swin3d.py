"""3-D Swin-style branch: convolutional stem, shifted 3-D window attention, patch merging.

Feature maps inside the branch are laid out ``(batch, H, W, D, C)`` with D the
spectral axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn import NEG_INF, LayerNorm, Linear, Mlp, Module, MultiHeadSelfAttention, parameter
from .tensor import (
    Conv3dKernel,
    Tensor,
    add,
    batch_norm,
    concat,
    conv3d,
    max_pool_axis,
    mean,
    pad,
    permute,
    reshape,
    roll,
)
from .tensor.ops import DimensionError


@dataclass
class Swin3dConfig:
    embed_dim: int = 96
    stage_depths: tuple[int, ...] = (2, 2, 2)
    heads_per_stage: tuple[int, ...] = (4, 8, 8)
    window: tuple[int, int, int] = (4, 4, 4)
    merge_stages: tuple[int, ...] = (1, 2)
    mlp_ratio: float = 4.0
    stem_kernel: tuple[int, int, int] = (3, 3, 3)
    bn_momentum: float = 0.9

    def __post_init__(self):
        self.stage_depths = tuple(int(d) for d in self.stage_depths)
        self.heads_per_stage = tuple(int(h) for h in self.heads_per_stage)
        self.window = tuple(int(w) for w in self.window)
        self.merge_stages = tuple(int(s) for s in self.merge_stages)
        self.stem_kernel = tuple(int(k) for k in self.stem_kernel)
        if len(self.stage_depths) != len(self.heads_per_stage):
            raise ValueError("stage_depths and heads_per_stage differ in length")
        for i, (width, heads) in enumerate(zip(self.stage_widths(), self.heads_per_stage)):
            if width % heads:
                raise ValueError(f"stage {i}: {heads} heads do not divide width {width}")

    def stage_widths(self) -> list[int]:
        widths, c = [], self.embed_dim
        for i in range(len(self.stage_depths)):
            if i in self.merge_stages:
                c *= 2
            widths.append(c)
        return widths

    def spatial_extents(self, patch: int) -> list[int]:
        """Spatial side length seen by each stage for an input patch side."""
        out, h = [], patch
        for i in range(len(self.stage_depths)):
            if i in self.merge_stages:
                if h < 2:
                    raise DimensionError(
                        f"spatial extent exhausted: stage {i} cannot merge a side of {h}"
                    )
                h = math.ceil(h / 2)
            out.append(h)
        return out

    def fit_to_patch(self, patch: int) -> "Swin3dConfig":
        """Copy with merge stages dropped where the spatial side would already be 1."""
        keep, h = [], patch
        for i in range(len(self.stage_depths)):
            if i in self.merge_stages and h >= 2:
                keep.append(i)
                h = math.ceil(h / 2)
        widths = []
        c = self.embed_dim
        for i in range(len(self.stage_depths)):
            c = c * 2 if i in keep else c
            widths.append(c)
        heads = tuple(h if w % h == 0 else math.gcd(w, h) for w, h in zip(widths, self.heads_per_stage))
        return Swin3dConfig(self.embed_dim, self.stage_depths, heads, self.window, tuple(keep),
                            self.mlp_ratio, self.stem_kernel, self.bn_momentum)


def six_stage_config(embed_dim: int = 96) -> Swin3dConfig:
    """Six stages merging at the 2nd, 4th and 6th; needs patches of side >= 8."""
    return Swin3dConfig(
        embed_dim=embed_dim,
        stage_depths=(2, 2, 2, 2, 2, 2),
        heads_per_stage=(4, 8, 8, 8, 8, 8),
        merge_stages=(1, 3, 5),
    )


def literal_stem_kernel(n_bands: int, patch: int) -> tuple[int, int, int]:
    """Stem kernel spanning all bands and the whole patch, rounded up to odd extents."""
    odd = lambda n: n if n % 2 else n + 1  # noqa: E731
    return (odd(n_bands), odd(patch), odd(patch))


# ---------------------------------------------------------------------------
# stem


class ConvStem(Module):
    """Conv3d (same padding, ReLU) -> batch norm -> spectral max-pool by 2."""

    def __init__(self, embed_dim: int, rng: np.random.Generator, kernel=(3, 3, 3), momentum: float = 0.9):
        fan_in = int(np.prod(kernel))
        # He-normal: keeps post-ReLU variance near 1 so running stats start close
        self.kernel_weight = parameter(rng.normal(0.0, np.sqrt(2.0 / fan_in), (embed_dim, 1) + tuple(kernel)))
        self.kernel_bias = parameter(np.zeros(embed_dim))
        self.bn_gamma = parameter(np.ones(embed_dim))
        self.bn_beta = parameter(np.zeros(embed_dim))
        self.buffers = {
            "running_mean": np.zeros(embed_dim, dtype=np.float32),
            "running_var": np.ones(embed_dim, dtype=np.float32),
        }
        self.momentum = momentum

    @property
    def kernel(self) -> Conv3dKernel:
        return Conv3dKernel(self.kernel_weight, self.kernel_bias)

    def forward(self, patch: Tensor) -> Tensor:
        """``(batch, 1, B, S, S)`` -> ``(batch, embed, B // 2, S, S)``."""
        if patch.ndim != 5 or patch.shape[1] != 1:
            raise DimensionError(f"stem expects (batch, 1, B, S, S), got {patch.shape}")
        if patch.shape[2] < 2:
            raise DimensionError("stem needs at least two spectral bands to pool")
        x = conv3d(patch, self.kernel, activation="relu")
        x = batch_norm(x, self.bn_gamma, self.bn_beta, self.buffers["running_mean"],
                       self.buffers["running_var"], self.training, momentum=self.momentum)
        return max_pool_axis(x, axis=2, window=2)


# ---------------------------------------------------------------------------
# windows


@dataclass(frozen=True)
class WindowGrid:
    """Window extents, shift offsets and padded extents for an (H, W, D) map."""

    extents: tuple[int, int, int]
    window: tuple[int, int, int]
    shift: tuple[int, int, int]
    padded: tuple[int, int, int] = field(init=False)

    def __post_init__(self):
        padded = tuple(math.ceil(n / w) * w for n, w in zip(self.extents, self.window))
        object.__setattr__(self, "padded", padded)

    @property
    def counts(self) -> tuple[int, int, int]:
        return tuple(p // w for p, w in zip(self.padded, self.window))

    @property
    def n_windows(self) -> int:
        return int(np.prod(self.counts))

    @property
    def tokens(self) -> int:
        return int(np.prod(self.window))

    @property
    def needs_padding(self) -> bool:
        return self.padded != self.extents


def make_grid(extents, window, shifted: bool = False) -> WindowGrid:
    """Clamp windows to the map; shift by half a window on axes the window does not cover."""
    extents = tuple(int(n) for n in extents)
    win = tuple(min(int(w), n) for w, n in zip(window, extents))
    shift = tuple(w // 2 if shifted and n > w else 0 for w, n in zip(win, extents))
    return WindowGrid(extents, win, shift)


def _pad_to_grid(x: Tensor, grid: WindowGrid) -> Tensor:
    H, W, D = x.shape[1:4]
    if (H, W, D) == grid.padded:
        return x
    if (H, W, D) != grid.extents:
        raise DimensionError(f"map extents {(H, W, D)} do not match grid {grid.extents}")
    widths = [(0, 0)] + [(0, p - n) for p, n in zip(grid.padded, grid.extents)] + [(0, 0)]
    return pad(x, widths)


def window_partition_3d(x: Tensor, grid: WindowGrid) -> Tensor:
    """``(b, H, W, D, C)`` -> ``(b * nW, wh * ww * wd, C)``, zero-padding remainders."""
    x = _pad_to_grid(x, grid)
    b, C = x.shape[0], x.shape[-1]
    (nh, nw, nd), (wh, ww, wd) = grid.counts, grid.window
    x = reshape(x, (b, nh, wh, nw, ww, nd, wd, C))
    x = permute(x, (0, 1, 3, 5, 2, 4, 6, 7))
    return reshape(x, (b * nh * nw * nd, wh * ww * wd, C))


def window_reverse_3d(windows: Tensor, grid: WindowGrid, shape) -> Tensor:
    """Inverse of :func:`window_partition_3d`; crops to ``shape = (b, H, W, D, C)``."""
    b, H, W, D, C = shape
    (nh, nw, nd), (wh, ww, wd) = grid.counts, grid.window
    if windows.shape != (b * grid.n_windows, grid.tokens, C):
        raise DimensionError(
            f"window tensor {windows.shape} inconsistent with grid for batch {b}: "
            f"expected {(b * grid.n_windows, grid.tokens, C)}"
        )
    x = reshape(windows, (b, nh, nw, nd, wh, ww, wd, C))
    x = permute(x, (0, 1, 4, 2, 5, 3, 6, 7))
    x = reshape(x, (b,) + grid.padded + (C,))
    if (H, W, D) != grid.padded:
        x = x[:, :H, :W, :D]
    return x


def cyclic_shift(x: Tensor, offsets) -> Tensor:
    """Circular roll of a ``(b, H, W, D, C)`` map by ``offsets`` along H, W, D."""
    return roll(x, tuple(int(o) for o in offsets), (1, 2, 3))


def _partition_np(a: np.ndarray, grid: WindowGrid) -> np.ndarray:
    (nh, nw, nd), (wh, ww, wd) = grid.counts, grid.window
    a = a.reshape(nh, wh, nw, ww, nd, wd).transpose(0, 2, 4, 1, 3, 5)
    return a.reshape(nh * nw * nd, wh * ww * wd)


_mask_cache: dict[WindowGrid, np.ndarray | None] = {}


def attention_mask(grid: WindowGrid) -> np.ndarray | None:
    """Additive ``(nW, T, T)`` mask for shifted and/or padded windows.

    A key is blocked when it sits on the other side of a roll seam from the
    query, or when it is a padding position. ``None`` when nothing is masked.
    """
    if grid in _mask_cache:
        return _mask_cache[grid]
    if not any(grid.shift) and not grid.needs_padding:
        _mask_cache[grid] = None
        return None
    region = np.zeros(grid.padded, dtype=np.int64)
    for axis, (p, w, s) in enumerate(zip(grid.padded, grid.window, grid.shift)):
        if not s:
            continue
        ids = np.zeros(p, dtype=np.int64)
        ids[p - w:p - s] = 1
        ids[p - s:] = 2
        shape = [1, 1, 1]
        shape[axis] = p
        region = region * 3 + ids.reshape(shape)
    valid = np.zeros(grid.padded, dtype=bool)
    H, W, D = grid.extents
    valid[:H, :W, :D] = True
    valid = np.roll(valid, [-s for s in grid.shift], axis=(0, 1, 2))
    rw = _partition_np(region, grid)
    vw = _partition_np(valid, grid)
    blocked = (rw[:, :, None] != rw[:, None, :]) | ~vw[:, None, :]
    mask = np.where(blocked, NEG_INF, 0.0).astype(np.float32)
    _mask_cache[grid] = mask
    return mask


# ---------------------------------------------------------------------------
# blocks


class SwinBlock3d(Module):
    def __init__(self, dim: int, heads: int, window, shifted: bool, mlp_ratio: float, rng):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), rng)
        self.window = tuple(window)
        self.shifted = shifted

    def forward(self, x: Tensor) -> Tensor:
        shape = x.shape
        grid = make_grid(shape[1:4], self.window, self.shifted)
        h = _pad_to_grid(self.norm1(x), grid)
        h = cyclic_shift(h, [-s for s in grid.shift])
        h = self.attn(window_partition_3d(h, grid), attention_mask(grid))
        h = window_reverse_3d(h, grid, (shape[0],) + grid.padded + (shape[4],))
        h = cyclic_shift(h, grid.shift)
        if grid.needs_padding:
            H, W, D = grid.extents
            h = h[:, :H, :W, :D]
        x = add(x, h)
        return add(x, self.mlp(self.norm2(x)))


def merge_gather(x: Tensor) -> Tensor:
    """Concatenate each 2 x 2 spatial neighbourhood: ``(b,H,W,D,C) -> (b,H/2,W/2,D,4C)``."""
    H, W = x.shape[1:3]
    if H % 2 or W % 2:
        raise DimensionError(f"patch merging needs even H and W, got {H} x {W}")
    return concat([x[:, 0::2, 0::2], x[:, 1::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 1::2]], axis=-1)


class PatchMerge3d(Module):
    """2 x 2 spatial merge to 4C, layer norm, linear 4C -> 2C; the spectral axis is kept."""

    def __init__(self, dim: int, rng):
        self.norm = LayerNorm(4 * dim)
        self.reduction = Linear(4 * dim, 2 * dim, rng, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        return self.reduction(self.norm(merge_gather(x)))


class SwinStage(Module):
    def __init__(self, dim_in: int, depth: int, heads: int, window, merge: bool, mlp_ratio: float, rng):
        self.merge = PatchMerge3d(dim_in, rng) if merge else None
        dim = 2 * dim_in if merge else dim_in
        self.blocks = [SwinBlock3d(dim, heads, window, i % 2 == 1, mlp_ratio, rng) for i in range(depth)]
        self.dim = dim

    def forward(self, x: Tensor) -> Tensor:
        if self.merge is not None:
            H, W = x.shape[1:3]
            if H < 2 or W < 2:
                raise DimensionError(f"spatial extent exhausted before merge ({H} x {W})")
            if H % 2 or W % 2:
                x = pad(x, [(0, 0), (0, H % 2), (0, W % 2), (0, 0), (0, 0)])
            x = self.merge(x)
        for block in self.blocks:
            x = block(x)
        return x


class Swin3dBranch(Module):
    """Stages over stem features, then layer norm and spectral averaging into tokens."""

    def __init__(self, config: Swin3dConfig, rng: np.random.Generator):
        self.config = config
        self.stages = []
        dim = config.embed_dim
        for i, (depth, heads) in enumerate(zip(config.stage_depths, config.heads_per_stage)):
            stage = SwinStage(dim, depth, heads, config.window, i in config.merge_stages,
                              config.mlp_ratio, rng)
            self.stages.append(stage)
            dim = stage.dim
        self.norm = LayerNorm(dim)
        self.out_dim = dim
        self.out_grid: tuple[int, int] | None = None

    def feature_map(self, features: Tensor) -> Tensor:
        """Stem output ``(b, C, D, H, W)`` -> last-stage map ``(b, H', W', D, C')``."""
        x = permute(features, (0, 3, 4, 2, 1))
        for stage in self.stages:
            x = stage(x)
        return self.norm(x)

    def forward(self, features: Tensor) -> Tensor:
        """Tokens ``(b, H' * W', C')``; the spectral axis is averaged out."""
        x = self.feature_map(features)
        b, H, W, _, C = x.shape
        self.out_grid = (H, W)
        return reshape(mean(x, axis=3), (b, H * W, C))
