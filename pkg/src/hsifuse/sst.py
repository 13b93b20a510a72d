"""Spatial-spectral transformer branch: grid tokens, fixed sinusoidal positions, pre-LN encoder."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import LayerNorm, Linear, Mlp, Module, MultiHeadSelfAttention
from .tensor import Tensor, add, permute, reshape, resample_grid
from .tensor.ops import DimensionError


@dataclass
class SstConfig:
    tokens: int = 64
    dim: int = 96
    layers: int = 4
    heads: int = 8
    mlp_ratio: float = 4.0
    pe_kind: str = "sinusoidal"

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"{self.heads} heads do not divide token width {self.dim}")
        if self.pe_kind != "sinusoidal":
            raise ValueError(f"unsupported positional encoding {self.pe_kind!r}")
        token_grid(self.tokens)

    @property
    def grid(self) -> int:
        return token_grid(self.tokens)


def token_grid(tokens: int) -> int:
    g = math.isqrt(tokens)
    if tokens < 1 or g * g != tokens:
        raise DimensionError(f"token count {tokens} is not a perfect square")
    return g


def grid_map(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) linear map: adaptive average pooling, or nearest upsampling when n_out > n_in."""
    m = np.zeros((n_out, n_in))
    if n_out > n_in:
        m[np.arange(n_out), (np.arange(n_out) * n_in) // n_out] = 1.0
        return m
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -(-((i + 1) * n_in) // n_out)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def sinusoidal_table(tokens: int, dim: int) -> np.ndarray:
    """Fixed (T, D) table: sine on even channels, cosine on odd channels."""
    pos = np.arange(tokens)[:, None]
    freq = np.exp(-math.log(10000.0) * (np.arange(0, dim, 2) / dim))
    pe = np.zeros((tokens, dim))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq[: dim // 2])
    return pe


def positional_encode(x: Tensor, pe: np.ndarray) -> Tensor:
    if x.shape[1:] != pe.shape:
        raise DimensionError(f"positional table {pe.shape} does not fit tokens {x.shape}")
    return add(x, Tensor(pe, dtype=x.dtype))


class PatchEmbed(Module):
    """Fold the spectral axis into channels, pool the S x S map to a g x g grid, project."""

    def __init__(self, in_features: int, config: SstConfig, rng):
        self.proj = Linear(in_features, config.dim, rng)
        self.grid = config.grid

    def forward(self, features: Tensor) -> Tensor:
        b, C, D, H, W = features.shape
        if C * D != self.proj.d_in:
            raise DimensionError(f"embedding expects {self.proj.d_in} features per site, got {C * D}")
        x = reshape(permute(features, (0, 3, 4, 1, 2)), (b, H, W, C * D))
        g = self.grid
        if (H, W) != (g, g):
            x = resample_grid(x, grid_map(H, g), grid_map(W, g))
        return self.proj(reshape(x, (b, g * g, C * D)))


class EncoderLayer(Module):
    """``h + attn(LN(h))`` then ``+ mlp(LN(.))``."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float, rng):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), rng)

    def forward(self, h: Tensor) -> Tensor:
        h = add(h, self.attn(self.norm1(h)))
        return add(h, self.mlp(self.norm2(h)))


class SstBranch(Module):
    def __init__(self, config: SstConfig, in_features: int, rng: np.random.Generator):
        self.config = config
        self.embed = PatchEmbed(in_features, config, rng)
        self.pe = sinusoidal_table(config.tokens, config.dim)
        self.layers = [EncoderLayer(config.dim, config.heads, config.mlp_ratio, rng)
                       for _ in range(config.layers)]
        self.norm = LayerNorm(config.dim)
        self.use_positions = True

    def forward(self, features: Tensor) -> Tensor:
        """Stem features ``(b, C, D, S, S)`` -> tokens ``(b, T, dim)``."""
        h = self.embed(features)
        if self.use_positions:
            h = positional_encode(h, self.pe)
        for layer in self.layers:
            h = layer(h)
        return self.norm(h)
