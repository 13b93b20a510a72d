"""Attention-gated fusion of the two branches and the classification head."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import Linear, Module
from .sst import SstBranch, SstConfig, grid_map
from .swin3d import ConvStem, Swin3dBranch, Swin3dConfig
from .tensor import Tensor, concat, mean, mul, reshape, resample_grid, sigmoid, softmax
from .tensor.ops import DimensionError

MODES = ("fused", "sst", "swin")


@dataclass
class FusionConfig:
    fused_dim: int = 96
    activation: str = "sigmoid"
    n_classes: int = 2


def _square(tokens: int) -> int:
    g = math.isqrt(tokens)
    if g * g != tokens:
        raise DimensionError(f"{tokens} tokens do not form a square grid")
    return g


class BranchAligner(Module):
    """Bring Swin tokens onto the SST token grid and both onto ``fused_dim`` channels.

    Widths already equal to ``fused_dim`` pass through without a projection.
    """

    def __init__(self, sst_dim: int, swin_dim: int, fused_dim: int, rng):
        self.sst_proj = Linear(sst_dim, fused_dim, rng) if sst_dim != fused_dim else None
        self.swin_proj = Linear(swin_dim, fused_dim, rng) if swin_dim != fused_dim else None

    def forward(self, h_sst: Tensor, h_swin: Tensor) -> tuple[Tensor, Tensor]:
        b, T, _ = h_sst.shape
        bs, Ts, Cs = h_swin.shape
        if bs != b:
            raise DimensionError("branch outputs disagree on batch size")
        g, gs = _square(T), _square(Ts)
        if gs != g:
            x = reshape(h_swin, (b, gs, gs, Cs))
            x = resample_grid(x, grid_map(gs, g), grid_map(gs, g))
            h_swin = reshape(x, (b, T, Cs))
        if self.sst_proj is not None:
            h_sst = self.sst_proj(h_sst)
        if self.swin_proj is not None:
            h_swin = self.swin_proj(h_swin)
        return h_sst, h_swin


def attentional_fuse(h_l: Tensor, h_lp: Tensor, activation: str = "sigmoid") -> tuple[Tensor, Tensor]:
    """Gate ``h_lp`` by ``act(h_l * h_lp)`` and append it to ``h_l`` on the last axis.

    Returns ``(fused, weights)`` with ``fused`` of width ``2 * D``.
    """
    if h_l.shape != h_lp.shape:
        raise DimensionError(f"fusion inputs differ in shape: {h_l.shape} vs {h_lp.shape}")
    if activation != "sigmoid":
        raise ValueError(f"unsupported fusion activation {activation!r}")
    weights = sigmoid(mul(h_l, h_lp))
    return concat([h_l, mul(weights, h_lp)], axis=-1), weights


class ClassifierHead(Module):
    """Mean over tokens -> linear -> softmax."""

    def __init__(self, dim: int, n_classes: int, rng):
        if n_classes < 2:
            raise ValueError("need at least two classes")
        self.linear = Linear(dim, n_classes, rng)

    def logits(self, tokens: Tensor) -> Tensor:
        return self.linear(mean(tokens, axis=1))

    def forward(self, tokens: Tensor) -> Tensor:
        return softmax(self.logits(tokens), axis=-1)


@dataclass
class ModelConfig:
    n_bands: int
    patch_size: int
    n_classes: int
    mode: str = "fused"
    swin: Swin3dConfig = field(default_factory=Swin3dConfig)
    sst: SstConfig = field(default_factory=SstConfig)
    fused_dim: int = 96
    activation: str = "sigmoid"

    def __post_init__(self):
        if isinstance(self.swin, dict):
            self.swin = Swin3dConfig(**self.swin)
        if isinstance(self.sst, dict):
            self.sst = SstConfig(**self.sst)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.n_bands < 2:
            raise ValueError("need at least two bands")
        self.swin.spatial_extents(self.patch_size)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class FusionModel(Module):
    """Shared stem feeding the SST and 3-D Swin branches, fused and classified.

    ``mode`` selects the fused model or a single-branch baseline ("sst" or
    "swin") built from the same components.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        sw, ss = config.swin, config.sst
        self.stem = ConvStem(sw.embed_dim, rng, sw.stem_kernel, sw.bn_momentum)
        spectral = config.n_bands // 2
        self.sst = SstBranch(ss, sw.embed_dim * spectral, rng) if config.mode != "swin" else None
        self.swin = Swin3dBranch(sw, rng) if config.mode != "sst" else None
        D = config.fused_dim
        if config.mode == "fused":
            self.align = BranchAligner(ss.dim, self.swin.out_dim, D, rng)
            self.head = ClassifierHead(2 * D, config.n_classes, rng)
        else:
            width = ss.dim if config.mode == "sst" else self.swin.out_dim
            self.align = None
            self.head = ClassifierHead(width, config.n_classes, rng)

    def features(self, patches: Tensor) -> dict[str, Tensor]:
        """Intermediate tensors of one forward pass, keyed by stage name."""
        out = {"stem": self.stem(patches)}
        if self.sst is not None:
            out["sst"] = self.sst(out["stem"])
        if self.swin is not None:
            out["swin"] = self.swin(out["stem"])
        if self.config.mode == "fused":
            h_l, h_lp = self.align(out["sst"], out["swin"])
            out["fused"], out["weights"] = attentional_fuse(h_l, h_lp, self.config.activation)
            out["tokens"] = out["fused"]
        else:
            out["tokens"] = out[self.config.mode]
        return out

    def logits(self, patches: Tensor) -> Tensor:
        return self.head.logits(self.features(patches)["tokens"])

    def forward(self, patches: Tensor) -> Tensor:
        """Class probabilities ``(batch, C)``."""
        return softmax(self.logits(patches), axis=-1)
