"""Parameter containers shared by both branches and the fusion head."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import (
    Tensor,
    add,
    gelu,
    get_default_dtype,
    layer_norm,
    matmul,
    permute,
    reshape,
    scale,
    softmax,
)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal samples redrawn until they fall within two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def parameter(values) -> Tensor:
    return Tensor(values, requires_grad=True, dtype=get_default_dtype())


class Module:
    """Attribute-walking parameter registry.

    Parameters are ``Tensor`` attributes with ``requires_grad``; buffers are
    numpy arrays registered in ``self.buffers``. Names are dotted attribute
    paths in definition order.
    """

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, buf in getattr(self, "buffers", {}).items():
            yield f"{prefix}{name}", buf
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def _children(self):
        for value in vars(self).values():
            if isinstance(value, Module):
                yield value
            elif isinstance(value, list):
                yield from (m for m in value if isinstance(m, Module))

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self._children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = parameter(trunc_normal(rng, (d_in, d_out)))
        self.bias = parameter(np.zeros(d_out)) if bias else None
        self.d_in, self.d_out = d_in, d_out

    def forward(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return add(y, self.bias) if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = parameter(np.ones(dim))
        self.beta = parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, eps=self.eps)


class Mlp(Module):
    """Linear -> GELU -> Linear."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


NEG_INF = -1e9


class MultiHeadSelfAttention(Module):
    """Scaled dot-product attention over groups of tokens ``(groups, T, C)``.

    ``mask`` is an additive ``(n_masks, T, T)`` array applied cyclically over
    groups (group ``g`` uses mask ``g % n_masks``), which is how window
    attention shares one mask per window position across the batch.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"{heads} heads do not divide width {dim}")
        self.heads = heads
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.last_attention: np.ndarray | None = None
        self.keep_attention = False

    def forward(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        G, T, C = x.shape
        hd = C // self.heads
        qkv = permute(reshape(self.qkv(x), (G, T, 3, self.heads, hd)), (2, 0, 3, 1, 4))
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = scale(matmul(q, permute(k, (0, 1, 3, 2))), hd ** -0.5)
        if mask is not None:
            nm = mask.shape[0]
            if G % nm:
                raise ValueError(f"{G} token groups are not a multiple of {nm} masks")
            full = np.broadcast_to(mask[:, None], (nm, self.heads, T, T)).astype(x.dtype)
            scores = reshape(add(reshape(scores, (G // nm, nm, self.heads, T, T)), Tensor(full, dtype=x.dtype)),
                             (G, self.heads, T, T))
        attn = softmax(scores, axis=-1)
        if self.keep_attention:
            self.last_attention = attn.data
        out = reshape(permute(matmul(attn, v), (0, 2, 1, 3)), (G, T, C))
        return self.proj(out)
