"""Patch geometry and mini-batch streams."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..tensor import Tensor
from .cube import HsiCube, LabelRaster


@dataclass(frozen=True)
class PatchSpec:
    """Square S x S window labelled by its centre pixel.

    For even S the centre is the upper-left pixel of the central 2 x 2 block,
    so the window spans rows ``alpha - (S-1)//2`` through ``alpha + S//2``.
    """

    size: int

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"patch size must be >= 1, got {self.size}")

    @property
    def before(self) -> int:
        return (self.size - 1) // 2

    @property
    def after(self) -> int:
        return self.size // 2


def candidate_mask(shape: tuple[int, int], spec: PatchSpec) -> np.ndarray:
    """Boolean M x N mask of pixels whose full window lies inside the raster."""
    M, N = shape
    if spec.size > min(M, N):
        raise ValueError(f"patch size {spec.size} exceeds raster {M} x {N}")
    mask = np.zeros((M, N), dtype=bool)
    mask[spec.before:M - spec.after, spec.before:N - spec.after] = True
    return mask


class PatchSet:
    """Labelled interior centres of a cube; patches are cut on demand."""

    def __init__(self, cube: HsiCube, labels: LabelRaster, spec: PatchSpec):
        if labels.shape != (cube.M, cube.N):
            raise ValueError("cube and label raster extents differ")
        self.cube, self.labels, self.spec = cube, labels, spec
        self.center_mask = candidate_mask(labels.shape, spec)
        usable = self.center_mask & (labels.labels > 0)
        self.centers = np.flatnonzero(usable)
        self.center_labels = labels.labels.ravel()[self.centers]
        S = spec.size
        padded = cube.values  # window origin = centre - before, always in range
        self._windows = np.lib.stride_tricks.sliding_window_view(padded, (S, S), axis=(0, 1))
        self._pos = {int(p): i for i, p in enumerate(self.centers)}

    @property
    def n_candidates(self) -> int:
        return int(self.center_mask.sum())

    def __len__(self) -> int:
        return self.centers.size

    def contains(self, flat_indices) -> np.ndarray:
        return np.isin(np.asarray(flat_indices), self.centers)

    def label_of(self, flat_indices) -> np.ndarray:
        return self.labels.labels.ravel()[np.asarray(flat_indices, dtype=np.int64)]

    def extract(self, flat_indices) -> np.ndarray:
        """Patches as ``(n, 1, B, S, S)`` float32 arrays (band, row, column)."""
        flat = np.asarray(flat_indices, dtype=np.int64)
        rows, cols = np.divmod(flat, self.labels.shape[1])
        if not self.center_mask[rows, cols].all():
            raise ValueError("some requested centres lie within the patch border")
        win = self._windows[rows - self.spec.before, cols - self.spec.before]  # n, B, S, S
        return np.ascontiguousarray(win[:, None], dtype=np.float32)


def extract_patches(cube: HsiCube, labels: LabelRaster, spec: PatchSpec) -> PatchSet:
    return PatchSet(cube, labels, spec)


def batch_iterator(
    patches: PatchSet,
    indices,
    batch_size: int,
    seed: int | None = None,
    dtype=None,
) -> Iterator[tuple[Tensor, np.ndarray]]:
    """Yield ``(patch tensor, zero-based labels)`` covering ``indices`` once.

    With a seed the order is a seed-determined permutation; without one the
    given order is kept. The final batch may be short.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("cannot iterate an empty role")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    if seed is not None:
        idx = idx[np.random.default_rng(seed).permutation(idx.size)]
    for start in range(0, idx.size, batch_size):
        chunk = idx[start:start + batch_size]
        yield Tensor(patches.extract(chunk), dtype=dtype), patches.label_of(chunk) - 1
