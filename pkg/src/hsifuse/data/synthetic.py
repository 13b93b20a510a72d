"""Synthetic labelled cubes with spatial blobs and Gaussian spectral signatures."""

from __future__ import annotations

import numpy as np

from .cube import HsiCube, LabelRaster


def class_signatures(n_classes: int, n_bands: int, rng: np.random.Generator) -> np.ndarray:
    """(C, B) smooth spectra: a sloped baseline plus two or three Gaussian bumps."""
    b = np.arange(n_bands, dtype=np.float64)
    sig = np.empty((n_classes, n_bands))
    for c in range(n_classes):
        base = rng.uniform(0.1, 0.4) + rng.uniform(-0.2, 0.2) * b / max(n_bands - 1, 1)
        curve = base
        for _ in range(rng.integers(2, 4)):
            mu = rng.uniform(0, n_bands)
            width = rng.uniform(0.08, 0.2) * n_bands
            curve = curve + rng.uniform(0.3, 1.0) * np.exp(-0.5 * ((b - mu) / width) ** 2)
        sig[c] = curve
    return sig


def blob_layout(M: int, N: int, n_classes: int, blobs_per_class: int, rng: np.random.Generator):
    """Nearest-seed (Voronoi) partition; returns (class raster 1..C, blob-id raster)."""
    n_seeds = min(n_classes * blobs_per_class, M * N)
    seeds = rng.choice(M * N, size=n_seeds, replace=False)
    sr, sc = np.divmod(seeds, N)
    rr, cc = np.mgrid[0:M, 0:N]
    d2 = (rr[..., None] - sr) ** 2 + (cc[..., None] - sc) ** 2
    blob = d2.argmin(axis=-1)
    seed_class = np.arange(n_seeds) % n_classes + 1
    return seed_class[blob], blob


def make_synthetic(
    M: int,
    N: int,
    B: int,
    C: int,
    seed: int,
    noise: float = 0.03,
    blobs_per_class: int = 1,
    blob_gain: float = 0.1,
) -> tuple[HsiCube, LabelRaster]:
    """A fully labelled cube in which every class owns at least one blob.

    Pixels of a blob share the class signature scaled by a per-blob gain drawn
    from ``1 +/- blob_gain``; i.i.d. Gaussian noise of std ``noise`` is added.
    """
    if min(M, N, B) < 1 or C < 1:
        raise ValueError("extents and class count must be positive")
    if C > M * N:
        raise ValueError(f"{C} classes cannot fit in {M * N} pixels")
    rng = np.random.default_rng(seed)
    sig = class_signatures(C, B, rng)
    classes, blob = blob_layout(M, N, C, blobs_per_class, rng)
    gain = rng.uniform(1 - blob_gain, 1 + blob_gain, size=blob.max() + 1)
    values = sig[classes - 1] * gain[blob][..., None]
    if noise > 0:
        values = values + rng.normal(0.0, noise, size=values.shape)
    names = [f"class_{c}" for c in range(1, C + 1)]
    return HsiCube(values.astype(np.float32)), LabelRaster(classes, C, names)
