"""Hyperspectral cubes, label rasters and the HSC1 container."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"HSC1"


class CubeFormatError(ValueError):
    pass


@dataclass
class HsiCube:
    """An M x N x B cube; ``band_mask`` lists retained band indices of the source."""

    values: np.ndarray
    band_mask: tuple[int, ...] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise ValueError(f"cube must be M x N x B with positive extents, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("cube contains non-finite values")
        if self.band_mask is not None:
            mask = tuple(int(b) for b in self.band_mask)
            if len(mask) != self.B or any(b >= a for a, b in zip(mask[1:], mask)) or mask[0] < 0:
                raise ValueError("band_mask must be strictly increasing, one entry per band")
            self.band_mask = mask

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    @property
    def B(self) -> int:
        return self.values.shape[2]


@dataclass
class LabelRaster:
    """M x N class labels in [0, C]; 0 marks unlabeled pixels."""

    labels: np.ndarray
    n_classes: int
    class_names: list[str] | None = field(default=None)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 2:
            raise ValueError(f"label raster must be 2-D, got {self.labels.shape}")
        if self.labels.min() < 0 or self.labels.max() > self.n_classes:
            raise CubeFormatError(
                f"labels must lie in [0, {self.n_classes}], found [{self.labels.min()}, {self.labels.max()}]"
            )
        if self.class_names is not None and len(self.class_names) != self.n_classes:
            raise ValueError("class_names must have one entry per class")

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def class_counts(self) -> dict[int, int]:
        counts = np.bincount(self.labels.ravel(), minlength=self.n_classes + 1)
        return {c: int(counts[c]) for c in range(1, self.n_classes + 1)}


def normalize_bands(cube: HsiCube) -> HsiCube:
    """Min-max scale every band independently to [0, 1]; constant bands become 0."""
    v = cube.values.astype(np.float64)
    lo = v.min(axis=(0, 1), keepdims=True)
    span = v.max(axis=(0, 1), keepdims=True) - lo
    out = np.where(span > 0, (v - lo) / np.where(span > 0, span, 1.0), 0.0)
    return HsiCube(out.astype(np.float32), cube.band_mask)


def save_cube(path, cube: HsiCube, labels: LabelRaster) -> None:
    if labels.shape != (cube.M, cube.N):
        raise ValueError(f"label raster {labels.shape} does not match cube {(cube.M, cube.N)}")
    lines = [f"M={cube.M}", f"N={cube.N}", f"B={cube.B}", f"C={labels.n_classes}", "dtype=f32"]
    if labels.class_names:
        lines.append("class_names=" + ",".join(labels.class_names))
    if cube.band_mask is not None:
        lines.append("band_mask=" + ",".join(str(b) for b in cube.band_mask))
    header = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(cube.values.astype("<f4").tobytes(order="C"))
        fh.write(labels.labels.astype("<u2").tobytes(order="C"))


def _parse_header(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CubeFormatError(f"malformed header line {line!r}")
        out[key.strip()] = value.strip()
    return out


def load_cube(path) -> tuple[HsiCube, LabelRaster]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CubeFormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 8:
        raise CubeFormatError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + hlen:
        raise CubeFormatError(f"{path}: truncated header")
    meta = _parse_header(raw[8:8 + hlen].decode("utf-8"))
    try:
        M, N, B, C = (int(meta[k]) for k in ("M", "N", "B", "C"))
    except KeyError as exc:
        raise CubeFormatError(f"{path}: header lacks {exc.args[0]}") from None
    if meta.get("dtype", "f32") != "f32":
        raise CubeFormatError(f"{path}: unsupported dtype {meta['dtype']}")
    n_vals = M * N * B * 4
    n_labels = M * N * 2
    body = raw[8 + hlen:]
    if len(body) < n_vals + n_labels:
        raise CubeFormatError(
            f"{path}: truncated payload, need {n_vals + n_labels} bytes, have {len(body)}"
        )
    values = np.frombuffer(body[:n_vals], dtype="<f4").reshape(M, N, B).astype(np.float32)
    labels = np.frombuffer(body[n_vals:n_vals + n_labels], dtype="<u2").reshape(M, N)
    if labels.max(initial=0) > C:
        raise CubeFormatError(f"{path}: label {labels.max()} exceeds class count {C}")
    names = meta["class_names"].split(",") if meta.get("class_names") else None
    mask = tuple(int(b) for b in meta["band_mask"].split(",")) if meta.get("band_mask") else None
    return HsiCube(values, mask), LabelRaster(labels.astype(np.int64), C, names)
