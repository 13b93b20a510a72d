"""Confusion matrices, OA/AA/kappa in exact arithmetic, and PPM class maps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np


class ConfusionMatrix:
    """``counts[i, j]`` = samples of true class ``i`` predicted as ``j`` (zero-based)."""

    def __init__(self, counts):
        c = np.asarray(counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 1:
            raise ValueError(f"confusion matrix must be square, got shape {c.shape}")
        if not np.issubdtype(c.dtype, np.integer):
            if not np.all(np.equal(np.mod(c, 1), 0)):
                raise ValueError("confusion matrix entries must be integers")
        c = c.astype(np.int64)
        if (c < 0).any():
            raise ValueError("confusion matrix entries must be nonnegative")
        self.counts = c

    @classmethod
    def zeros(cls, n_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((n_classes, n_classes), dtype=np.int64))

    @classmethod
    def from_labels(cls, truth, pred, n_classes: int) -> "ConfusionMatrix":
        truth, pred = np.asarray(truth, dtype=np.int64), np.asarray(pred, dtype=np.int64)
        if truth.shape != pred.shape:
            raise ValueError("truth and prediction lengths differ")
        for name, v in (("truth", truth), ("prediction", pred)):
            if v.size and (v.min() < 0 or v.max() >= n_classes):
                raise ValueError(f"{name} label outside [0, {n_classes})")
        flat = np.bincount(truth * n_classes + pred, minlength=n_classes * n_classes)
        return cls(flat.reshape(n_classes, n_classes))

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def add(self, truth, pred) -> None:
        self.counts += ConfusionMatrix.from_labels(truth, pred, self.n_classes).counts

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.n_classes != self.n_classes:
            raise ValueError("cannot merge matrices of different class counts")
        return ConfusionMatrix(self.counts + other.counts)

    def __eq__(self, other) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def __repr__(self) -> str:
        return f"ConfusionMatrix({self.counts.tolist()})"


def _as_cm(cm) -> ConfusionMatrix:
    return cm if isinstance(cm, ConfusionMatrix) else ConfusionMatrix(cm)


@dataclass
class Agreement:
    p_o: Fraction
    p_e: Fraction
    kappa: Fraction
    flags: tuple = ()


def agreement(cm) -> Agreement:
    """Observed and chance agreement plus kappa as exact fractions.

    A concentrated matrix (chance agreement of 1) gives kappa 1 when observed
    agreement is also 1 and 0 otherwise, flagged ``degenerate-concentrated``.
    Chance-level agreement is flagged ``degenerate-independent``.
    """
    cm = _as_cm(cm)
    counts = [[int(v) for v in row] for row in cm.counts]
    total = sum(map(sum, counts))
    if total == 0:
        raise ValueError("kappa of an empty confusion matrix")
    trace = sum(counts[i][i] for i in range(len(counts)))
    rows = [sum(r) for r in counts]
    cols = [sum(c) for c in zip(*counts)]
    chance = sum(r * c for r, c in zip(rows, cols))
    p_o = Fraction(trace, total)
    p_e = Fraction(chance, total * total)
    flags = []
    if chance == total * total:
        flags.append("degenerate-concentrated")
        k = Fraction(1) if trace == total else Fraction(0)
    else:
        k = Fraction(trace * total - chance, total * total - chance)
    if p_o == p_e:
        flags.append("degenerate-independent")
    return Agreement(p_o, p_e, k, tuple(flags))


def kappa(cm) -> float:
    return float(agreement(cm).kappa)


def oa_aa(cm) -> tuple[float, float, np.ndarray]:
    """Overall accuracy, average accuracy and per-class recall.

    Classes with no true samples have recall ``nan`` and are left out of AA.
    """
    cm = _as_cm(cm)
    total = cm.total
    if total == 0:
        raise ValueError("accuracy of an empty confusion matrix")
    rows = cm.counts.sum(axis=1)
    diag = np.diag(cm.counts)
    recall = np.full(cm.n_classes, np.nan)
    present = rows > 0
    recall[present] = diag[present] / rows[present]
    aa = Fraction(0)
    for d, r in zip(diag[present], rows[present]):
        aa += Fraction(int(d), int(r))
    aa /= int(present.sum())
    return float(Fraction(int(diag.sum()), total)), float(aa), recall


@dataclass
class MetricsReport:
    role: str
    oa: float
    aa: float
    kappa: float
    recall: list
    support: list
    total: int
    absent_classes: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    @classmethod
    def from_matrix(cls, cm, role: str) -> "MetricsReport":
        cm = _as_cm(cm)
        oa, aa, recall = oa_aa(cm)
        ag = agreement(cm)
        rows = cm.counts.sum(axis=1)
        return cls(
            role=role,
            oa=oa,
            aa=aa,
            kappa=float(ag.kappa),
            recall=[None if np.isnan(r) else float(r) for r in recall],
            support=[int(n) for n in rows],
            total=cm.total,
            absent_classes=[i + 1 for i in np.flatnonzero(rows == 0)],
            flags=list(ag.flags),
        )

    def to_json(self) -> str:
        d = {
            "role": self.role,
            "OA": self.oa,
            "AA": self.aa,
            "kappa": self.kappa,
            "total": self.total,
            "per_class": [
                {"class": i + 1, "recall": r, "support": n}
                for i, (r, n) in enumerate(zip(self.recall, self.support))
            ],
            "absent_classes": [int(c) for c in self.absent_classes],
            "flags": self.flags,
        }
        return json.dumps(d, indent=2)

    def to_text(self) -> str:
        lines = [f"role {self.role}  samples {self.total}",
                 f"OA {self.oa:.4f}  AA {self.aa:.4f}  kappa {self.kappa:.4f}",
                 "class  recall  support"]
        for i, (r, n) in enumerate(zip(self.recall, self.support)):
            lines.append(f"{i + 1:5d}  {'---' if r is None else f'{r:.4f}':>6}  {n:7d}")
        return "\n".join(lines)


# class index (1-based) -> RGB; index 0 is the black background
PALETTE = np.array([
    (0, 0, 0), (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60),
    (250, 190, 212), (0, 128, 128), (220, 190, 255), (170, 110, 40), (255, 250, 200),
    (128, 0, 0), (170, 255, 195), (128, 128, 0), (255, 215, 180), (0, 0, 128),
    (128, 128, 128), (255, 255, 255),
], dtype=np.uint8)


def palette(n_classes: int) -> np.ndarray:
    """``(n_classes + 1, 3)`` colour table; classes past the fixed table get hashed colours."""
    if n_classes + 1 <= len(PALETTE):
        return PALETTE[:n_classes + 1].copy()
    extra = np.arange(len(PALETTE), n_classes + 1, dtype=np.uint64)
    rgb = np.stack([(extra * k + o) % 200 + 55 for k, o in ((97, 13), (57, 101), (31, 7))], axis=1)
    return np.concatenate([PALETTE, rgb.astype(np.uint8)])


def class_map(shape, pixels, predictions, n_classes: int) -> np.ndarray:
    """``(M, N, 3)`` uint8 raster: role pixels in class colours, the rest black.

    ``pixels`` are flat raster indices and ``predictions`` their 1-based classes.
    """
    pixels = np.asarray(pixels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if pixels.shape != predictions.shape:
        raise ValueError(f"{predictions.size} predictions for {pixels.size} role pixels")
    if np.unique(pixels).size != pixels.size:
        raise ValueError("duplicate pixels in prediction set")
    M, N = shape
    if pixels.size and (pixels.min() < 0 or pixels.max() >= M * N):
        raise ValueError("prediction pixel outside the raster")
    if predictions.size and (predictions.min() < 1 or predictions.max() > n_classes):
        raise ValueError(f"predicted class outside [1, {n_classes}]")
    img = np.zeros((M * N, 3), dtype=np.uint8)
    img[pixels] = palette(n_classes)[predictions]
    return img.reshape(M, N, 3)


def encode_ppm(img: np.ndarray) -> bytes:
    H, W, _ = img.shape
    return f"P6\n{W} {H}\n255\n".encode("ascii") + np.ascontiguousarray(img, dtype=np.uint8).tobytes()


def emit_map(path, shape, role_pixels, pixels, predictions, n_classes: int) -> np.ndarray:
    """Write a P6 class map; ``pixels`` must be exactly the role's pixel set."""
    role = np.sort(np.asarray(role_pixels, dtype=np.int64))
    if not np.array_equal(role, np.sort(np.asarray(pixels, dtype=np.int64))):
        raise ValueError("predictions do not cover exactly the role's pixels")
    img = class_map(shape, pixels, predictions, n_classes)
    Path(path).write_bytes(encode_ppm(img))
    return img


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P6" or parts[2] != b"255":
        raise ValueError(f"{path}: not an 8-bit P6 image")
    W, H = map(int, parts[1].split())
    body = parts[3]
    if len(body) != W * H * 3:
        raise ValueError(f"{path}: payload holds {len(body)} bytes, expected {W * H * 3}")
    return np.frombuffer(body, dtype=np.uint8).reshape(H, W, 3)
