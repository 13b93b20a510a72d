"""Stratified train/validation/test assignment with no shared pixels."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cube import LabelRaster

ROLES = ("train", "val", "test")

FRACTION_PRESETS = {
    "default": (0.05, 0.45, 0.50),
    "ratio-13-37-50": (0.13, 0.37, 0.50),
    "half-holdout-5-95": (0.025, 0.475, 0.50),
    "quarter-25-25-50": (0.25, 0.25, 0.50),
}


def role_counts(n: int, fractions) -> tuple[int, int, int]:
    """Per-class role sizes: floors of ``f * n``, remainder dealt train -> val -> test.

    The remainder is the difference between ``round(sum(f) * n)`` (capped at n)
    and the sum of floors; it goes one sample at a time to roles with a
    positive fraction, in role order. Classes with fewer than three samples
    go entirely to train.
    """
    if n < 3:
        return (n, 0, 0)
    eps = 1e-9
    floors = [math.floor(f * n + eps) for f in fractions]
    target = min(n, int(math.floor(sum(fractions) * n + 0.5 + eps)))
    remainder = target - sum(floors)
    order = [i for i, f in enumerate(fractions) if f > 0]
    i = 0
    while remainder > 0 and order:
        floors[order[i % len(order)]] += 1
        remainder -= 1
        i += 1
    if floors[0] == 0 and fractions[0] > 0:
        if sum(floors) < n:
            floors[0] = 1
        else:
            donor = 2 if floors[2] >= floors[1] else 1
            floors[donor] -= 1
            floors[0] = 1
    return tuple(floors)


@dataclass
class SplitAssignment:
    """Flat (row-major) pixel indices per role plus bookkeeping."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    shape: tuple[int, int]
    seed: int
    fractions: tuple[float, float, float]
    class_totals: dict[int, int] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def role(self, name: str) -> np.ndarray:
        if name not in ROLES:
            raise ValueError(f"unknown role {name!r}; expected one of {ROLES}")
        return getattr(self, name)

    def role_raster(self) -> np.ndarray:
        """M x N raster: 0 none, 1 train, 2 val, 3 test."""
        out = np.zeros(self.shape[0] * self.shape[1], dtype=np.int64)
        for code, name in enumerate(ROLES, start=1):
            out[self.role(name)] = code
        return out.reshape(self.shape)

    def per_class_counts(self, labels: LabelRaster) -> dict[int, tuple[int, int, int]]:
        flat = labels.labels.ravel()
        out = {}
        for c in range(1, labels.n_classes + 1):
            out[c] = tuple(int((flat[self.role(r)] == c).sum()) for r in ROLES)
        return out


def _check_fractions(fractions) -> tuple[float, float, float]:
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3 or any(f < 0 for f in fr) or sum(fr) > 1 + 1e-9 or fr[0] <= 0:
        raise ValueError(f"fractions must be three non-negative values, train > 0, sum <= 1; got {fractions}")
    return fr


def make_disjoint_split(
    labels: LabelRaster,
    fractions,
    seed: int,
    eligible: np.ndarray | None = None,
) -> SplitAssignment:
    """Assign labelled pixels to disjoint roles, class by class.

    ``eligible`` optionally restricts candidates (e.g. to pixels with a full
    patch window). The result depends only on (labels, eligible, fractions, seed).
    """
    fr = _check_fractions(fractions)
    flat = labels.labels.ravel()
    pool = flat > 0
    if eligible is not None:
        pool &= np.asarray(eligible, dtype=bool).ravel()
    parts = {r: [] for r in ROLES}
    totals, notes = {}, []
    for c in range(1, labels.n_classes + 1):
        members = np.flatnonzero(pool & (flat == c))
        totals[c] = int(members.size)
        if 0 < members.size < 3:
            msg = f"class {c} has {members.size} sample(s); all assigned to train"
            notes.append(msg)
            warnings.warn(msg, stacklevel=2)
        rng = np.random.default_rng([seed, c])
        members = members[rng.permutation(members.size)]
        n_tr, n_va, n_te = role_counts(members.size, fr)
        parts["train"].append(members[:n_tr])
        parts["val"].append(members[n_tr:n_tr + n_va])
        parts["test"].append(members[n_tr + n_va:n_tr + n_va + n_te])
    arrays = {r: np.sort(np.concatenate(parts[r])).astype(np.int64) if parts[r] else np.zeros(0, np.int64)
              for r in ROLES}
    return SplitAssignment(
        arrays["train"], arrays["val"], arrays["test"], labels.shape, int(seed), fr, totals, notes
    )


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str
    pixel: int | None = None


def validate_split(split: SplitAssignment, labels: LabelRaster) -> list[Violation]:
    """Report overlaps, bad references and per-class count drift (empty = valid)."""
    out: list[Violation] = []
    flat = labels.labels.ravel()
    size = flat.size
    for i, a in enumerate(ROLES):
        idx = split.role(a)
        uniq, counts = np.unique(idx, return_counts=True)
        for p in uniq[counts > 1]:
            out.append(Violation("duplicate", f"pixel {p} listed twice in {a}", int(p)))
        bad = idx[(idx < 0) | (idx >= size)]
        for p in bad:
            out.append(Violation("out_of_range", f"{a} references pixel {p} outside the raster", int(p)))
        ok = idx[(idx >= 0) & (idx < size)]
        for p in ok[flat[ok] == 0]:
            out.append(Violation("unlabeled", f"{a} references unlabeled pixel {p}", int(p)))
        for b in ROLES[i + 1:]:
            for p in np.intersect1d(idx, split.role(b)):
                out.append(Violation("overlap", f"pixel {p} is in both {a} and {b}", int(p)))
    if split.class_totals:
        observed = split.per_class_counts(labels)
        for c, n in split.class_totals.items():
            want = role_counts(n, split.fractions)
            if observed.get(c) != want:
                out.append(Violation("count", f"class {c}: roles hold {observed.get(c)}, rule gives {want}"))
    return out


def save_split(path, split: SplitAssignment) -> None:
    doc = {
        "format": "hsifuse-split/1",
        "seed": split.seed,
        "fractions": list(split.fractions),
        "shape": list(split.shape),
        "class_totals": {str(k): v for k, v in sorted(split.class_totals.items())},
        "train": split.train.tolist(),
        "val": split.val.tolist(),
        "test": split.test.tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_split(path) -> SplitAssignment:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "hsifuse-split/1":
        raise ValueError(f"{path}: not a split file")
    return SplitAssignment(
        *(np.asarray(doc[r], dtype=np.int64) for r in ROLES),
        shape=tuple(doc["shape"]),
        seed=int(doc["seed"]),
        fractions=tuple(doc["fractions"]),
        class_totals={int(k): int(v) for k, v in doc.get("class_totals", {}).items()},
    )
