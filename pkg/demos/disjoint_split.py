"""
Class-stratified disjoint splits
================================

Per-class role sizes come from floors plus a remainder dealt train -> val -> test.
"""

import numpy as np

from hsifuse.data import (
    FRACTION_PRESETS,
    candidate_mask,
    PatchSpec,
    make_disjoint_split,
    make_synthetic,
    role_counts,
    validate_split,
)

# 46 labelled pixels under the 13/37/50 preset
print("46 pixels:", role_counts(46, FRACTION_PRESETS["ratio-13-37-50"]))
# tiny classes go to train whole
print("2 pixels: ", role_counts(2, FRACTION_PRESETS["default"]))

cube, labels = make_synthetic(32, 32, 16, 3, seed=7)
eligible = candidate_mask(labels.shape, PatchSpec(8))  # centres with a full 8x8 window
split = make_disjoint_split(labels, FRACTION_PRESETS["default"], seed=7, eligible=eligible)
for c, (tr, va, te) in split.per_class_counts(labels).items():
    print(f"class {c}: train {tr:3d}  val {va:3d}  test {te:3d}")
print("violations:", validate_split(split, labels))

# plant one overlap and watch it get reported
split.test = np.sort(np.append(split.test, split.train[0]))
for v in validate_split(split, labels):
    print(v.kind, "-", v.detail)

# role raster: 0 unused, 1 train, 2 val, 3 test
print(split.role_raster()[10:16, 10:22])
