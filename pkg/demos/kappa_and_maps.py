"""
Agreement scores and class maps
===============================
"""

import sys
from pathlib import Path

import numpy as np

from hsifuse.metrics import ConfusionMatrix, MetricsReport, agreement, emit_map, read_ppm

ag = agreement([[50, 10], [5, 35]])
print("p_o", ag.p_o, " p_e", ag.p_e, " kappa", ag.kappa, "=", float(ag.kappa))

# a chance-level table gets flagged
print(agreement([[25, 25], [25, 25]]).flags)

# accumulate from labels, then report; class 3 never appears among the truths
truth = np.array([0, 0, 1, 1, 1, 0, 1])
pred = np.array([0, 1, 1, 1, 0, 0, 2])
print(MetricsReport.from_matrix(ConfusionMatrix.from_labels(truth, pred, 3), "demo").to_text())

# write a map: role pixels coloured by class, everything else black
out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_map.ppm")
rng = np.random.default_rng(0)
pixels = rng.choice(20 * 30, size=120, replace=False)
emit_map(out, (20, 30), pixels, pixels, rng.integers(1, 4, size=120), 3)
img = read_ppm(out)
print(out, img.shape, "coloured pixels:", int(np.any(img, axis=-1).sum()))
