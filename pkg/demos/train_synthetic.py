"""
Training the fused model on a synthetic cube
============================================

A reduced-width model so this finishes in well under a minute; pass ``full`` to
use the default architecture (several minutes per run on one core).
"""

import sys

from hsifuse.data import make_synthetic, normalize_bands
from hsifuse.fusion import FusionModel
from hsifuse.metrics import MetricsReport
from hsifuse.sst import SstConfig
from hsifuse.swin3d import Swin3dConfig
from hsifuse.training import TrainConfig, evaluate, model_config, prepare_data, train

full = "full" in sys.argv[1:]
cube, labels = make_synthetic(32, 32, 16, 3, seed=7, noise=0.1, blobs_per_class=3)
cube = normalize_bands(cube)

cfg = TrainConfig(epochs=30, seed=7, patch_size=8 if full else 6,
                  learning_rate=1e-4 if full else 1e-3)
data = prepare_data(cube, labels, cfg.patch_size, (0.1, 0.4, 0.5), seed=7)
print({r: data.role(r).size for r in ("train", "val", "test")})

if full:
    mc = model_config(cube.B, labels.n_classes, cfg)
else:
    mc = model_config(cube.B, labels.n_classes, cfg, swin=Swin3dConfig(32, (1, 1), (4, 4), (2, 2, 2), (1,), 2.0),
                      sst=SstConfig(tokens=4, dim=32, layers=2, heads=4, mlp_ratio=2.0), fused_dim=32)
model = FusionModel(mc, seed=cfg.seed)
print("parameters:", sum(p.size for p in model.parameters()))

result = train(model, data, cfg)
for r in result.log:
    print(f"epoch {r['epoch']:2d}  loss {r['loss']:.4f}  val OA {r['val_oa']:.3f}  val kappa {r['val_kappa']:.3f}")
print("kept epoch", result.best.epoch)

# the best-val-kappa weights are already loaded back into the model
print(MetricsReport.from_matrix(evaluate(model, data, "test"), "test").to_text())
