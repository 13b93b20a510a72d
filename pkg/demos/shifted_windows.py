"""
3-D windows, cyclic shifts and the seam mask
============================================
"""

import numpy as np

from hsifuse.fusion import attentional_fuse
from hsifuse.nn import NEG_INF
from hsifuse.swin3d import WindowGrid, attention_mask, cyclic_shift, make_grid, window_partition_3d, window_reverse_3d
from hsifuse.tensor import Tensor

x = np.arange(2 * 8 * 8 * 4 * 3, dtype=np.float32).reshape(2, 8, 8, 4, 3)

# 4x4x4 windows over an 8x8x4 map: 4 windows per sample, 64 tokens each
g = make_grid((8, 8, 4), (4, 4, 4))
w = window_partition_3d(Tensor(x), g)
print("windows", w.shape)
print("roundtrip exact:", np.array_equal(window_reverse_3d(w, g, x.shape).data, x))

# shifted variant: roll by half a window, partition, reverse, roll back
gs = make_grid((8, 8, 4), (4, 4, 4), shifted=True)
print("shift", gs.shift)
rolled = cyclic_shift(Tensor(x), [-s for s in gs.shift])
back = cyclic_shift(window_reverse_3d(window_partition_3d(rolled, gs), gs, x.shape), gs.shift)
print("shifted roundtrip exact:", np.array_equal(back.data, x))

# a 4x4 map with one 4x4 window shifted by 2 rows: wrapped rows must not mix with the rest
m = attention_mask(WindowGrid((4, 4, 1), (4, 4, 1), (2, 0, 0)))
print((m[0] == NEG_INF).astype(int)[::4, ::4])

# fusion gate: zero inputs give weights of exactly one half
fused, weights = attentional_fuse(Tensor(np.zeros((1, 4, 6))), Tensor(np.zeros((1, 4, 6))))
print("gate at zero:", np.unique(weights.data), "fused width", fused.shape[-1])
