import numpy as np
import pytest

from hsifuse.data import make_synthetic
from hsifuse.sst import SstConfig
from hsifuse.swin3d import Swin3dConfig
from hsifuse.training import TrainConfig, model_config, prepare_data

TINY_SWIN = Swin3dConfig(8, (1, 1), (2, 2), (2, 2, 2), (1,), 2.0)
TINY_SST = SstConfig(tokens=4, dim=8, layers=1, heads=2, mlp_ratio=2.0)


def tiny_model_config(n_bands, n_classes, cfg, mode="fused"):
    return model_config(n_bands, n_classes, cfg, mode, swin=TINY_SWIN, sst=TINY_SST, fused_dim=8)


@pytest.fixture(scope="session")
def small_cube():
    return make_synthetic(14, 14, 8, 3, seed=2)


@pytest.fixture
def small_data(small_cube):
    cube, labels = small_cube
    return prepare_data(cube, labels, 4, (0.2, 0.2, 0.6), 0)


@pytest.fixture
def small_config():
    return TrainConfig(batch_size=16, learning_rate=1e-3, epochs=2, seed=0, patch_size=4)
