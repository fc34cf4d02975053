import numpy as np
import pytest
import torch

from convvrnn.model import ModelConfig


@pytest.fixture
def toy_cfg():
    """16x16 single-channel config small enough for finite differences."""
    return ModelConfig(image_size=16, channels=1, horizon=4, z_dim=4,
                       feat_hw=4, feat_ch=8, hidden_ch=8, seed=3)


@pytest.fixture
def small_cfg():
    """32x32 config used for fast training smoke tests."""
    return ModelConfig(image_size=32, channels=1, horizon=4, z_dim=8,
                       feat_hw=4, feat_ch=8, hidden_ch=16, seed=5)


def rand_frames(seed, batch, horizon, channels, size, dtype=torch.float32):
    rng = np.random.default_rng(seed)
    arr = rng.uniform(0, 1, size=(batch, horizon, channels, size, size))
    return torch.from_numpy(arr).to(dtype)
