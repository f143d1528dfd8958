import numpy as np
import pytest
import torch

from rtn.degrade import synthetic_templates
from rtn.model import ModelConfig

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def library():
    return synthetic_templates(n=6, size=64, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(encoder_channels=8, num_swin_blocks=2, window_size=4, num_heads=2, head_dim=4)
