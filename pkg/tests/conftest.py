"""Shared fixtures."""

import numpy as np
import pytest

from gaitstrip.modules.model import ModelConfig, build_model


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config() -> ModelConfig:
    """Three-block plan on 16x12 frames; same topology as the CASIA-B preset."""
    return ModelConfig(
        block_channels=[4, 8, 8],
        ecm_from_block=1,
        input_size=(16, 12),
        embedding_dim=6,
    )


@pytest.fixture
def tiny_weights(tiny_config: ModelConfig):
    return build_model(tiny_config, seed=3)
