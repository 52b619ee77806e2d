"""Shared fixtures: tiny networks and generated datasets."""

import numpy as np
import pytest

from pixcorr.models import DomainSpec, LossConfig, NetConfig, TrainConfig
from pixcorr.scenegen import generate


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def net_config() -> NetConfig:
    """Two stride-2 blocks, logits at 4 x 4 for a 16 x 16 image."""
    return NetConfig(input_channels=3, widths=(4, 6), downsample=4, num_classes=5, seed=3)


@pytest.fixture
def source_ds():
    return generate(DomainSpec.default_source(0), 4, height=16, width=16)


@pytest.fixture
def target_ds():
    return generate(DomainSpec.default_target(0), 4, height=16, width=16)


@pytest.fixture
def eval_ds():
    return generate(DomainSpec.default_target(0), 3, height=16, width=16, start_id=4)


@pytest.fixture
def tiny_train() -> TrainConfig:
    return TrainConfig(iterations=6, eval_interval=3, seed=0, loss=LossConfig.gta5_like())
