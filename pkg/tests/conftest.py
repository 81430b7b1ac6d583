import os

os.environ.setdefault("HINT_PROGRESS", "0")
os.environ.setdefault("HINT_LOG_LEVEL", "WARNING")

import numpy as np
import pytest

from hint.config import ArchitectureConfig, TrainingConfig


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def small_arch():
    """Random (non-identity) subnets so gradients and logdets are nontrivial"""
    return ArchitectureConfig(n_layers=2, depth=2, hidden_layers=1, width_factor=2, init_scale=0.5)


@pytest.fixture
def quick_training():
    return TrainingConfig(epochs=3, batch_size=32, train_set_size=128, learning_rate=1e-3)
