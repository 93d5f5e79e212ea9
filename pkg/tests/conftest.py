import os

import hypothesis
import numpy as np
import pytest
from hypothesis import HealthCheck

from stpp_mot.config import ModelConfig, SimulationConfig

np.seterr(all="warn")

hypothesis.settings.register_profile(
    "ci", deadline=None, suppress_health_check=(HealthCheck.too_slow,)
)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "ci"))


@pytest.fixture
def small_model_config():
    """Config small enough for finite-difference checks."""
    return ModelConfig(
        feature_channels=2,
        hidden_channels=2,
        kernel_size=3,
        mlp_hidden=3,
    )


@pytest.fixture
def tiny_simulation():
    return SimulationConfig(
        n_agents=3,
        n_frames=12,
        height=16,
        width=16,
        n_noise_sources=1,
        min_box=3,
        max_box=5,
    )
