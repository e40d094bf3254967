import numpy as np
import pytest

from util.photon_model import LaserPulse, PulseShape, SceneConfig

SEED = 20240607


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)


@pytest.fixture
def rect_scene():
    return SceneConfig.from_rates(1e7, 1e8, 25e-9, 4e-9, 100e-9)


@pytest.fixture
def gaussian_scene():
    return SceneConfig(
        2e7, LaserPulse(4e-9, 1.5, PulseShape.GAUSSIAN), 40e-9, 100e-9
    )


@pytest.fixture
def background_scene():
    return SceneConfig(1e8, LaserPulse(4e-9, 0.0), 0.0, 100e-9)
