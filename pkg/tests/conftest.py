"""
Pytest configuration and fixtures for splatcal tests.
"""

import numpy as np
import pytest

from src.config import CalibConfig, Config
from src.core.models import Camera

from tests.helpers import random_gaussians


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def camera():
    """32x32 camera three units behind the origin, looking down +z."""
    return Camera.look_at(np.array([0.0, 0.0, -3.0]), np.zeros(3), 32, 32, focal=32.0)


@pytest.fixture
def camera64():
    """64x64 camera three units behind the origin, looking down +z."""
    return Camera.look_at(np.array([0.0, 0.0, -3.0]), np.zeros(3), 64, 64, focal=64.0)


@pytest.fixture
def gaussians(rng):
    """Twenty random Gaussians in front of the fixture camera."""
    return random_gaussians(rng, 20)


@pytest.fixture
def calib():
    """Default calibration settings."""
    return CalibConfig()


@pytest.fixture
def tiny_config():
    """A configuration small enough to train in a few seconds."""
    config = Config()
    config.calib.total_iters = 20
    config.calib.t_start = 10
    config.calib.t_prune = 5
    config.calib.densify_from_iter = 5
    config.calib.densify_until_iter = 15
    config.calib.densify_interval = 5
    config.runtime.log_interval = 5
    config.runtime.checkpoint_interval = 10
    return config


@pytest.fixture(scope="session")
def tiny_scene():
    """Generated wall scene: 150 surface Gaussians, 3 training views, 1 test view at 32px."""
    from src.scenegen import SceneSpec, generate

    spec = SceneSpec(template="textured-wall", n_surface=150, n_cameras=3, n_test=1, image_size=32, seed=3)
    return generate(spec)


@pytest.fixture(scope="session")
def tiny_floater_scene(tiny_scene):
    """tiny_scene with 60 injected floaters, plus their flags."""
    from src.scenegen import FloaterSpec, inject_floaters

    return inject_floaters(tiny_scene, FloaterSpec(count=60, opacity_range=(0.02, 0.1)), seed=5)
