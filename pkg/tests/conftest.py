"""Shared fixtures: small pinhole cameras and cached synthetic scenes."""

import numpy as np
import pytest

from pipeline.geometry import CameraView
from pipeline.scene_synth import SceneConfig, generate_scene
from utils.logger import reset_logging

K_QVGA = np.array([[100.0, 0.0, 160.0], [0.0, 100.0, 120.0], [0.0, 0.0, 1.0]])


@pytest.fixture
def intrinsics() -> np.ndarray:
    return K_QVGA.copy()


@pytest.fixture
def anchor_view() -> CameraView:
    return CameraView(K=K_QVGA, R=np.eye(3), t=np.zeros(3))


@pytest.fixture
def shifted_view() -> CameraView:
    """Same camera moved 10 cm along +x (t = -C)."""
    return CameraView(K=K_QVGA, R=np.eye(3), t=np.array([-0.1, 0.0, 0.0]))


@pytest.fixture(scope="session")
def small_scene():
    return generate_scene(SceneConfig(n_points=64, n_views=3, seed=7))


@pytest.fixture(scope="session")
def default_scene():
    """Default 512-point, 3-view noiseless scene."""
    return generate_scene(SceneConfig(seed=0))


@pytest.fixture
def clean_logging():
    reset_logging()
    yield
    reset_logging()
