"""
Shared pytest fixtures for the gdgen test suite.
"""

import numpy as np
import pytest

from src.core.configs import TrainConfig
from src.core.data_models import RestGeometry
from src.scenes import gen_scene


@pytest.fixture
def rng():
    """Seeded generator for test data"""
    return np.random.default_rng(1234)


@pytest.fixture
def cloud_points(rng):
    """120 random points in [-1, 1]^3"""
    return rng.uniform(-1.0, 1.0, (120, 3))


@pytest.fixture
def cloud_geom(cloud_points):
    """Random cloud with uniform quadrature over the 2x2x2 box"""
    return RestGeometry.uniform(cloud_points, total_volume=8.0)


@pytest.fixture
def lattice_geom():
    """4x4x4 lattice centered on the origin, unit total volume"""
    axis = np.linspace(-0.5, 0.5, 4)
    points = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    return RestGeometry.uniform(points)


@pytest.fixture
def tiny_train_config():
    """Small networks and few epochs, enough to exercise both stages"""
    return TrainConfig(
        num_handles=2,
        knn=6,
        epochs=6,
        stage1_epochs=3,
        hidden_width=8,
        eigen_layers=2,
        material_blocks=1,
        global_tokens=16,
        chamfer_subsample=64,
        log_every=100,
        seed=7,
    )


@pytest.fixture
def split_scene():
    """Small two_cube_split scene (geometry, dataset)"""
    return gen_scene("two_cube_split", num_points=40, num_frames=4, dt=0.04, seed=3)


@pytest.fixture
def hinge_scene():
    """Small two_cube_hinge scene (geometry, dataset)"""
    return gen_scene("two_cube_hinge", num_points=40, num_frames=4, dt=0.04, seed=3)


# Hand-evaluated reference values


@pytest.fixture
def stretch_x():
    """F = diag(2, 1, 1)"""
    return np.diag([2.0, 1.0, 1.0])
