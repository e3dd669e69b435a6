"""Synthetic scenes with scripted ground-truth motion."""

from typing import Tuple

from ..core.data_models import RestGeometry, TrajectoryDataset
from .base_scene import SceneGenerator, create_scene_generator
from .multibody import MultibodyDrop
from .rope import RopeFixedEnd
from .soft import SoftNone
from .two_cube import TwoCubeHinge, TwoCubeSplit


def gen_scene(kind: str, **params) -> Tuple[RestGeometry, TrajectoryDataset]:
    """Generate a scene of the given kind; see create_scene_generator for params."""
    return create_scene_generator(kind, **params).generate()


__all__ = [
    "SceneGenerator",
    "create_scene_generator",
    "gen_scene",
    "MultibodyDrop",
    "RopeFixedEnd",
    "SoftNone",
    "TwoCubeHinge",
    "TwoCubeSplit",
]
