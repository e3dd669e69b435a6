"""
Abstract base class for synthetic scene generators.

A generator samples a rest point cloud and scripts analytic ground-truth
trajectories for it. Every generator draws from its own seeded
`np.random.Generator`, so regenerating with the same seed is bit-identical.
"""

from abc import ABC, abstractmethod
from typing import Optional, Tuple

import numpy as np

from config.settings import DEFAULT_SEED, SCENE_KINDS
from ..core.data_models import RestGeometry, TrajectoryDataset
from ..core.exceptions import ContractViolation


class SceneGenerator(ABC):
    """
    Base class for scripted scenes.

    Subclasses provide the rest sampling, the default motion magnitude and
    total volume, and the analytic trajectory.
    """

    kind: str = ""
    default_motion: float = 0.0
    default_total_volume: float = 1.0

    def __init__(
        self,
        num_points: int = 2000,
        num_frames: int = 40,
        dt: float = 0.04,
        motion: Optional[float] = None,
        total_volume: Optional[float] = None,
        density: float = 1.0,
        seed: int = DEFAULT_SEED,
    ):
        if num_points < 4:
            raise ContractViolation(f"a scene needs at least 4 points, got {num_points}")
        if num_frames < 2:
            raise ContractViolation(f"a scene needs at least 2 frames, got {num_frames}")
        if not dt > 0:
            raise ContractViolation(f"dt must be positive, got {dt}")
        if not density > 0:
            raise ContractViolation(f"density must be positive, got {density}")

        self.num_points = int(num_points)
        self.num_frames = int(num_frames)
        self.dt = float(dt)
        self.motion = self.default_motion if motion is None else float(motion)
        self.total_volume = self.default_total_volume if total_volume is None else float(total_volume)
        self.density = float(density)
        self.seed = int(seed)

    @abstractmethod
    def sample_rest(self, rng: np.random.Generator) -> np.ndarray:
        """Rest positions, shape (N, 3)."""

    @abstractmethod
    def trajectory(self, points: np.ndarray) -> Optional[np.ndarray]:
        """Scripted positions, shape (T, N, 3), or None for a scene without motion."""

    def frame_times(self) -> np.ndarray:
        return np.arange(self.num_frames) * self.dt

    def progress(self) -> np.ndarray:
        """t / (T - 1) for every frame; 0 at the first frame and 1 at the last."""
        return np.arange(self.num_frames) / (self.num_frames - 1)

    def generate(self) -> Tuple[RestGeometry, TrajectoryDataset]:
        rng = np.random.default_rng(self.seed)
        points = self.sample_rest(rng)
        geom = RestGeometry.uniform(points, self.total_volume, self.density)
        frames = self.trajectory(points)
        if frames is None:
            return geom, TrajectoryDataset.empty(self.dt)
        return geom, TrajectoryDataset([frames], [True], self.dt)

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "num_points": self.num_points,
            "num_frames": self.num_frames,
            "dt": self.dt,
            "motion": self.motion,
            "total_volume": self.total_volume,
            "density": self.density,
            "seed": self.seed,
        }


def split_counts(n: int, parts: int) -> list:
    """Split n points over `parts` bodies, earlier bodies taking the remainder."""
    base, extra = divmod(n, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def sample_box(rng: np.random.Generator, count: int, low, high) -> np.ndarray:
    return rng.uniform(np.asarray(low, dtype=np.float64), np.asarray(high, dtype=np.float64), (count, 3))


# Factory function for creating scene generators
def create_scene_generator(kind: str, **params) -> SceneGenerator:
    """
    Factory function to create scene generators.

    Args:
        kind: One of the scene kinds in config.settings.SCENE_KINDS
        **params: num_points, num_frames, dt, motion, total_volume, density, seed
                  and kind-specific extras (segments, clusters)

    Returns:
        Scene generator instance

    Raises:
        ContractViolation: If kind is not supported
    """
    if kind in ("two_cube_hinge", "two_cube_split"):
        from .two_cube import TwoCubeHinge, TwoCubeSplit

        cls = TwoCubeHinge if kind == "two_cube_hinge" else TwoCubeSplit
        return cls(**params)
    elif kind == "rope_fixed_end":
        from .rope import RopeFixedEnd

        return RopeFixedEnd(**params)
    elif kind == "multibody_drop":
        from .multibody import MultibodyDrop

        return MultibodyDrop(**params)
    elif kind == "soft_none":
        from .soft import SoftNone

        return SoftNone(**params)
    else:
        raise ContractViolation(
            f"Unsupported scene kind: {kind} (expected one of {', '.join(SCENE_KINDS)})"
        )
