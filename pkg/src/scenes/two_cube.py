"""Two stacked unit cubes: bottom in [-1, 0]^3, top in [0, 1]^3, sharing the origin corner."""

from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from .base_scene import SceneGenerator, sample_box, split_counts

Z_AXIS = np.array([0.0, 0.0, 1.0])
BOTTOM_CUBE = ((-1.0, -1.0, -1.0), (0.0, 0.0, 0.0))
TOP_CUBE = ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))


class TwoCubeScene(SceneGenerator):
    default_total_volume = 2.0

    def sample_rest(self, rng: np.random.Generator) -> np.ndarray:
        n_bottom, n_top = split_counts(self.num_points, 2)
        bottom = sample_box(rng, n_bottom, *BOTTOM_CUBE)
        top = sample_box(rng, n_top, *TOP_CUBE)
        return np.concatenate([bottom, top], axis=0)

    def top_mask(self, points: np.ndarray) -> np.ndarray:
        _, n_top = split_counts(len(points), 2)
        mask = np.zeros(len(points), dtype=bool)
        mask[len(points) - n_top:] = True
        return mask


class TwoCubeHinge(TwoCubeScene):
    """Top cube rotates about the up (z) axis through the shared corner."""

    kind = "two_cube_hinge"
    default_motion = 0.5 * np.pi

    def angles(self) -> np.ndarray:
        return self.motion * self.progress()

    def trajectory(self, points: np.ndarray) -> Optional[np.ndarray]:
        frames = np.repeat(points[None], self.num_frames, axis=0)
        top = self.top_mask(points)
        rotations = Rotation.from_rotvec(np.outer(self.angles(), Z_AXIS)).as_matrix()
        for t, R in enumerate(rotations):
            frames[t, top] = points[top] @ R.T
        return frames


class TwoCubeSplit(TwoCubeScene):
    """Top cube translates away from the bottom cube along the diagonal at constant velocity."""

    kind = "two_cube_split"
    default_motion = 1.0

    def velocity(self) -> np.ndarray:
        """Per-frame displacement; the top cube has moved `motion` by the last frame."""
        return self.motion / (self.num_frames - 1) * np.ones(3) / np.sqrt(3.0)

    def trajectory(self, points: np.ndarray) -> Optional[np.ndarray]:
        frames = np.repeat(points[None], self.num_frames, axis=0)
        top = self.top_mask(points)
        v = self.velocity()
        for t in range(self.num_frames):
            frames[t, top] = points[top] + t * v
        return frames
