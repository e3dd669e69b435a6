"""A single soft cube with no observed motion."""

from typing import Optional

import numpy as np

from .base_scene import SceneGenerator

SOFT_CUBE = ((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))


class SoftNone(SceneGenerator):
    """Rest geometry only; training on it runs without observations."""

    kind = "soft_none"

    def sample_rest(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(SOFT_CUBE[0], SOFT_CUBE[1], (self.num_points, 3))

    def trajectory(self, points: np.ndarray) -> Optional[np.ndarray]:
        return None
