"""Disjoint rigid cubes dropping under uniform acceleration."""

from typing import Optional

import numpy as np

from ..core.exceptions import ContractViolation
from .base_scene import SceneGenerator, sample_box, split_counts

CUBE_SIDE = 0.5
CUBE_GAP = 0.5
DEFAULT_DRIFT = 0.5


class MultibodyDrop(SceneGenerator):
    """
    `clusters` cubes in a row along x, all falling along -z.

    `motion` is the acceleration magnitude; every point of cluster c at
    frame t is displaced by 0.5 * motion * (t * dt)^2 along -z plus a
    constant +x drift of velocity drift * c / (clusters - 1), so the
    cubes fall together and spread apart without touching.
    """

    kind = "multibody_drop"
    default_motion = 9.81

    def __init__(self, clusters: int = 3, drift: float = DEFAULT_DRIFT, **params):
        if clusters < 1:
            raise ContractViolation(f"multibody scene needs at least one cluster, got {clusters}")
        if drift < 0:
            raise ContractViolation(f"multibody drift must be non-negative, got {drift}")
        self.clusters = int(clusters)
        self.drift = float(drift)
        params.setdefault("total_volume", clusters * CUBE_SIDE**3)
        super().__init__(**params)

    def cluster_boxes(self):
        pitch = CUBE_SIDE + CUBE_GAP
        return [
            ((c * pitch, 0.0, 0.0), (c * pitch + CUBE_SIDE, CUBE_SIDE, CUBE_SIDE))
            for c in range(self.clusters)
        ]

    def cluster_labels(self, num_points: int) -> np.ndarray:
        counts = split_counts(num_points, self.clusters)
        return np.repeat(np.arange(self.clusters), counts)

    def cluster_velocities(self) -> np.ndarray:
        """Horizontal drift per cluster, shape (K, 3)."""
        out = np.zeros((self.clusters, 3))
        out[:, 0] = self.drift * np.arange(self.clusters) / max(self.clusters - 1, 1)
        return out

    def sample_rest(self, rng: np.random.Generator) -> np.ndarray:
        counts = split_counts(self.num_points, self.clusters)
        parts = [sample_box(rng, count, *box) for count, box in zip(counts, self.cluster_boxes())]
        return np.concatenate(parts, axis=0)

    def displacement(self) -> np.ndarray:
        """Per-frame, per-cluster offset, shape (T, K, 3)."""
        times = self.frame_times()
        out = times[:, None, None] * self.cluster_velocities()[None]
        out[:, :, 2] = -0.5 * self.motion * times[:, None] ** 2
        return out

    def trajectory(self, points: np.ndarray) -> Optional[np.ndarray]:
        labels = self.cluster_labels(len(points))
        return points[None] + self.displacement()[:, labels, :]

    def describe(self) -> dict:
        info = super().describe()
        info.update(clusters=self.clusters, drift=self.drift)
        return info
