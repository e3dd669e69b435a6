"""A rope of rigid segments along x, pinned at x = 0, swinging about the y axis."""

from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from ..core.exceptions import ContractViolation
from .base_scene import SceneGenerator

ROPE_THICKNESS = 0.2
Y_AXIS = np.array([0.0, 1.0, 0.0])


class RopeFixedEnd(SceneGenerator):
    """
    Kinematic chain with one bend per joint.

    Every joint bends by (motion / segments) * sin(pi * t / (T - 1)), so the
    rope starts straight, swings out and returns; the bending angles
    accumulate down the chain.
    """

    kind = "rope_fixed_end"
    default_motion = np.pi / 3.0

    def __init__(self, segments: int = 5, segment_length: float = 1.0, **params):
        if segments < 1:
            raise ContractViolation(f"rope needs at least one segment, got {segments}")
        if not segment_length > 0:
            raise ContractViolation(f"segment_length must be positive, got {segment_length}")
        self.segments = int(segments)
        self.segment_length = float(segment_length)
        params.setdefault("total_volume", segments * segment_length * ROPE_THICKNESS**2)
        super().__init__(**params)

    @property
    def length(self) -> float:
        return self.segments * self.segment_length

    def sample_rest(self, rng: np.random.Generator) -> np.ndarray:
        half = 0.5 * ROPE_THICKNESS
        return rng.uniform((0.0, -half, -half), (self.length, half, half), (self.num_points, 3))

    def segment_of(self, points: np.ndarray) -> np.ndarray:
        seg = np.floor(points[:, 0] / self.segment_length).astype(np.int64)
        return np.clip(seg, 0, self.segments - 1)

    def joint_angles(self) -> np.ndarray:
        """Bending angle per frame and joint, shape (T, segments)."""
        swing = np.sin(np.pi * self.progress())
        return np.outer(swing, np.full(self.segments, self.motion / self.segments))

    def pose_chain(self, angles: np.ndarray):
        """Rotation and origin of every segment for one frame's joint angles."""
        cumulative = np.cumsum(angles)
        rotations = Rotation.from_rotvec(np.outer(cumulative, Y_AXIS)).as_matrix()
        origins = np.zeros((self.segments, 3))
        for s in range(1, self.segments):
            origins[s] = origins[s - 1] + rotations[s - 1] @ np.array([self.segment_length, 0.0, 0.0])
        return rotations, origins

    def trajectory(self, points: np.ndarray) -> Optional[np.ndarray]:
        seg = self.segment_of(points)
        local = points.copy()
        local[:, 0] -= seg * self.segment_length
        frames = np.empty((self.num_frames,) + points.shape)
        for t, angles in enumerate(self.joint_angles()):
            rotations, origins = self.pose_chain(angles)
            frames[t] = origins[seg] + np.einsum("nij,nj->ni", rotations[seg], local)
        return frames
