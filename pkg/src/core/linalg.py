"""
Small dense linear-algebra helpers for batched 3x3 matrices and unit quaternions.

Quaternions are stored scalar-first, (w, x, y, z). Handle transforms are
7-vectors: quaternion followed by translation.
"""

import numpy as np

# Levi-Civita symbol, used for the second derivative of det(F)
LEVI_CIVITA = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    LEVI_CIVITA[_i, _j, _k] = 1.0
    LEVI_CIVITA[_i, _k, _j] = -1.0

IDENTITY_TRANSFORM = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])


def cofactor3(m: np.ndarray) -> np.ndarray:
    """Cofactor matrix of a batch of 3x3 matrices; equals d det(m) / dm."""
    r0, r1, r2 = m[..., 0, :], m[..., 1, :], m[..., 2, :]
    return np.stack([np.cross(r1, r2), np.cross(r2, r0), np.cross(r0, r1)], axis=-2)


def det3(m: np.ndarray) -> np.ndarray:
    return np.sum(m[..., 0, :] * np.cross(m[..., 1, :], m[..., 2, :]), axis=-1)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for unit quaternions of shape (..., 4)."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    R = np.empty(np.shape(q)[:-1] + (3, 3))
    R[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[..., 0, 1] = 2.0 * (x * y - w * z)
    R[..., 0, 2] = 2.0 * (x * z + w * y)
    R[..., 1, 0] = 2.0 * (x * y + w * z)
    R[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[..., 1, 2] = 2.0 * (y * z - w * x)
    R[..., 2, 0] = 2.0 * (x * z - w * y)
    R[..., 2, 1] = 2.0 * (y * z + w * x)
    R[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R


def quat_to_rotmat_jacobian(q: np.ndarray) -> np.ndarray:
    """dR/dq of the polynomial map in quat_to_rotmat, shape (..., 3, 3, 4)."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    zero = np.zeros_like(w)
    rows = [
        [[zero, zero, -4 * y, -4 * z], [-2 * z, 2 * y, 2 * x, -2 * w], [2 * y, 2 * z, 2 * w, 2 * x]],
        [[2 * z, 2 * y, 2 * x, 2 * w], [zero, -4 * x, zero, -4 * z], [-2 * x, -2 * w, 2 * z, 2 * y]],
        [[-2 * y, 2 * z, -2 * w, 2 * x], [2 * x, 2 * w, 2 * z, 2 * y], [zero, -4 * x, -4 * y, zero]],
    ]
    dR = np.array(rows)  # (3, 3, 4, ...)
    return np.moveaxis(dR, (0, 1, 2), (-3, -2, -1))


def quat_normalize_jacobian(q: np.ndarray) -> np.ndarray:
    """d(q/|q|)/dq, shape (..., 4, 4)."""
    norm = np.linalg.norm(q, axis=-1)[..., None, None]
    qh = q / norm[..., 0]
    return (np.eye(4) - qh[..., :, None] * qh[..., None, :]) / norm


def identity_transforms(*leading: int) -> np.ndarray:
    return np.broadcast_to(IDENTITY_TRANSFORM, tuple(leading) + (7,)).copy()
