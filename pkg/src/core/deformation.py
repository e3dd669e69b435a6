"""
Neural eigenmode weights and the handle-blended deformation map.

A handle transform is a 7-vector, quaternion (w, x, y, z) then translation.
Quaternions are normalized inside the forward map, so the stored
parameters are unconstrained.
"""

from typing import Optional, Tuple

import numpy as np

from config.settings import DEFAULT_EIGEN_LAYERS, DEFAULT_HIDDEN_WIDTH
from ..autodiff import tensor as ad
from ..autodiff.layers import init_mlp, mlp
from ..autodiff.optim import ParamStore
from ..autodiff.tensor import Tensor
from .data_models import DeformationState, RestGeometry
from .exceptions import ContractViolation
from .linalg import identity_transforms

HANDLE_INIT_NOISE = 1e-4


class EigenmodeNet:
    """MLP from normalized rest position to J raw blend weights."""

    def __init__(
        self,
        store: ParamStore,
        num_handles: int,
        center: np.ndarray,
        scale: float,
        hidden_width: int = DEFAULT_HIDDEN_WIDTH,
        layers: int = DEFAULT_EIGEN_LAYERS,
        prefix: str = "eigen",
    ):
        self.store = store
        self.num_handles = num_handles
        self.center = np.asarray(center, dtype=np.float64)
        self.scale = float(scale)
        self.hidden_width = hidden_width
        self.layers = layers
        self.prefix = prefix

    @classmethod
    def create(
        cls,
        store: ParamStore,
        geom: RestGeometry,
        num_handles: int,
        rng: np.random.Generator,
        hidden_width: int = DEFAULT_HIDDEN_WIDTH,
        layers: int = DEFAULT_EIGEN_LAYERS,
        zero_last: bool = False,
    ) -> "EigenmodeNet":
        center = geom.points.mean(axis=0)
        scale = 0.5 * geom.bbox_diagonal
        sizes = [3] + [hidden_width] * (layers - 1) + [num_handles]
        init_mlp(store, "eigen", sizes, rng, zero_last=zero_last)
        return cls(store, num_handles, center, scale, hidden_width, layers)

    def metadata(self) -> dict:
        return {
            "input_center": self.center.tolist(),
            "input_scale": self.scale,
        }


def eigenmode_forward(net: EigenmodeNet, geom: RestGeometry) -> Tensor:
    """Raw (N, J) weights; no normalization is imposed on the output."""
    x = Tensor((geom.points - net.center) / net.scale)
    return mlp(net.store, net.prefix, x, net.layers)


def init_handle_transforms(
    num_frames: int, num_handles: int, rng: np.random.Generator
) -> np.ndarray:
    """Identity transforms perturbed by small Gaussian noise, shape (T, J, 7)."""
    base = identity_transforms(num_frames, num_handles)
    return base + HANDLE_INIT_NOISE * rng.standard_normal(base.shape)


def _check_shapes(w, T, geom: RestGeometry):
    if w.ndim != 2 or w.shape[0] != geom.num_points:
        raise ContractViolation(f"weights must be (N, J) with N={geom.num_points}, got {w.shape}")
    if T.ndim < 2 or T.shape[-1] != 7 or T.shape[-2] != w.shape[1]:
        raise ContractViolation(f"transforms must be (..., J={w.shape[1]}, 7), got {T.shape}")


def handle_images(T, geom: RestGeometry) -> Tuple[Tensor, Tensor]:
    """
    Rotation matrices and per-handle images of every rest point.

    Returns R of shape (..., J, 3, 3) and P = R x + t of shape (..., J, N, 3).
    """
    T = ad.as_tensor(T)
    R = ad.quat_to_rotmat(ad.quat_normalize(T[..., :4]))
    t = T[..., 4:]
    P = ad.matmul(Tensor(geom.points), ad.swap_last(R))
    P = P + ad.reshape(t, t.shape[:-1] + (1, 3))
    return R, P


def _blend_points(w: Tensor, P: Tensor) -> Tensor:
    n, j = w.shape
    blend = ad.reshape(ad.swap_last(w), (j, n, 1))
    return ad.tsum(blend * P, axis=-3)


def apply_deformation(w, T, geom: RestGeometry) -> Tensor:
    """x_i = sum_j w_ij (R(q_j) x_i + t_j); T may carry leading frame axes."""
    w, T = ad.as_tensor(w), ad.as_tensor(T)
    _check_shapes(w, T, geom)
    _, P = handle_images(T, geom)
    return _blend_points(w, P)


def _blend_gradient(w: Tensor, g: Tensor, R: Tensor, P: Tensor) -> Tensor:
    j = w.shape[1]
    rotational = ad.matmul(w, ad.reshape(R, R.shape[:-2] + (9,)))  # (..., N, 9)
    rotational = ad.reshape(rotational, rotational.shape[:-1] + (3, 3))
    lead = P.ndim - 3
    P_t = ad.transpose(P, list(range(lead)) + [lead + 1, lead + 2, lead])  # (..., N, 3, J)
    outer = ad.matmul(P_t, g)  # sum_j P_ij (x) g_ij
    if g.shape[1] != j:
        raise ContractViolation("spatial gradient handle count does not match weights")
    return rotational + outer


def deformation_gradient(w, g, T, geom: RestGeometry) -> Tensor:
    """F_i = sum_j [w_ij R_j + (R_j x_i + t_j) (x) g_ij], shape (..., N, 3, 3)."""
    w, g, T = ad.as_tensor(w), ad.as_tensor(g), ad.as_tensor(T)
    _check_shapes(w, T, geom)
    if g.shape != w.shape + (3,):
        raise ContractViolation(f"spatial gradient must be (N, J, 3), got {g.shape}")
    R, P = handle_images(T, geom)
    return _blend_gradient(w, g, R, P)


def deform(w, g, T, geom: RestGeometry) -> Tuple[Tensor, Tensor]:
    """Positions and deformation gradients sharing one evaluation of the handle images."""
    w, g, T = ad.as_tensor(w), ad.as_tensor(g), ad.as_tensor(T)
    _check_shapes(w, T, geom)
    R, P = handle_images(T, geom)
    return _blend_points(w, P), _blend_gradient(w, g, R, P)


def right_cauchy_green(F) -> np.ndarray:
    F = np.asarray(F.data if isinstance(F, Tensor) else F)
    return np.einsum("...ki,...kj->...ij", F, F)


def ortho_loss(w) -> Tensor:
    """Mean over J^2 entries of ((W^T W) / N - I)^2."""
    w = ad.as_tensor(w)
    if w.ndim != 2:
        raise ContractViolation(f"ortho_loss expects (N, J) weights, got {w.shape}")
    n, j = w.shape
    gram = ad.matmul(ad.swap_last(w), w) / float(n)
    return ad.mean(ad.square(gram - np.eye(j)))


def deformation_state(
    w: np.ndarray, g: np.ndarray, T: np.ndarray, geom: RestGeometry, frame: Optional[int] = None
) -> DeformationState:
    """Untaped snapshot for reports; `frame` picks one frame from a (T, J, 7) stack."""
    T = np.asarray(T) if frame is None else np.asarray(T)[frame]
    with ad.no_tape():
        x, F = deform(w, g, T, geom)
    return DeformationState(w=np.asarray(w), g=np.asarray(g), x=x.data, F=F.data)
