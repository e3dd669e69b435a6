"""
Anisotropic Neo-Hookean energy density with analytic stress and Hessian.

    psi_iso   = mu/2 (tr C - 3) + lam/2 (J - 1)^2        [- mu ln J when corrected]
    psi_aniso = sum_k alpha_k/2 (a_k^T C a_k - 1)^2,     a_k = world axes

All numpy functions broadcast over leading batch axes: F is (..., 3, 3),
mu and lam are (...), alpha is (..., 3). Hessians use row-major vec(F),
index 3 * row + col.
"""

import numpy as np

from ..autodiff import tensor as ad
from ..autodiff.tensor import Tensor
from .data_models import DeformationState, EnergyDensityReport, RestGeometry
from .exceptions import NumericFailure
from .linalg import LEVI_CIVITA, cofactor3, det3
from .material import alpha_from_E, lame_from_E


def _arr(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def axis_stretch(F: np.ndarray) -> np.ndarray:
    """I4 per world axis, a_k^T C a_k = squared norm of column k of F."""
    return np.sum(F * F, axis=-2)


def psi_iso(F, mu, lam, corrected: bool = False) -> np.ndarray:
    F = _arr(F)
    J = det3(F)
    psi = 0.5 * _arr(mu) * (np.sum(F * F, axis=(-2, -1)) - 3.0) + 0.5 * _arr(lam) * (J - 1.0) ** 2
    if corrected:
        with np.errstate(invalid="ignore", divide="ignore"):
            psi = psi - _arr(mu) * np.log(J)
    return psi


def psi_aniso(F, alpha) -> np.ndarray:
    I4 = axis_stretch(_arr(F))
    return np.sum(0.5 * _arr(alpha) * (I4 - 1.0) ** 2, axis=-1)


def psi_total(F, mu, lam, alpha, corrected: bool = False) -> np.ndarray:
    return psi_iso(F, mu, lam, corrected) + psi_aniso(F, alpha)


def stress_dPsi_dF(F, mu, lam, alpha, corrected: bool = False) -> np.ndarray:
    """dPsi/dF, shape (..., 3, 3)."""
    F = _arr(F)
    mu = _arr(mu)[..., None, None]
    lam = _arr(lam)[..., None, None]
    cof = cofactor3(F)
    J = det3(F)[..., None, None]

    P = mu * F + lam * (J - 1.0) * cof
    if corrected:
        P = P - mu * cof / J
    # F (a_k a_k^T) keeps only column k of F
    coeff = 2.0 * _arr(alpha) * (axis_stretch(F) - 1.0)
    return P + F * coeff[..., None, :]


def _det_hessian(F: np.ndarray) -> np.ndarray:
    """d^2 det(F) / dF^2 in row-major vec ordering, shape (..., 9, 9)."""
    H = np.einsum("ack,bdn,...kn->...abcd", LEVI_CIVITA, LEVI_CIVITA, F)
    return H.reshape(F.shape[:-2] + (9, 9))


def hessian_dPsi_dF2(F, mu, lam, alpha, corrected: bool = False) -> np.ndarray:
    """d^2 Psi / dvec(F)^2, shape (..., 9, 9), symmetric."""
    F = _arr(F)
    mu = _arr(mu)[..., None, None]
    lam = _arr(lam)[..., None, None]
    alpha = _arr(alpha)
    batch = F.shape[:-2]

    cof = cofactor3(F).reshape(batch + (9,))
    J = det3(F)[..., None, None]
    cof_outer = cof[..., :, None] * cof[..., None, :]
    H_det = _det_hessian(F)

    H = mu * np.eye(9) + lam * cof_outer + lam * (J - 1.0) * H_det
    if corrected:
        H = H - mu * (H_det / J - cof_outer / (J * J))

    I4 = axis_stretch(F)
    for k in range(3):
        A = np.zeros((3, 3))
        A[k, k] = 1.0
        FA = np.zeros_like(F)
        FA[..., :, k] = F[..., :, k]
        FA = FA.reshape(batch + (9,))
        a_k = alpha[..., k, None, None]
        H = H + 4.0 * a_k * FA[..., :, None] * FA[..., None, :]
        H = H + 2.0 * a_k * (I4[..., k, None, None] - 1.0) * np.kron(np.eye(3), A)
    return H


def material_parameters(E_field, nu: float):
    """Per-point (mu, lam, alpha) from an (N, 4) stiffness field; arrays or Tensors."""
    if isinstance(E_field, Tensor):
        E_iso, E_aniso = E_field[:, 0], E_field[:, 1:]
    else:
        E_field = _arr(E_field)
        E_iso, E_aniso = E_field[:, 0], E_field[:, 1:]
    mu, lam = lame_from_E(E_iso, nu)
    return mu, lam, alpha_from_E(E_aniso, nu)


def energy_density_tensor(F: Tensor, mu, lam, alpha, corrected: bool = False):
    """Taped psi_iso and psi_aniso for F of shape (..., N, 3, 3); returns two (..., N) Tensors."""
    J = ad.det3(F)
    trC = ad.tsum(ad.square(F), axis=(-2, -1))
    iso = mu * 0.5 * (trC - 3.0) + lam * 0.5 * ad.square(J - 1.0)
    if corrected:
        iso = iso - mu * ad.log(J)
    I4 = ad.tsum(ad.square(F), axis=-2)
    aniso = ad.tsum(alpha * 0.5 * ad.square(I4 - 1.0), axis=-1)
    return iso, aniso


def total_energy(
    state: DeformationState, E_field, nu: float, geom: RestGeometry, corrected: bool = False
) -> EnergyDensityReport:
    """Per-point densities and the volume-weighted total."""
    mu, lam, alpha = material_parameters(E_field, nu)
    W_iso = psi_iso(state.F, mu, lam, corrected)
    W_aniso = psi_aniso(state.F, alpha)
    W_total = W_iso + W_aniso

    bad = np.flatnonzero(~np.isfinite(W_total))
    if bad.size:
        raise NumericFailure("total_energy", "non-finite energy density", index=int(bad[0]))
    total = float(np.sum(geom.volume_per_point * W_total))
    return EnergyDensityReport(W_iso=W_iso, W_aniso=W_aniso, W_total=W_total, total=total)
