"""
Finite-difference oracles and the energy golden file.

Golden rows hold a deformation gradient, its material parameters, the energy
density and the central-difference stress of that density. The analytic
stress and Hessian in src.core.energy are checked against these rows.
"""

from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd

from ..core.energy import psi_total, stress_dPsi_dF
from ..core.exceptions import ContractViolation, SceneParseError
from ..utils.logging import log_with_timestamp

FD_STEP = 1e-6
MIN_DET = 0.3
F_COLUMNS = [f"F{i}{j}" for i in range(3) for j in range(3)]
STRESS_COLUMNS = [f"P{i}{j}" for i in range(3) for j in range(3)]
GOLDEN_COLUMNS = F_COLUMNS + ["mu", "lam", "alpha_x", "alpha_y", "alpha_z", "psi"] + STRESS_COLUMNS


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Gradient of a scalar function by central differences, same shape as x."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, out = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = fn(x)
        flat[i] = keep - h
        down = fn(x)
        flat[i] = keep
        out[i] = (up - down) / (2.0 * h)
    return grad


def sample_deformation_gradients(
    rng: np.random.Generator, count: int, spread: float = 0.3, min_det: float = MIN_DET
) -> np.ndarray:
    """Random F = I + spread * N(0, 1), rejecting det F <= min_det."""
    out = []
    while len(out) < count:
        F = np.eye(3) + spread * rng.standard_normal((3, 3))
        if np.linalg.det(F) > min_det:
            out.append(F)
    return np.array(out).reshape(count, 3, 3)


def fd_stress(F: np.ndarray, mu: float, lam: float, alpha, corrected: bool = False, h: float = FD_STEP):
    return central_difference(lambda G: float(psi_total(G, mu, lam, alpha, corrected)), F, h)


def fd_hessian(F: np.ndarray, mu: float, lam: float, alpha, corrected: bool = False, h: float = FD_STEP):
    """9x9 central-difference Jacobian of the analytic stress, row-major vec(F)."""
    F = np.array(F, dtype=np.float64)
    H = np.zeros((9, 9))
    for c in range(9):
        step = np.zeros(9)
        step[c] = h
        up = stress_dPsi_dF(F + step.reshape(3, 3), mu, lam, alpha, corrected)
        down = stress_dPsi_dF(F - step.reshape(3, 3), mu, lam, alpha, corrected)
        H[:, c] = ((up - down) / (2.0 * h)).reshape(9)
    return H


def generate_energy_golden(
    rng: np.random.Generator, count: int = 100, corrected: bool = False
) -> pd.DataFrame:
    if count < 1:
        raise ContractViolation(f"golden file needs at least one row, got {count}")
    rows = []
    for F in sample_deformation_gradients(rng, count):
        mu, lam = rng.uniform(0.1, 2.0, 2)
        alpha = rng.uniform(0.0, 2.0, 3)
        psi = float(psi_total(F, mu, lam, alpha, corrected))
        P = fd_stress(F, mu, lam, alpha, corrected)
        rows.append(np.concatenate([F.reshape(9), [mu, lam], alpha, [psi], P.reshape(9)]))
    return pd.DataFrame(rows, columns=GOLDEN_COLUMNS)


def write_golden(path, table: pd.DataFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    log_with_timestamp(f"✓ Oracle: wrote {len(table)} golden rows to {path}")
    return path


def load_golden(path) -> pd.DataFrame:
    try:
        table = pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError:
        raise SceneParseError(path, "golden file not found")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise SceneParseError(path, f"malformed golden file: {e}")
    missing = [c for c in GOLDEN_COLUMNS if c not in table.columns]
    if missing:
        raise SceneParseError(path, f"golden file lacks columns {', '.join(missing)}", line=1)
    return table


def golden_row(table: pd.DataFrame, i: int):
    """(F, mu, lam, alpha, psi, P) of row i."""
    row = table.iloc[i]
    F = row[F_COLUMNS].to_numpy(dtype=np.float64).reshape(3, 3)
    alpha = row[["alpha_x", "alpha_y", "alpha_z"]].to_numpy(dtype=np.float64)
    P = row[STRESS_COLUMNS].to_numpy(dtype=np.float64).reshape(3, 3)
    return F, float(row["mu"]), float(row["lam"]), alpha, float(row["psi"]), P
