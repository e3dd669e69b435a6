"""
Neighborhood queries, least-squares spatial gradients and point-set distances.

The kNN and Chamfer queries are backed by scipy's cKDTree and then made
exact and deterministic: candidate distances are recomputed in float64 and
ties are broken by the lower point index.
"""

from typing import Optional, Union

import numpy as np
from scipy.spatial import cKDTree

from ..autodiff import tensor as ad
from ..autodiff.tensor import Tensor
from ..utils.logging import log_with_timestamp
from .data_models import KnnIndex, RestGeometry, SpatialGradientOperator
from .exceptions import ContractViolation

TIE_TOLERANCE = 1e-12
TIKHONOV_SCALE = 1e-8
RANK_TOLERANCE = 1e-10


def _as_points(value, name: str) -> np.ndarray:
    pts = np.asarray(value.points if isinstance(value, RestGeometry) else value, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ContractViolation(f"{name} must be an (N, 3) point set, got shape {pts.shape}")
    if pts.shape[0] == 0:
        raise ContractViolation(f"{name} must be nonempty")
    return pts


def _ordered_neighbors(points: np.ndarray, i: int, K: int):
    d = np.linalg.norm(points - points[i], axis=1)
    d[i] = np.inf
    order = np.lexsort((np.arange(len(points)), d))[:K]
    return order, d[order]


def knn_build(geom: Union[RestGeometry, np.ndarray], K: int) -> KnnIndex:
    """Exact K nearest neighbors of every rest point, excluding the point itself."""
    points = _as_points(geom, "rest points")
    n = len(points)
    if K < 1 or K >= n:
        raise ContractViolation(f"knn_build: need 1 <= K < N, got K={K}, N={n}")

    k = min(K + 2, n)
    _, cand = cKDTree(points).query(points, k=k)
    cand = np.asarray(cand, dtype=np.int64).reshape(n, k)

    dist = np.linalg.norm(points[cand] - points[:, None, :], axis=-1)
    dist[cand == np.arange(n)[:, None]] = np.inf
    order = np.lexsort((cand, dist), axis=-1)
    cand = np.take_along_axis(cand, order, axis=-1)
    dist = np.take_along_axis(dist, order, axis=-1)

    indices = cand[:, :K].copy()
    distances = dist[:, :K].copy()

    if k < n:
        # a tie at the K-th distance may continue outside the candidate set
        tied = dist[:, K] <= dist[:, K - 1] * (1.0 + TIE_TOLERANCE)
        for i in np.flatnonzero(tied):
            indices[i], distances[i] = _ordered_neighbors(points, i, K)

    return KnnIndex(indices=indices, distances=distances)


def build_gradient_operator(geom: RestGeometry, index: KnnIndex) -> SpatialGradientOperator:
    """
    Precompute per-point weights M_i such that g_i = M_i (v[nbrs] - v_i).

    The normal equations are damped with lambda = 1e-8 * (mean neighbor
    distance)^2 and refined with one iterated-Tikhonov step, which keeps
    affine fields exact to round-off while staying stable on flat
    neighborhoods.
    """
    if index.num_points != geom.num_points:
        raise ContractViolation("kNN index was built on a different geometry")

    points = geom.points
    D = points[index.indices] - points[:, None, :]  # (N, K, 3)
    A = np.einsum("nki,nkj->nij", D, D)
    lam = TIKHONOV_SCALE * np.mean(index.distances, axis=1) ** 2
    S = np.linalg.inv(A + lam[:, None, None] * np.eye(3))
    refine = S + lam[:, None, None] * np.matmul(S, S)
    weights = np.matmul(refine, np.swapaxes(D, 1, 2))  # (N, 3, K)

    eig = np.linalg.eigvalsh(A)
    flagged = eig[:, 0] <= RANK_TOLERANCE * np.maximum(eig[:, -1], np.finfo(float).tiny)
    if flagged.any():
        log_with_timestamp(
            f"⚠ Geometry: {int(flagged.sum())} rank-deficient neighborhoods, "
            "gradients restricted to their span"
        )
    return SpatialGradientOperator(index=index, weights=weights, flagged=flagged)


def lsq_spatial_gradient(
    values,
    geom: RestGeometry,
    index: KnnIndex,
    operator: Optional[SpatialGradientOperator] = None,
):
    """
    Least-squares gradient of an (N, J) field over each point's kNN.

    Returns (N, J, 3). A Tensor input gives a taped Tensor output whose
    gradient reaches the field values; point positions are constants.
    """
    op = operator or build_gradient_operator(geom, index)
    if not isinstance(values, Tensor):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != geom.num_points:
            raise ContractViolation(f"values must be (N, J), got {values.shape}")
        return op.apply(values)

    if values.ndim != 2 or values.shape[0] != geom.num_points:
        raise ContractViolation(f"values must be (N, J), got {values.shape}")
    n, j = values.shape
    diffs = ad.getitem(values, index.indices) - ad.reshape(values, (n, 1, j))  # (N, K, J)
    return ad.swap_last(ad.matmul(Tensor(op.weights), diffs))


def nearest_indices(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Index into dst of the nearest point to each src point, lowest index on ties."""
    k = min(2, len(dst))
    d, idx = cKDTree(dst).query(src, k=k)
    if k == 1:
        return np.asarray(idx, dtype=np.int64).reshape(-1)
    best = idx[:, 0].astype(np.int64)
    tied = d[:, 1] <= d[:, 0] * (1.0 + TIE_TOLERANCE)
    for i in np.flatnonzero(tied):
        sq = np.sum((dst - src[i]) ** 2, axis=1)
        best[i] = int(np.flatnonzero(sq <= sq.min() * (1.0 + TIE_TOLERANCE))[0])
    return best


def chamfer_distance(a, b) -> float:
    """Sum of squared nearest-neighbor distances in both directions."""
    a = _as_points(a, "chamfer_distance: first set")
    b = _as_points(b, "chamfer_distance: second set")
    d_ab, _ = cKDTree(b).query(a, k=1)
    d_ba, _ = cKDTree(a).query(b, k=1)
    return float(np.sum(np.square(d_ab)) + np.sum(np.square(d_ba)))


def chamfer_tensor(pred: Tensor, target: np.ndarray) -> Tensor:
    """
    Differentiable Chamfer distance of predicted points to a fixed target set.

    Correspondences are found on detached values; the squared distances are
    then evaluated on the tape so gradients reach pred.
    """
    target = _as_points(target, "chamfer target")
    pred_np = _as_points(pred.data, "chamfer prediction")
    to_target = nearest_indices(pred_np, target)
    to_pred = nearest_indices(target, pred_np)
    forward = ad.tsum(ad.square(pred - Tensor(target[to_target])))
    backward = ad.tsum(ad.square(ad.getitem(pred, to_pred) - Tensor(target)))
    return forward + backward


def l2_trajectory_distance(a, b) -> float:
    """Sum over frames and points of squared position differences."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation(f"l2_trajectory_distance: shapes differ, {a.shape} vs {b.shape}")
    return float(np.sum(np.square(a - b)))


def subsample_points(points: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random subsample without replacement; returns the input when small enough."""
    if len(points) <= size:
        return points
    keep = np.sort(rng.choice(len(points), size=size, replace=False))
    return points[keep]
