"""
Tests for kNN queries, least-squares spatial gradients and distance metrics.
"""

import numpy as np
import pytest

from src.autodiff import tensor as ad
from src.autodiff.tensor import Tape, Tensor, backward, grad_of
from src.core.data_models import RestGeometry
from src.core.exceptions import ContractViolation
from src.core.geometry import (
    build_gradient_operator,
    chamfer_distance,
    chamfer_tensor,
    knn_build,
    l2_trajectory_distance,
    lsq_spatial_gradient,
    nearest_indices,
    subsample_points,
)
from src.services.oracle import central_difference


def brute_force_knn(points, K):
    n = len(points)
    out = np.zeros((n, K), dtype=np.int64)
    for i in range(n):
        d = np.linalg.norm(points - points[i], axis=1)
        d[i] = np.inf
        out[i] = np.lexsort((np.arange(n), d))[:K]
    return out


@pytest.mark.unit
class TestKnn:

    def test_square_corners(self):
        """Each corner's two neighbors are its edge-adjacent corners"""
        points = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
        index = knn_build(points, 2)
        np.testing.assert_array_equal(index.indices, [[1, 2], [0, 3], [0, 3], [1, 2]])
        np.testing.assert_allclose(index.distances, np.ones((4, 2)))

    def test_collinear_ties_go_to_lower_index(self):
        """Equidistant neighbors resolve to the lower point index"""
        points = np.zeros((6, 3))
        points[:, 0] = np.arange(6.0)
        index = knn_build(points, 1)
        np.testing.assert_array_equal(index.indices[:, 0], [1, 0, 1, 2, 3, 4])

    def test_matches_exhaustive_search(self):
        """Random cloud, K=20, identical to the O(N^2) scan"""
        points = np.random.default_rng(0).uniform(size=(100, 3))
        index = knn_build(points, 20)
        np.testing.assert_array_equal(index.indices, brute_force_knn(points, 20))

    def test_lattice_matches_exhaustive_search(self, lattice_geom):
        """Heavily tied lattice distances are still resolved by index"""
        index = knn_build(lattice_geom, 6)
        np.testing.assert_array_equal(index.indices, brute_force_knn(lattice_geom.points, 6))

    def test_invariants(self, cloud_geom):
        """No self neighbors, indices in range, distances nondecreasing"""
        index = knn_build(cloud_geom, 10)
        n = cloud_geom.num_points
        assert not np.any(index.indices == np.arange(n)[:, None])
        assert index.indices.max() < n
        assert np.all(np.diff(index.distances, axis=1) >= 0)

    def test_k_too_large(self, cloud_geom):
        """K >= N is a contract violation"""
        with pytest.raises(ContractViolation):
            knn_build(cloud_geom, cloud_geom.num_points)

    def test_neighborhoods_include_self(self):
        """neighborhoods() prepends each point's own index"""
        points = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
        table = knn_build(points, 2).neighborhoods()
        np.testing.assert_array_equal(table[:, 0], np.arange(4))
        assert table.shape == (4, 3)


@pytest.mark.unit
class TestSpatialGradient:

    def test_linear_field_is_exact(self):
        """w = 2x + 3y - z gives g = (2, 3, -1) to 1e-9"""
        points = np.random.default_rng(1).uniform(-1.0, 1.0, (300, 3))
        geom = RestGeometry.uniform(points)
        index = knn_build(geom, 20)
        w = (2.0 * points[:, 0] + 3.0 * points[:, 1] - points[:, 2])[:, None]
        g = lsq_spatial_gradient(w, geom, index)
        interior = np.all(np.abs(points) < 0.8, axis=1)
        err = np.abs(g[interior, 0] - np.array([2.0, 3.0, -1.0]))
        assert err.max() <= 1e-9

    def test_constant_field(self, cloud_geom):
        """A constant field has zero gradient"""
        index = knn_build(cloud_geom, 12)
        g = lsq_spatial_gradient(np.full((cloud_geom.num_points, 2), 4.2), cloud_geom, index)
        np.testing.assert_array_equal(g, 0.0)

    def test_jump_is_seen_only_across_the_jump(self):
        """Only neighborhoods straddling the two clusters report a large gradient"""
        rng = np.random.default_rng(2)
        a = rng.uniform(-0.5, 0.5, (30, 3))
        b = rng.uniform(-0.5, 0.5, (10, 3)) + np.array([5.0, 0.0, 0.0])
        geom = RestGeometry.uniform(np.concatenate([a, b]))
        index = knn_build(geom, 12)
        w = np.concatenate([np.zeros(30), np.ones(10)])[:, None]
        norms = np.linalg.norm(lsq_spatial_gradient(w, geom, index)[:, 0], axis=1)
        straddles = np.any((index.indices >= 30) != (np.arange(40) >= 30)[:, None], axis=1)
        assert straddles[30:].all() and not straddles[:30].any()
        assert np.all(norms[:30] < 1e-12)
        assert np.all(norms[30:] > 1e-2)

    def test_planar_neighborhoods_are_flagged(self):
        """Coplanar clouds are flagged and keep the in-plane gradient"""
        rng = np.random.default_rng(3)
        points = np.zeros((60, 3))
        points[:, :2] = rng.uniform(-1.0, 1.0, (60, 2))
        geom = RestGeometry(points, np.ones(60), np.ones(60))
        index = knn_build(geom, 10)
        op = build_gradient_operator(geom, index)
        assert op.flagged.all()
        w = (2.0 * points[:, 0] + 3.0 * points[:, 1])[:, None]
        g = lsq_spatial_gradient(w, geom, index, op)
        np.testing.assert_allclose(g[:, 0, :2], np.tile([2.0, 3.0], (60, 1)), atol=1e-6)
        np.testing.assert_allclose(g[:, 0, 2], 0.0, atol=1e-9)

    def test_taped_matches_numpy(self, cloud_geom):
        """The Tensor path reproduces the numpy path"""
        index = knn_build(cloud_geom, 8)
        w = np.random.default_rng(4).standard_normal((cloud_geom.num_points, 3))
        g_np = lsq_spatial_gradient(w, cloud_geom, index)
        g_ad = lsq_spatial_gradient(Tensor(w), cloud_geom, index)
        np.testing.assert_allclose(g_ad.data, g_np, rtol=1e-12, atol=1e-12)

    def test_gradient_flows_to_values(self):
        """Reverse-mode gradient w.r.t. the field matches finite differences"""
        rng = np.random.default_rng(5)
        geom = RestGeometry.uniform(rng.uniform(size=(25, 3)))
        index = knn_build(geom, 6)
        op = build_gradient_operator(geom, index)
        weights = Tensor(rng.standard_normal((25, 2, 3)))
        w0 = rng.standard_normal((25, 2))

        def f(w):
            return ad.tsum(ad.square(lsq_spatial_gradient(w, geom, index, op) * weights))

        w = Tensor(w0, requires_grad=True)
        with Tape() as tape:
            root = f(w)
        analytic = grad_of(backward(root, tape), w)
        numeric = central_difference(lambda v: f(Tensor(v)).item(), w0)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-6)

    def test_wrong_shape(self, cloud_geom):
        """Values must have one row per point"""
        index = knn_build(cloud_geom, 8)
        with pytest.raises(ContractViolation):
            lsq_spatial_gradient(np.zeros((3, 1)), cloud_geom, index)


@pytest.mark.unit
class TestDistances:

    def test_chamfer_identical(self, cloud_points):
        """Identical sets are at distance 0"""
        assert chamfer_distance(cloud_points, cloud_points) == 0.0

    def test_chamfer_single_points(self):
        """{(0,0,0)} vs {(1,0,0)} is 1 in each direction"""
        assert chamfer_distance([[0.0, 0.0, 0.0]], [[1.0, 0.0, 0.0]]) == 2.0

    def test_chamfer_symmetric(self, rng):
        """Swapping the arguments does not change the value"""
        a = rng.standard_normal((30, 3))
        b = rng.standard_normal((17, 3))
        assert chamfer_distance(a, b) == pytest.approx(chamfer_distance(b, a), rel=1e-14)

    def test_chamfer_empty(self):
        """Both sets must be nonempty"""
        with pytest.raises(ContractViolation):
            chamfer_distance(np.zeros((0, 3)), np.zeros((2, 3)))

    def test_chamfer_tensor_value_and_gradient(self, rng):
        """The taped Chamfer equals the metric and its gradient matches finite differences"""
        pred0 = rng.standard_normal((12, 3))
        target = rng.standard_normal((9, 3))
        pred = Tensor(pred0, requires_grad=True)
        with Tape() as tape:
            value = chamfer_tensor(pred, target)
        assert value.item() == pytest.approx(chamfer_distance(pred0, target), rel=1e-12)
        analytic = grad_of(backward(value, tape), pred)
        numeric = central_difference(lambda p: chamfer_distance(p, target), pred0)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-6)

    def test_nearest_ties_lowest_index(self):
        """Equidistant candidates resolve to the lowest index"""
        dst = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 5.0, 0.0]])
        assert nearest_indices(np.zeros((1, 3)), dst)[0] == 0

    def test_l2_identical(self, rng):
        """Identical trajectories are at distance 0"""
        a = rng.standard_normal((3, 5, 3))
        assert l2_trajectory_distance(a, a) == 0.0

    def test_l2_single_offset(self):
        """One point offset by (0, 0, 3) in one frame gives 9"""
        a = np.zeros((2, 4, 3))
        b = a.copy()
        b[1, 2] = [0.0, 0.0, 3.0]
        assert l2_trajectory_distance(a, b) == 9.0

    def test_l2_shape_mismatch(self):
        """Shapes must agree"""
        with pytest.raises(ContractViolation):
            l2_trajectory_distance(np.zeros((2, 4, 3)), np.zeros((2, 5, 3)))

    def test_chamfer_doubles_l2_on_single_points(self, rng):
        """On tracked one-point sets Chamfer is twice the per-frame L2"""
        a = rng.standard_normal((4, 1, 3))
        b = rng.standard_normal((4, 1, 3))
        chamfer = sum(chamfer_distance(a[t], b[t]) for t in range(4))
        assert chamfer == pytest.approx(2.0 * l2_trajectory_distance(a, b), rel=1e-12)

    def test_subsample(self, rng):
        """Subsampling keeps distinct rows and leaves small sets alone"""
        points = rng.standard_normal((50, 3))
        assert subsample_points(points, 100, rng) is points
        sub = subsample_points(points, 10, rng)
        assert sub.shape == (10, 3)
        assert len(np.unique(sub, axis=0)) == 10
