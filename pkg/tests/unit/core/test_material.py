"""
Tests for material features, the stiffness network and Lame conversions.
"""

import numpy as np
import pytest

from src.autodiff import tensor as ad
from src.autodiff.optim import ParamStore
from src.autodiff.tensor import Tape, Tensor, backward
from src.core.data_models import MaterialFeatures, RestGeometry
from src.core.exceptions import ContractViolation
from src.core.geometry import knn_build
from src.core.linalg import identity_transforms
from src.core.material import (
    MaterialNet,
    alpha_from_E,
    assemble_features,
    feature_dim,
    lame_from_E,
    material_forward,
)
from src.services.oracle import central_difference


def line_points(n):
    points = np.zeros((n, 3))
    points[:, 0] = np.arange(float(n))
    return points


def small_net(geom, num_handles=2, seed=0, **kwargs):
    params = dict(hidden_width=8, blocks=1, global_tokens=16)
    params.update(kwargs)
    return MaterialNet.create(ParamStore(), geom, num_handles, np.random.default_rng(seed), **params)


def random_features(geom, num_handles, seed):
    values = np.random.default_rng(seed).standard_normal((geom.num_points, feature_dim(num_handles)))
    return MaterialFeatures(values=Tensor(values), num_handles=num_handles)


@pytest.mark.unit
class TestFeatures:

    def test_feature_length(self):
        """5J + 8 entries per point"""
        assert feature_dim(4) == 28

    def test_constant_field_gives_constant_rows(self, lattice_geom):
        """Constant w with zero history: every row identical, variance zero"""
        index = knn_build(lattice_geom, 6)
        w = np.full((lattice_geom.num_points, 2), 0.3)
        g = np.zeros((lattice_geom.num_points, 2, 3))
        feats = assemble_features(w, g, None, identity_transforms(2), index)
        values = feats.values.data
        assert values.shape == (lattice_geom.num_points, 18)
        np.testing.assert_array_equal(values, np.broadcast_to(values[0], values.shape))
        np.testing.assert_array_equal(values[:, 8:10], 0.0)

    def test_variance_peaks_at_the_jump(self):
        """Only the two points straddling the weight jump see variance"""
        points = line_points(10)
        index = knn_build(points, 2)
        w = (points[:, :1] >= 5).astype(float)
        feats = assemble_features(w, np.zeros((10, 1, 3)), None, identity_transforms(1), index)
        variance = feats.values.data[:, 4]
        assert set(np.flatnonzero(variance > 0)) == {4, 5}

    def test_handle_summary_uses_unit_quaternions(self, lattice_geom):
        """Summary is w @ T_ref with the quaternion normalized"""
        index = knn_build(lattice_geom, 6)
        w = np.ones((lattice_geom.num_points, 1))
        T_ref = np.array([[2.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0]])
        feats = assemble_features(w, np.zeros((lattice_geom.num_points, 1, 3)), None, T_ref, index)
        np.testing.assert_allclose(feats.values.data[0, 5:12], [1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0])

    def test_previous_energy_is_log_compressed(self, lattice_geom):
        """W_prev enters as sign(W) log(1 + |W|)"""
        index = knn_build(lattice_geom, 6)
        n = lattice_geom.num_points
        W_prev = np.linspace(0.0, 100.0, n)
        feats = assemble_features(np.ones((n, 1)), np.zeros((n, 1, 3)), W_prev, identity_transforms(1), index)
        np.testing.assert_allclose(feats.values.data[:, -1], np.log1p(W_prev), rtol=1e-14)

    @pytest.mark.parametrize(
        "group,columns", [("w", slice(0, 2)), ("g", slice(2, 8)), ("W_prev", slice(17, 18))]
    )
    def test_ablation_zeroes_group(self, lattice_geom, group, columns):
        """Ablated feature groups are replaced by zeros"""
        rng = np.random.default_rng(0)
        n = lattice_geom.num_points
        index = knn_build(lattice_geom, 6)
        feats = assemble_features(
            rng.standard_normal((n, 2)),
            rng.standard_normal((n, 2, 3)),
            rng.uniform(1.0, 2.0, n),
            identity_transforms(2),
            index,
            ablation=[group],
        )
        np.testing.assert_array_equal(feats.values.data[:, columns], 0.0)

    def test_reference_transform_shape_checked(self, lattice_geom):
        """T_ref must be (J, 7)"""
        index = knn_build(lattice_geom, 6)
        n = lattice_geom.num_points
        with pytest.raises(ContractViolation):
            assemble_features(np.ones((n, 2)), np.zeros((n, 2, 3)), None, identity_transforms(3), index)


@pytest.mark.unit
class TestMaterialForward:

    def test_zero_head_gives_uniform_field(self, cloud_geom):
        """E = E_min + softplus(0) E_scale everywhere at initialization"""
        net = small_net(cloud_geom)
        index = knn_build(cloud_geom, 6)
        E = material_forward(net, cloud_geom, random_features(cloud_geom, 2, 1), index).data
        expected = net.youngs_min + np.log(2.0) * net.youngs_scale
        np.testing.assert_allclose(E, np.full((cloud_geom.num_points, 4), expected), rtol=1e-12)

    def test_head_bias_sets_initial_stiffness(self, cloud_geom):
        """A nonzero head bias shifts the uniform initial field"""
        net = small_net(cloud_geom, head_bias=1.5, youngs_min=0.1, youngs_scale=2.0)
        index = knn_build(cloud_geom, 6)
        E = material_forward(net, cloud_geom, random_features(cloud_geom, 2, 1), index).data
        np.testing.assert_allclose(E, 0.1 + 2.0 * np.logaddexp(0.0, 1.5), rtol=1e-12)

    def test_outputs_stay_above_floor(self, cloud_geom):
        """Large negative head outputs still respect E_min"""
        net = small_net(cloud_geom, youngs_min=0.01, youngs_scale=1.0)
        net.store.set("material.head.W", -50.0 * np.abs(np.random.default_rng(2).standard_normal((8, 4))))
        index = knn_build(cloud_geom, 6)
        E = material_forward(net, cloud_geom, random_features(cloud_geom, 2, 3), index).data
        assert E.shape == (cloud_geom.num_points, 4)
        assert np.all(E >= 0.01)

    def test_point_permutation_equivariance(self):
        """Permuting points permutes the stiffness rows"""
        rng = np.random.default_rng(12)
        geom = RestGeometry.uniform(rng.uniform(-1.0, 1.0, (16, 3)))
        perm = rng.permutation(16)
        permuted = RestGeometry.uniform(geom.points[perm])

        net = small_net(geom, youngs_scale=1.0)
        net.store.set("material.head.W", rng.standard_normal((8, 4)))
        feats = rng.standard_normal((16, feature_dim(2)))

        E = material_forward(net, geom, MaterialFeatures(Tensor(feats), 2), knn_build(geom, 5)).data
        E_perm = material_forward(
            net, permuted, MaterialFeatures(Tensor(feats[perm]), 2), knn_build(permuted, 5)
        ).data
        np.testing.assert_allclose(E_perm, E[perm], rtol=1e-10)

    def test_global_tokens_are_strided(self, cloud_geom):
        """More points than tokens: an evenly strided subset including both ends"""
        net = small_net(cloud_geom, global_tokens=16)
        tokens = net.token_indices(120)
        assert len(tokens) == 16
        assert tokens[0] == 0 and tokens[-1] == 119
        assert np.all(np.diff(tokens) > 0)
        np.testing.assert_array_equal(net.token_indices(10), np.arange(10))

    def test_without_attention(self, cloud_geom):
        """The attention ablation still produces a positive field"""
        net = small_net(cloud_geom, use_attention=False)
        assert net.blocks == 0
        index = knn_build(cloud_geom, 6)
        E = material_forward(net, cloud_geom, random_features(cloud_geom, 2, 4), index)
        assert E.shape == (cloud_geom.num_points, 4)

    def test_feature_shape_checked(self, cloud_geom):
        """Features built for another handle count are rejected"""
        net = small_net(cloud_geom)
        index = knn_build(cloud_geom, 6)
        with pytest.raises(ContractViolation):
            material_forward(net, cloud_geom, random_features(cloud_geom, 3, 0), index)

    def test_index_from_other_geometry_rejected(self, cloud_geom, lattice_geom):
        """The kNN index must match the geometry"""
        net = small_net(cloud_geom)
        with pytest.raises(ContractViolation):
            material_forward(net, cloud_geom, random_features(cloud_geom, 2, 0), knn_build(lattice_geom, 6))

    def test_parameter_gradient_through_attention(self):
        """Gradients of E reach the feature embedding and match finite differences"""
        rng = np.random.default_rng(21)
        geom = RestGeometry.uniform(rng.uniform(-1.0, 1.0, (12, 3)))
        index = knn_build(geom, 4)
        net = small_net(geom, youngs_scale=1.0, hidden_width=6)
        net.store.set("material.head.W", 0.5 * rng.standard_normal((6, 4)))
        feats = MaterialFeatures(Tensor(rng.standard_normal((12, feature_dim(2)))), 2)
        projection = rng.standard_normal((12, 4))

        def loss():
            return ad.tsum(material_forward(net, geom, feats, index) * projection)

        with Tape() as tape:
            root = loss()
        analytic = net.store.collect_grads(backward(root, tape))["material.feature.W"]

        W0 = net.store["material.feature.W"].data.copy()

        def perturbed(W):
            net.store.set("material.feature.W", W)
            return loss().item()

        numeric = central_difference(perturbed, W0)
        net.store.set("material.feature.W", W0)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)


@pytest.mark.unit
class TestLame:

    def test_quarter_poisson(self):
        """E=1, nu=0.25 gives mu=0.4, lambda=0.4"""
        mu, lam = lame_from_E(1.0, 0.25)
        assert mu == pytest.approx(0.4, abs=1e-15)
        assert lam == pytest.approx(0.4, abs=1e-15)

    def test_zero_poisson(self):
        """E=1, nu=0 gives mu=0.5, lambda=0"""
        mu, lam = lame_from_E(1.0, 0.0)
        assert mu == pytest.approx(0.5, abs=1e-15)
        assert lam == 0.0

    def test_alpha_of_zero_stiffness(self):
        """alpha_k = 0 when E_k = 0"""
        assert alpha_from_E(0.0, 0.45) == 0.0

    def test_elementwise_over_points(self):
        """Arrays map entry by entry"""
        mu, lam = lame_from_E(np.array([1.0, 2.0]), 0.25)
        np.testing.assert_allclose(mu, [0.4, 0.8])
        np.testing.assert_allclose(lam, [0.4, 0.8])

    def test_lambda_grows_toward_incompressibility(self):
        """lambda increases without bound as nu approaches 0.5"""
        lams = [lame_from_E(1.0, nu)[1] for nu in (0.3, 0.4, 0.45, 0.49, 0.499)]
        assert all(b > a for a, b in zip(lams, lams[1:]))
        assert lams[-1] > 100.0

    @pytest.mark.parametrize("nu", [0.5, 0.7, -0.1])
    def test_invalid_poisson_ratio(self, nu):
        """nu outside [0, 0.5) is a contract violation"""
        with pytest.raises(ContractViolation):
            lame_from_E(1.0, nu)
        with pytest.raises(ContractViolation):
            alpha_from_E(1.0, nu)
