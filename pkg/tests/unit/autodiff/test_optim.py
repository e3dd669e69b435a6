"""
Tests for the parameter store, gradient clipping and Adam.
"""

import numpy as np
import pytest

from src.autodiff import tensor as ad
from src.autodiff.layers import init_dense, init_mlp
from src.autodiff.optim import ParamStore, adam_step, clip_grad_norm, global_grad_norm
from src.autodiff.tensor import Tape, backward
from src.core.exceptions import ContractViolation


@pytest.mark.unit
class TestParamStore:

    def test_add_and_moments(self):
        """Moments are created with the parameter's shape"""
        store = ParamStore("test")
        store.add("w", np.ones((2, 3)))
        assert store["w"].requires_grad
        assert store.m["w"].shape == (2, 3)
        assert store.v["w"].shape == (2, 3)
        assert store.step == 0

    def test_duplicate_key(self):
        """Parameter names are unique"""
        store = ParamStore()
        store.add("w", [1.0])
        with pytest.raises(ContractViolation):
            store.add("w", [2.0])

    def test_set_checks_shape(self):
        """set refuses a value of a different shape"""
        store = ParamStore()
        store.add("w", np.zeros(3))
        with pytest.raises(ContractViolation):
            store.set("w", np.zeros(4))

    def test_freeze(self):
        """Frozen parameters stop recording and ignore Adam"""
        store = ParamStore()
        store.add("w", [1.0])
        store.freeze()
        assert not store["w"].requires_grad
        adam_step(store, {"w": np.array([1.0])})
        assert store["w"].data[0] == 1.0
        assert store.step == 0

    def test_glorot_init_is_seeded(self):
        """Two stores built from the same seed are identical"""
        a, b = ParamStore(), ParamStore()
        init_mlp(a, "net", [3, 5, 2], np.random.default_rng(11))
        init_mlp(b, "net", [3, 5, 2], np.random.default_rng(11))
        for key in a.keys():
            np.testing.assert_array_equal(a[key].data, b[key].data)

    def test_zero_dense_with_bias(self):
        """A zero layer keeps its requested bias"""
        store = ParamStore()
        init_dense(store, "head", 4, 2, np.random.default_rng(0), zero=True, bias=[0.5, 0.5])
        np.testing.assert_array_equal(store["head.W"].data, np.zeros((4, 2)))
        np.testing.assert_array_equal(store["head.b"].data, [0.5, 0.5])


@pytest.mark.unit
class TestAdam:

    def test_zero_gradient_leaves_param(self):
        """Param 0 with grad 0 stays 0"""
        store = ParamStore()
        store.add("p", [0.0])
        adam_step(store, {"p": np.array([0.0])})
        assert store["p"].data[0] == 0.0

    def test_first_step_hand_value(self):
        """Param 1, grad 1, lr 1e-3 gives 0.999 after the bias-corrected first step"""
        store = ParamStore()
        store.add("p", [1.0])
        adam_step(store, {"p": np.array([1.0])}, lr=1e-3, betas=(0.9, 0.999), eps=1e-8)
        assert store["p"].data[0] == pytest.approx(0.999, abs=1e-10)
        assert store.step == 1

    def test_shared_step_count(self):
        """Every parameter in a store shares one step count"""
        store = ParamStore()
        store.add("a", [1.0])
        store.add("b", [2.0, 3.0])
        for _ in range(3):
            adam_step(store, {"a": np.array([0.1])})
        assert store.step == 3
        # b had no gradient; its moments stayed zero and it did not move
        np.testing.assert_array_equal(store["b"].data, [2.0, 3.0])

    def test_gradient_shape_mismatch(self):
        """Gradients must match their parameter's shape"""
        store = ParamStore()
        store.add("p", np.zeros(2))
        with pytest.raises(ContractViolation):
            adam_step(store, {"p": np.zeros(3)})

    def test_deterministic(self):
        """Identical inputs give bit-identical parameters"""

        def run():
            store = ParamStore()
            init_mlp(store, "net", [2, 4, 1], np.random.default_rng(5))
            x = np.random.default_rng(6).standard_normal((8, 2))
            for _ in range(5):
                with Tape() as tape:
                    h = ad.elu(ad.matmul(x, store["net.0.W"]) + store["net.0.b"])
                    root = ad.tsum(ad.square(ad.matmul(h, store["net.1.W"]) + store["net.1.b"]))
                adam_step(store, store.collect_grads(backward(root, tape)))
            return store.values()

        first, second = run(), run()
        for key in first:
            np.testing.assert_array_equal(first[key], second[key])

    def test_minimizes_quadratic(self):
        """Adam drives a quadratic toward its minimum"""
        store = ParamStore()
        store.add("p", [3.0, -2.0])
        for _ in range(2000):
            with Tape() as tape:
                root = ad.tsum(ad.square(store["p"] - 1.0))
            adam_step(store, store.collect_grads(backward(root, tape)), lr=1e-2)
        np.testing.assert_allclose(store["p"].data, [1.0, 1.0], atol=1e-2)


@pytest.mark.unit
class TestClipping:

    def test_global_norm(self):
        """The norm spans every group"""
        groups = [{"a": np.array([3.0])}, {"b": np.array([4.0])}]
        assert global_grad_norm(groups) == 5.0

    def test_clip_rescales_jointly(self):
        """Groups above the limit are scaled by the same factor"""
        groups = [{"a": np.array([3.0])}, {"b": np.array([4.0])}]
        clipped, norm = clip_grad_norm(groups, 1.0)
        assert norm == 5.0
        assert clipped[0]["a"][0] == pytest.approx(0.6)
        assert clipped[1]["b"][0] == pytest.approx(0.8)

    def test_below_limit_untouched(self):
        """Small gradients pass through unchanged"""
        groups = [{"a": np.array([0.1])}]
        clipped, _ = clip_grad_norm(groups, 10.0)
        assert clipped[0]["a"][0] == 0.1
