"""Self-adaptive loss: hand-evaluated cases, ascent dynamics, normalization."""

import numpy as np
import pytest

import operon.autodiff as ad
from operon.adaptive import (
    AdaptiveWeights,
    DegenerateWeightsError,
    adaptive_loss,
    normalize_lambdas,
    plain_mse_loss,
    update_lambdas,
)
from operon.nn import DimensionError, ParameterSet, compute_gradients


def rng(seed=0):
    return np.random.Generator(np.random.Philox(key=seed))


def loss_value(pred, target, weights):
    return float(adaptive_loss(ad.constant(pred), target, weights).value)


class TestAdaptiveLoss:
    def test_zero_residual(self):
        w = AdaptiveWeights.uniform(3)
        x = rng(1).normal(size=(4, 3))
        assert loss_value(x, x, w) == 0.0

    def test_hand_evaluated_two_points(self):
        # lam = (1, 1) => g = (1, 1); residuals (1, 2) => 1*1 + 1*4 = 5
        w = AdaptiveWeights(np.array([1.0, 1.0]))
        pred = np.array([[1.0, 2.0]])
        target = np.zeros((1, 2))
        assert loss_value(pred, target, w) == pytest.approx(5.0, abs=1e-14)

    def test_uniform_weights_reduce_to_mse(self):
        g = rng(2)
        pred, target = g.normal(size=(5, 6)), g.normal(size=(5, 6))
        w = AdaptiveWeights.uniform(6)
        mse = float(plain_mse_loss(ad.constant(pred), target).value)
        assert loss_value(pred, target, w) == pytest.approx(mse, rel=1e-12)

    def test_shape_mismatch(self):
        w = AdaptiveWeights.uniform(3)
        with pytest.raises(DimensionError):
            adaptive_loss(ad.constant(np.zeros((2, 4))), np.zeros((2, 4)), w)

    def test_gradient_equivalence_with_mse_under_uniform_weights(self):
        g = rng(3)
        ps = ParameterSet.from_arrays([("w", g.normal(size=(4,)))])
        x = g.normal(size=(5, 4))
        target = g.normal(size=(5, 1))
        weights = AdaptiveWeights.uniform(1)

        def forward(leaves):
            return ad.matmul_t(ad.constant(x), ad.reshape(leaves["w"], (1, 4)))

        g_adaptive = compute_gradients(
            lambda lv: adaptive_loss(forward(lv), target, weights), ps)
        g_mse = compute_gradients(
            lambda lv: plain_mse_loss(forward(lv), target), ps)
        np.testing.assert_allclose(g_adaptive, g_mse, rtol=1e-12)


class TestUpdate:
    def test_zero_residual_leaves_lambda_unchanged(self):
        w = AdaptiveWeights(np.array([0.7, 0.7]), learning_rate=0.1)
        pred = np.array([[1.0, 5.0]])
        target = np.array([[1.0, 2.0]])
        update_lambdas(w, pred, target)
        assert w.lambdas[0] == 0.7
        assert w.lambdas[1] > 0.7

    def test_hand_evaluated_ascent_step(self):
        # lam=1, r^2=0.5, eta=0.1: lam' = 1 + 0.1*2*1*0.5 = 1.1
        w = AdaptiveWeights(np.array([1.0]), learning_rate=0.1)
        update_lambdas(w, np.array([[np.sqrt(0.5)]]), np.array([[0.0]]))
        assert w.lambdas[0] == pytest.approx(1.1, abs=1e-14)

    def test_selective_ascent(self):
        w = AdaptiveWeights(np.array([1.0, 1.0]), learning_rate=0.05)
        update_lambdas(w, np.array([[1.0, 0.0]]), np.zeros((1, 2)))
        assert w.lambdas[0] > 1.0
        assert w.lambdas[1] == 1.0

    def test_batch_mean_of_squared_residuals(self):
        w = AdaptiveWeights(np.array([1.0]), learning_rate=1.0)
        pred = np.array([[1.0], [3.0]])  # squared residuals 1 and 9, mean 5
        update_lambdas(w, pred, np.zeros((2, 1)))
        assert w.lambdas[0] == pytest.approx(1.0 + 2.0 * 5.0, abs=1e-12)

    def test_positivity_preserved(self):
        g = rng(4)
        w = AdaptiveWeights.uniform(8, learning_rate=1e-2)
        for _ in range(50):
            pred = g.normal(size=(3, 8))
            update_lambdas(w, pred, np.zeros((3, 8)))
            normalize_lambdas(w)
            assert np.all(w.lambdas > 0)

    def test_lambda_gradient_matches_finite_differences(self):
        g = rng(5)
        lam = g.uniform(0.5, 1.5, size=6)
        pred = g.normal(size=(4, 6))
        target = g.normal(size=(4, 6))
        w = AdaptiveWeights(lam)
        from operon.adaptive import lambda_gradient
        r2 = np.mean((pred - target) ** 2, axis=0)
        analytic = lambda_gradient(w, r2)
        h = 1e-6
        for p in range(6):
            up = AdaptiveWeights(lam.copy())
            up.lambdas[p] += h
            dn = AdaptiveWeights(lam.copy())
            dn.lambdas[p] -= h
            numeric = (loss_value(pred, target, up) - loss_value(pred, target, dn)) / (2 * h)
            assert abs(analytic[p] - numeric) / max(abs(numeric), 1e-12) < 1e-6


class TestNormalize:
    def test_symmetric_pair(self):
        w = normalize_lambdas(AdaptiveWeights(np.array([1.0, 1.0])))
        np.testing.assert_allclose(w.lambdas, [1 / np.sqrt(2)] * 2, rtol=1e-15)
        assert np.sum(w.mask()) == pytest.approx(1.0, abs=1e-15)

    def test_three_four_five(self):
        w = normalize_lambdas(AdaptiveWeights(np.array([3.0, 4.0])))
        np.testing.assert_allclose(w.lambdas, [0.6, 0.8], rtol=1e-15)

    def test_idempotent(self):
        g = rng(6)
        w = AdaptiveWeights(g.uniform(0.1, 2.0, size=10))
        normalize_lambdas(w)
        first = w.lambdas.copy()
        normalize_lambdas(w)
        np.testing.assert_allclose(w.lambdas, first, rtol=0, atol=1e-15)

    def test_degenerate(self):
        with pytest.raises(DegenerateWeightsError):
            normalize_lambdas(AdaptiveWeights(np.zeros(3)))

    def test_argmax_invariant(self):
        g = rng(7)
        for _ in range(20):
            lam = g.uniform(0.01, 3.0, size=12)
            w = AdaptiveWeights(lam.copy())
            normalize_lambdas(w)
            assert np.argmax(w.lambdas) == np.argmax(lam)

    def test_mask_sums_to_one_after_epoch_cycle(self):
        g = rng(8)
        w = AdaptiveWeights.uniform(16)
        for _ in range(10):
            update_lambdas(w, g.normal(size=(5, 16)), np.zeros((5, 16)))
            normalize_lambdas(w)
            assert abs(np.sum(w.mask()) - 1.0) <= 1e-12


class TestMonotoneFocus:
    def test_harder_point_gains_relative_weight(self):
        w = AdaptiveWeights(np.array([0.7, 0.7]), learning_rate=1e-2)
        ratio = w.lambdas[0] / w.lambdas[1]
        # point A has strictly larger squared error in every batch
        for _ in range(5):
            update_lambdas(w, np.array([[2.0, 1.0]]), np.zeros((1, 2)))
            normalize_lambdas(w)
            new_ratio = w.lambdas[0] / w.lambdas[1]
            assert new_ratio > ratio
            ratio = new_ratio
