"""Self-adaptive weighted squared-error loss.

One positive multiplier per spatiotemporal evaluation point, shared across
samples. The loss weighs squared residuals by the mask g(lam) = lam^2; the
multipliers are driven uphill by the analytic loss gradient (gradient ascent,
so training concentrates on the hardest points) and rescaled after every
epoch so the mask values sum to one.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .nn import DimensionError


class DegenerateWeightsError(RuntimeError):
    """All multipliers vanished; normalization is undefined."""


class AdaptiveWeights:
    """Per-point multipliers lam > 0 with mask g(lam) = lam^2 and ascent rate."""

    def __init__(self, lambdas, learning_rate: float = 1e-3):
        self.lambdas = np.asarray(lambdas, dtype=np.float64).copy()
        if self.lambdas.ndim != 1:
            raise DimensionError("lambdas must be a flat vector")
        self.learning_rate = float(learning_rate)

    @classmethod
    def uniform(cls, n_points: int, learning_rate: float = 1e-3) -> "AdaptiveWeights":
        """Start at lam = 1/sqrt(j): mask values sum to one and weigh uniformly."""
        return cls(np.full(n_points, 1.0 / np.sqrt(n_points)), learning_rate)

    def __len__(self) -> int:
        return self.lambdas.size

    def mask(self) -> np.ndarray:
        """g(lam) = lam^2, the actual per-point loss weights."""
        return self.lambdas ** 2


def adaptive_loss(pred: ad.Var, target: np.ndarray, weights: AdaptiveWeights) -> ad.Var:
    """(1/N) sum_samples sum_points g(lam_p) * (u_p - pred_p)^2 as a tape node."""
    target = np.asarray(target, dtype=np.float64)
    if pred.value.shape != target.shape:
        raise DimensionError(f"prediction {pred.value.shape} vs target {target.shape}")
    if pred.value.ndim != 2 or pred.value.shape[1] != len(weights):
        raise DimensionError(
            f"expected [batch, {len(weights)}] predictions, got {pred.value.shape}")
    r = ad.sub(pred, ad.constant(target))
    weighted = ad.mul(ad.mul(r, r), ad.constant(weights.mask()))
    return ad.scale(ad.sum_all(weighted), 1.0 / pred.value.shape[0])


def plain_mse_loss(pred: ad.Var, target: np.ndarray) -> ad.Var:
    """Unweighted mean squared error over all entries, as a tape node."""
    target = np.asarray(target, dtype=np.float64)
    if pred.value.shape != target.shape:
        raise DimensionError(f"prediction {pred.value.shape} vs target {target.shape}")
    r = ad.sub(pred, ad.constant(target))
    return ad.scale(ad.sum_all(ad.mul(r, r)), 1.0 / pred.value.size)


def lambda_gradient(weights: AdaptiveWeights, residual_sq_mean: np.ndarray) -> np.ndarray:
    """d(loss)/d(lam_p) = g'(lam_p) * mean-over-batch residual_p^2."""
    return 2.0 * weights.lambdas * residual_sq_mean


def update_lambdas(weights: AdaptiveWeights, pred: np.ndarray, target: np.ndarray) -> AdaptiveWeights:
    """One gradient-ascent step on the multipliers from a batch of residuals."""
    residual_sq_mean = np.mean((np.asarray(pred) - np.asarray(target)) ** 2, axis=0)
    if residual_sq_mean.shape != weights.lambdas.shape:
        raise DimensionError(
            f"residuals per point {residual_sq_mean.shape} vs lambdas {weights.lambdas.shape}")
    weights.lambdas += weights.learning_rate * lambda_gradient(weights, residual_sq_mean)
    return weights


def normalize_lambdas(weights: AdaptiveWeights) -> AdaptiveWeights:
    """Rescale so the mask sums to one: sum lam^2 = 1. Preserves ordering."""
    norm = np.sqrt(np.sum(weights.lambdas ** 2))
    if norm == 0.0 or not np.isfinite(norm):
        raise DegenerateWeightsError(f"cannot normalize multipliers with norm {norm}")
    weights.lambdas /= norm
    return weights
