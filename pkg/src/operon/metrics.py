"""Per-sample error metrics (MAE, RMSE, RSE) and test-set aggregation.

Metrics are computed over every entry of a sample's predicted trajectory
(the t = 0 frame is never predicted; it is the model input) and then
aggregated as mean and standard deviation across samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import DimensionError


class DegenerateTargetError(ValueError):
    """Relative squared error is undefined for a constant ground truth."""


def _flat_pair(y, y_hat):
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.size != y_hat.size:
        raise DimensionError(f"length mismatch: {y.size} vs {y_hat.size}")
    if y.size == 0:
        raise DimensionError("metrics need at least one entry")
    return y, y_hat


def mae(y, y_hat) -> float:
    y, y_hat = _flat_pair(y, y_hat)
    return float(np.mean(np.abs(y - y_hat)))


def rmse(y, y_hat) -> float:
    y, y_hat = _flat_pair(y, y_hat)
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def rse(y, y_hat) -> float:
    """Total squared error normalized by total squared deviation from the mean."""
    y, y_hat = _flat_pair(y, y_hat)
    denom = np.sum((y - np.mean(y)) ** 2)
    if denom <= 0.0:
        raise DegenerateTargetError("ground truth is constant; RSE denominator vanishes")
    return float(np.sum((y - y_hat) ** 2) / denom)


@dataclass(frozen=True)
class MetricReport:
    """Per-sample metric vectors plus their mean / standard deviation."""

    mae_per_sample: np.ndarray
    rmse_per_sample: np.ndarray
    rse_per_sample: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.mae_per_sample.size

    def mean(self, name: str) -> float:
        return float(np.mean(getattr(self, f"{name}_per_sample")))

    def std(self, name: str) -> float:
        values = getattr(self, f"{name}_per_sample")
        # identical values have zero spread by definition; np.std would return
        # summation noise (~1e-17) because their mean is not bitwise the value
        if np.all(values == values[0]):
            return 0.0
        return float(np.std(values))

    def summary(self) -> dict:
        return {name: (self.mean(name), self.std(name)) for name in ("mae", "rmse", "rse")}

    def __str__(self):
        parts = [f"{name}={m:.6f}+/-{s:.6f}" for name, (m, s) in self.summary().items()]
        return f"MetricReport(n={self.n_samples}, {', '.join(parts)})"


def evaluate_predictions(y_true: np.ndarray, y_pred: np.ndarray) -> MetricReport:
    """Per-sample metrics for [N, ...] arrays of matching shape, in physical units."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape:
        raise DimensionError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    n = y_true.shape[0]
    out = {name: np.empty(n) for name in ("mae", "rmse", "rse")}
    for i in range(n):
        try:
            out["rse"][i] = rse(y_true[i], y_pred[i])
        except DegenerateTargetError as err:
            raise DegenerateTargetError(f"sample {i}: {err}") from err
        out["mae"][i] = mae(y_true[i], y_pred[i])
        out["rmse"][i] = rmse(y_true[i], y_pred[i])
    return MetricReport(mae_per_sample=out["mae"], rmse_per_sample=out["rmse"],
                        rse_per_sample=out["rse"])


def evaluate_model(predict_fn, test) -> MetricReport:
    """Evaluate a prediction callable on a test TrajectorySet.

    `predict_fn` maps initial states [N, n_x] to physical-unit predictions of
    the frames after t = 0, shaped [N, n_t - 1, n_x]. The initial frame is the
    input and is excluded from the comparison.
    """
    y_true = test.target_frames()
    y_pred = np.asarray(predict_fn(test.initial_states()), dtype=np.float64)
    if y_pred.shape != y_true.shape:
        raise DimensionError(
            f"model produced {y_pred.shape}, test trajectories need {y_true.shape}")
    return evaluate_predictions(y_true, y_pred)
