"""
Finite-dimensional linear model at the selected impact points.

- fit: β̂ = Σ̂_T⁻¹ ĉ_T by Cholesky solves, intercept Ȳ − β̂' X̄(T)
- predict: Ŷ = intercept + Σⱼ β̂ⱼ X(tⱼ)
- rmse: relative error Σ(Ŷᵢ − Yᵢ)² / Σ Yᵢ²
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve

from rkhselect.data import DataError, Grid
from rkhselect.estimators import MomentEstimates, submatrix
from rkhselect.linalg import NumericalError, cholesky_lower

LOGGER = logging.getLogger(__name__)


class FitError(NumericalError):
    """Exception raised when the covariance at the selected points is singular."""


@dataclass
class LinearPredictor:
    """Intercept plus coefficients attached to grid indices."""

    indices: List[int]
    times: List[float]
    coefficients: np.ndarray
    intercept: float
    train_n: Optional[int] = None
    grid_times: Optional[List[float]] = field(default=None, repr=False)

    def __post_init__(self):
        self.indices = [int(i) for i in self.indices]
        self.times = [float(t) for t in self.times]
        self.coefficients = np.asarray(self.coefficients, dtype=float).reshape(-1)
        self.intercept = float(self.intercept)
        if self.coefficients.size != len(self.indices):
            raise DataError(
                f"{self.coefficients.size} coefficients for {len(self.indices)} indices"
            )
        if not (np.all(np.isfinite(self.coefficients)) and np.isfinite(self.intercept)):
            raise FitError("Predictor has non-finite coefficients")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "indices": self.indices,
            "times": self.times,
            "coefficients": self.coefficients.tolist(),
            "intercept": self.intercept,
            "train_n": self.train_n,
            "grid_times": self.grid_times,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LinearPredictor":
        return cls(
            indices=data["indices"],
            times=data["times"],
            coefficients=data["coefficients"],
            intercept=data["intercept"],
            train_n=data.get("train_n"),
            grid_times=data.get("grid_times"),
        )


def fit(
    est: MomentEstimates, indices: Sequence[int], grid: Optional[Grid] = None
) -> LinearPredictor:
    """Least-squares predictor on the given grid indices."""
    sigma, c = submatrix(est, indices)
    idx = [int(i) for i in indices]

    if idx:
        try:
            factor = cholesky_lower(sigma)
        except NumericalError as e:
            raise FitError(
                "Covariance at the selected points is singular", minor_index=e.minor_index
            ) from e
        coefficients = cho_solve((factor, True), c)
    else:
        coefficients = np.zeros(0)

    intercept = est.response_mean - float(coefficients @ est.mean_curve[idx])
    if grid is None:
        times, grid_times = [float("nan")] * len(idx), None
    else:
        times, grid_times = [float(grid.times[i]) for i in idx], grid.times.tolist()

    return LinearPredictor(
        indices=idx,
        times=times,
        coefficients=coefficients,
        intercept=intercept,
        train_n=est.n,
        grid_times=grid_times,
    )


def predict(pred: LinearPredictor, paths: np.ndarray) -> np.ndarray:
    """Predicted responses for each trajectory row."""
    x = np.asarray(paths, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1)

    expected = len(pred.grid_times) if pred.grid_times is not None else None
    if expected is not None and x.shape[1] != expected:
        raise DataError(f"Grid mismatch: paths have {x.shape[1]} columns, model expects {expected}")
    if pred.indices and max(pred.indices) >= x.shape[1]:
        raise DataError(
            f"Grid mismatch: index {max(pred.indices)} outside paths with {x.shape[1]} columns"
        )

    return pred.intercept + x[:, pred.indices] @ pred.coefficients


def rmse(predicted: np.ndarray, actual: np.ndarray) -> float:
    """Σ(Ŷᵢ − Yᵢ)² / Σ Yᵢ²."""
    yhat = np.asarray(predicted, dtype=float).reshape(-1)
    y = np.asarray(actual, dtype=float).reshape(-1)
    if yhat.size != y.size:
        raise DataError(f"Length mismatch: {yhat.size} predictions for {y.size} responses")

    total = float(y @ y)
    if total <= 0.0:
        raise DataError("RMSE is undefined for an all-zero response vector")
    residual = yhat - y
    return float(residual @ residual) / total
