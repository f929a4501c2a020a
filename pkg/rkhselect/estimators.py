"""
Moment estimation on the training grid.

Sample moments use divisor n throughout:
- mean curve X̄(t) and response mean Ȳ
- covariance Ĉov(X(s), X(t)) = n⁻¹ Σ Xᵢ(s) Xᵢ(t) − X̄(s) X̄(t), computed from centered
  trajectories and only for the entries a caller asks for
- cross-covariance ĉ(t) = n⁻¹ Σ (Xᵢ(t) − X̄(t)) (Yᵢ − Ȳ)

Population moments (exact kernel and cross-covariance of a benchmark model) share the same
container so the selector can run against either.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from rkhselect.data import DataError, Dataset, Grid
from rkhselect.processes import (
    ProcessSpec,
    RegressionModelSpec,
    covariance_matrix,
    mean_fn,
    point_weights,
)

LOGGER = logging.getLogger(__name__)


class EstimationError(DataError):
    """Exception raised for too few samples or invalid index sets."""


class SampleCovariance:
    """Covariance entries computed on demand from centered trajectories."""

    def __init__(self, centered: np.ndarray):
        self._centered = centered
        self._n = centered.shape[0]
        variances = np.einsum("ij,ij->j", centered, centered) / self._n
        variances.flags.writeable = False
        self._variances = variances

    @property
    def size(self) -> int:
        return self._centered.shape[1]

    def __call__(self, rows: Sequence[int], cols: Optional[Sequence[int]] = None) -> np.ndarray:
        rows = np.asarray(rows, dtype=int)
        cols = rows if cols is None else np.asarray(cols, dtype=int)
        return self._centered[:, rows].T @ self._centered[:, cols] / self._n

    def diagonal(self) -> np.ndarray:
        return self._variances


class KernelCovariance:
    """Covariance entries read from a materialized matrix."""

    def __init__(self, matrix: np.ndarray):
        matrix = np.array(matrix, dtype=float)
        matrix.flags.writeable = False
        self._matrix = matrix

    @property
    def size(self) -> int:
        return self._matrix.shape[0]

    def __call__(self, rows: Sequence[int], cols: Optional[Sequence[int]] = None) -> np.ndarray:
        rows = np.asarray(rows, dtype=int)
        cols = rows if cols is None else np.asarray(cols, dtype=int)
        return self._matrix[np.ix_(rows, cols)]

    def diagonal(self) -> np.ndarray:
        return np.diag(self._matrix)


CovarianceProvider = Union[SampleCovariance, KernelCovariance]


@dataclass(frozen=True, eq=False)
class MomentEstimates:
    """Mean curve, response mean, cross-covariance and a covariance provider."""

    mean_curve: np.ndarray
    response_mean: float
    cross_cov: np.ndarray
    cov_provider: CovarianceProvider
    n: Optional[int] = None
    centered_paths: Optional[np.ndarray] = None
    centered_responses: Optional[np.ndarray] = None

    @property
    def m(self) -> int:
        return self.mean_curve.size

    @property
    def variances(self) -> np.ndarray:
        return self.cov_provider.diagonal()

    @property
    def has_sample(self) -> bool:
        return self.centered_paths is not None and self.centered_responses is not None


def _center(values: np.ndarray, means: Union[np.ndarray, float]) -> np.ndarray:
    centered = values - means
    # constant columns center to exact zeros
    constant = np.ptp(values, axis=0) == 0
    if centered.ndim == 1:
        if constant:
            centered[:] = 0.0
    else:
        centered[:, constant] = 0.0
    return centered


def estimate_moments(train: Dataset) -> MomentEstimates:
    """Sample moments of the training set (divisor n)."""
    n = train.n
    if n < 2:
        raise EstimationError(f"Need at least 2 training curves, got {n}")

    x = train.trajectories
    y = train.responses
    mean_curve = x.mean(axis=0)
    response_mean = float(y.mean())

    centered = _center(x, mean_curve)
    centered_y = _center(y, response_mean)
    cross_cov = centered.T @ centered_y / n

    for values in (mean_curve, cross_cov, centered, centered_y):
        values.flags.writeable = False

    return MomentEstimates(
        mean_curve=mean_curve,
        response_mean=response_mean,
        cross_cov=cross_cov,
        cov_provider=SampleCovariance(centered),
        n=n,
        centered_paths=centered,
        centered_responses=centered_y,
    )


def population_moments(
    process: ProcessSpec, model: RegressionModelSpec, grid: Grid
) -> MomentEstimates:
    """Exact moments of (X, Y) on the grid for a benchmark process and model."""
    kernel = covariance_matrix(process, grid)
    weights = point_weights(model, grid)
    mean_curve = np.asarray(mean_fn(process, grid.times), dtype=float)

    return MomentEstimates(
        mean_curve=mean_curve,
        response_mean=float(weights @ mean_curve),
        cross_cov=kernel @ weights,
        cov_provider=KernelCovariance(kernel),
    )


def check_indices(indices: Sequence[int], m: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=int).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= m):
        bad = int(idx[(idx < 0) | (idx >= m)][0])
        raise EstimationError(f"Index {bad} out of range for a grid of {m} points")
    if np.unique(idx).size != idx.size:
        raise EstimationError(f"Duplicate index in {idx.tolist()}")
    return idx


def submatrix(est: MomentEstimates, indices: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """Σ̂ and ĉ restricted to the indices, in the given order."""
    idx = check_indices(indices, est.m)
    return est.cov_provider(idx), est.cross_cov[idx].copy()
