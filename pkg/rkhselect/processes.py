"""
Benchmark processes and regression models.

Processes (all started at 0):
- Bm: standard Brownian motion
- gBm: exp(B(t)), the only non-Gaussian kind
- iBm: integral of Brownian motion
- OU: dX = theta (mu - X) dt + sigma dB with X(0) = 0
- fBm: fractional Brownian motion with Hurst exponent H

Gaussian kinds are sampled exactly on the grid through a lower Cholesky factor of the grid
covariance; gBm exponentiates a Brownian draw. Responses follow the three regression models:
two sparse ones (finite combinations of point values) and one integral functional.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from rkhselect.data import DataError, Grid
from rkhselect.linalg import NumericalError, jittered_cholesky

LOGGER = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


class SimulationError(NumericalError):
    """Exception raised when a grid covariance cannot be factored."""


class ProcessKind(str, Enum):
    BM = "bm"
    GBM = "gbm"
    IBM = "ibm"
    OU = "ou"
    FBM = "fbm"


_LABELS = {
    ProcessKind.BM: "Bm",
    ProcessKind.GBM: "gBm",
    ProcessKind.IBM: "iBm",
    ProcessKind.OU: "OU",
    ProcessKind.FBM: "fBm",
}


@dataclass(frozen=True)
class ProcessSpec:
    """Which process to simulate, with its parameters."""

    kind: ProcessKind
    hurst: Optional[float] = None
    ou_params: Optional[Tuple[float, float, float]] = None

    def __post_init__(self):
        try:
            kind = ProcessKind(str(getattr(self.kind, "value", self.kind)).lower())
        except ValueError:
            raise DataError(f"Unknown process kind '{self.kind}'") from None
        object.__setattr__(self, "kind", kind)

        if (self.hurst is not None) != (kind is ProcessKind.FBM):
            raise DataError("hurst must be given for fBm and only for fBm")
        if self.hurst is not None:
            if not 0.0 < self.hurst < 1.0:
                raise DataError(f"Hurst exponent must lie in (0, 1), got {self.hurst}")
            object.__setattr__(self, "hurst", float(self.hurst))

        if (self.ou_params is not None) != (kind is ProcessKind.OU):
            raise DataError("ou_params must be given for OU and only for OU")
        if self.ou_params is not None:
            theta, mu, sigma = (float(v) for v in self.ou_params)
            if theta <= 0 or sigma <= 0:
                raise DataError(f"OU needs theta > 0 and sigma > 0, got {self.ou_params}")
            object.__setattr__(self, "ou_params", (theta, mu, sigma))

    @classmethod
    def brownian(cls) -> "ProcessSpec":
        return cls(ProcessKind.BM)

    @classmethod
    def geometric(cls) -> "ProcessSpec":
        return cls(ProcessKind.GBM)

    @classmethod
    def integrated(cls) -> "ProcessSpec":
        return cls(ProcessKind.IBM)

    @classmethod
    def ornstein_uhlenbeck(
        cls, theta: float = 1.0, mu: float = 1.0, sigma: float = 1.0
    ) -> "ProcessSpec":
        return cls(ProcessKind.OU, ou_params=(theta, mu, sigma))

    @classmethod
    def fractional(cls, hurst: float) -> "ProcessSpec":
        return cls(ProcessKind.FBM, hurst=hurst)

    @property
    def label(self) -> str:
        if self.kind is ProcessKind.FBM:
            return f"fBm {self.hurst:g}"
        return _LABELS[self.kind]

    @property
    def is_gaussian(self) -> bool:
        return self.kind is not ProcessKind.GBM

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"kind": self.kind.value}
        if self.hurst is not None:
            data["hurst"] = self.hurst
        if self.ou_params is not None:
            data["ou_params"] = list(self.ou_params)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ProcessSpec":
        kind = str(data.get("kind", "")).lower()
        if kind == ProcessKind.OU.value and data.get("ou_params") is None:
            return cls.ornstein_uhlenbeck()
        ou = data.get("ou_params")
        return cls(kind, hurst=data.get("hurst"), ou_params=tuple(ou) if ou is not None else None)


def _as_output(values: np.ndarray) -> ArrayLike:
    return values if values.ndim else float(values)


def mean_fn(spec: ProcessSpec, t: ArrayLike) -> ArrayLike:
    """Exact mean of the process at time(s) t."""
    t = np.asarray(t, dtype=float)
    if spec.kind is ProcessKind.GBM:
        out = np.exp(t / 2.0)
    elif spec.kind is ProcessKind.OU:
        theta, mu, _ = spec.ou_params
        out = mu * (1.0 - np.exp(-theta * t))
    else:
        out = np.zeros_like(t)
    return _as_output(out)


def cov_kernel(spec: ProcessSpec, s: ArrayLike, t: ArrayLike) -> ArrayLike:
    """Exact covariance K(s, t); broadcasts over array arguments."""
    s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
    lo = np.minimum(s, t)
    hi = np.maximum(s, t)

    if spec.kind is ProcessKind.BM:
        out = lo.copy()
    elif spec.kind is ProcessKind.GBM:
        out = np.exp((s + t) / 2.0) * np.expm1(lo)
    elif spec.kind is ProcessKind.IBM:
        out = lo**2 * (hi / 2.0 - lo / 6.0)
    elif spec.kind is ProcessKind.OU:
        theta, _, sigma = spec.ou_params
        out = sigma**2 / (2.0 * theta) * (np.exp(-theta * (hi - lo)) - np.exp(-theta * (s + t)))
    else:
        two_h = 2.0 * spec.hurst
        out = 0.5 * (np.abs(t) ** two_h + np.abs(s) ** two_h - np.abs(t - s) ** two_h)
    return _as_output(out)


def covariance_matrix(spec: ProcessSpec, grid: Grid) -> np.ndarray:
    t = grid.times
    return cov_kernel(spec, t[:, None], t[None, :])


def sample_paths(spec: ProcessSpec, grid: Grid, n: int, seed: int) -> np.ndarray:
    """Draw n independent trajectories on the grid (n x m)."""
    if n < 1:
        raise DataError(f"Need at least one path, got n={n}")

    base = ProcessSpec.brownian() if spec.kind is ProcessKind.GBM else spec
    try:
        factor = jittered_cholesky(covariance_matrix(base, grid))
    except NumericalError as e:
        raise SimulationError(
            f"Grid covariance of {spec.label} is not positive definite", minor_index=e.minor_index
        ) from e

    rng = np.random.default_rng(seed)
    paths = mean_fn(base, grid.times) + rng.standard_normal((n, len(grid))) @ factor.T
    if spec.kind is ProcessKind.GBM:
        paths = np.exp(paths)
    return paths


_SPARSE_PRESETS = {
    1: ((0.2, 0.4, 0.9), (2.0, -5.0, 1.0)),
    2: ((0.16, 0.47, 0.67, 0.85, 0.91), (2.1, -0.2, -1.9, 5.0, 4.2)),
}
# model 2 as listed in the point tuple rather than in the response equation
_MODEL2_TEXT_POINTS = (0.16, 0.47, 0.6, 0.85, 0.91)


@dataclass(frozen=True)
class RegressionModelSpec:
    """Response generator: sparse models 1-2 or the log(1 + t) integral model 3."""

    model_id: int
    true_points: Tuple[float, ...] = ()
    true_weights: Tuple[float, ...] = ()
    noise_sigma: float = 0.2

    def __post_init__(self):
        if self.model_id not in (1, 2, 3):
            raise DataError(f"Unknown regression model {self.model_id}")
        points = tuple(float(t) for t in self.true_points)
        weights = tuple(float(b) for b in self.true_weights)
        if len(points) != len(weights):
            raise DataError("true_points and true_weights must have the same length")
        if self.model_id == 3 and points:
            raise DataError("Model 3 carries no true points")
        if self.model_id != 3 and not points:
            raise DataError(f"Model {self.model_id} needs true points")
        if not self.noise_sigma >= 0:
            raise DataError(f"noise_sigma must be >= 0, got {self.noise_sigma}")

        object.__setattr__(self, "true_points", points)
        object.__setattr__(self, "true_weights", weights)
        object.__setattr__(self, "noise_sigma", float(self.noise_sigma))

    @classmethod
    def preset(
        cls, model_id: int, noise_sigma: float = 0.2, variant: str = "display"
    ) -> "RegressionModelSpec":
        """Benchmark models; variant 'text' moves model 2's third point to 0.6."""
        if model_id == 3:
            return cls(3, noise_sigma=noise_sigma)
        if model_id not in _SPARSE_PRESETS:
            raise DataError(f"Unknown regression model {model_id}")
        if variant not in ("display", "text"):
            raise DataError(f"Unknown model variant '{variant}'")

        points, weights = _SPARSE_PRESETS[model_id]
        if model_id == 2 and variant == "text":
            points = _MODEL2_TEXT_POINTS
        return cls(model_id, points, weights, noise_sigma)

    @property
    def is_sparse(self) -> bool:
        return self.model_id != 3

    @property
    def p_star(self) -> Optional[int]:
        return len(self.true_points) if self.is_sparse else None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model_id": self.model_id,
            "true_points": list(self.true_points),
            "true_weights": list(self.true_weights),
            "noise_sigma": self.noise_sigma,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RegressionModelSpec":
        model_id = int(data["model_id"])
        sigma = float(data.get("noise_sigma", 0.2))
        if model_id == 3 or not data.get("true_points"):
            return cls.preset(model_id, sigma, data.get("variant", "display"))
        return cls(model_id, tuple(data["true_points"]), tuple(data["true_weights"]), sigma)


def functional_weights(grid: Grid) -> np.ndarray:
    """Quadrature weights of the model 3 functional: cell width times log(1 + cell midpoint)."""
    return grid.cell_widths() * np.log1p(grid.cell_midpoints())


def point_weights(model: RegressionModelSpec, grid: Grid) -> np.ndarray:
    """Length-m weight vector w with Y = w' X + noise for the given model."""
    if not model.is_sparse:
        return functional_weights(grid)

    weights = np.zeros(len(grid))
    for t, beta in zip(model.true_points, model.true_weights):
        weights[grid.index_of(t)] += beta
    return weights


def gen_response(
    model: RegressionModelSpec, paths: np.ndarray, grid: Grid, seed: int
) -> np.ndarray:
    """Responses for each trajectory row, with seeded N(0, noise_sigma^2) errors."""
    x = np.asarray(paths, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.shape[1] != len(grid):
        raise DataError(f"Paths have {x.shape[1]} columns, grid has {len(grid)} points")

    signal = x @ point_weights(model, grid)
    if model.noise_sigma == 0:
        return signal

    rng = np.random.default_rng(seed)
    return signal + rng.normal(0.0, model.noise_sigma, size=signal.shape[0])
