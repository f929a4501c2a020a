"""
Dense linear algebra shared by the simulator, the selector and the regressor.

Provides:
- Cholesky factorization reporting the failing leading minor
- Jittered factorization for badly conditioned grid covariance matrices
- Quadratic forms c' S^-1 c computed with triangular solves
- An append-only lower Cholesky factor, grown one row per accepted point
"""

import logging
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import lapack, solve_triangular

LOGGER = logging.getLogger(__name__)

DEFAULT_JITTERS = (1e-10, 1e-8)


class NumericalError(ArithmeticError):
    """Exception raised when a factorization or solve breaks down."""

    def __init__(
        self, message: str, minor_index: Optional[int] = None, candidate: Optional[int] = None
    ):
        self.message = message
        self.minor_index = minor_index
        self.candidate = candidate

        full_message = message
        if minor_index is not None:
            full_message += f" (leading minor {minor_index})"
        if candidate is not None:
            full_message += f" at grid index {candidate}"

        super().__init__(full_message)


def cholesky_lower(matrix: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NumericalError(f"Expected a square matrix, got shape {a.shape}")
    if a.shape[0] == 0:
        return np.zeros((0, 0))
    if not np.all(np.isfinite(a)):
        raise NumericalError("Matrix has non-finite entries")

    factor, info = lapack.dpotrf(a, lower=1, clean=1)
    if info > 0:
        # dpotrf reports the order of the first leading minor that is not PD
        raise NumericalError("Matrix is not positive definite", minor_index=int(info))
    if info < 0:
        raise NumericalError(f"Illegal argument {-info} passed to dpotrf")
    return factor


def jittered_cholesky(
    matrix: np.ndarray, jitters: Sequence[float] = DEFAULT_JITTERS
) -> np.ndarray:
    """Factor a covariance matrix after adding jitter * max(diag) to its diagonal.

    Each jitter level is tried in turn; the last failure is re-raised.
    """
    a = np.asarray(matrix, dtype=float)
    scale = float(np.max(np.diag(a))) if a.size else 0.0
    error: Optional[NumericalError] = None

    for attempt, jitter in enumerate(jitters):
        if attempt:
            LOGGER.debug("Retrying Cholesky with jitter %.1e * max diagonal", jitter)
        try:
            return cholesky_lower(a + jitter * scale * np.eye(a.shape[0]))
        except NumericalError as e:
            error = e

    raise NumericalError(
        f"Matrix is not positive definite after jitter {jitters[-1]:.0e}",
        minor_index=error.minor_index if error else None,
    )


def quadratic_form(factor: np.ndarray, vector: np.ndarray) -> float:
    """Return c' S^-1 c given the lower factor of S."""
    c = np.asarray(vector, dtype=float)
    if c.size == 0:
        return 0.0
    z = solve_triangular(factor, c, lower=True)
    return float(z @ z)


class CholeskyFactor:
    """Lower Cholesky factor of a covariance submatrix, grown one row per append."""

    def __init__(self) -> None:
        self._lower = np.zeros((0, 0))

    @property
    def size(self) -> int:
        return self._lower.shape[0]

    @property
    def lower(self) -> np.ndarray:
        view = self._lower.view()
        view.flags.writeable = False
        return view

    def forward(self, rhs: np.ndarray) -> np.ndarray:
        """Solve L x = rhs."""
        b = np.asarray(rhs, dtype=float)
        if self.size == 0:
            return np.zeros((0,) + b.shape[1:])
        return solve_triangular(self._lower, b, lower=True)

    def backward(self, rhs: np.ndarray) -> np.ndarray:
        """Solve L' x = rhs."""
        b = np.asarray(rhs, dtype=float)
        if self.size == 0:
            return np.zeros((0,) + b.shape[1:])
        return solve_triangular(self._lower, b, lower=True, trans="T")

    def append(self, cross: np.ndarray, diagonal: float) -> np.ndarray:
        """Border the factor with a new row.

        ``cross`` holds the covariances between the new variable and the current ones,
        ``diagonal`` its variance. Returns the new row (without the pivot).
        """
        row = self.forward(np.asarray(cross, dtype=float).reshape(-1))
        pivot_sq = float(diagonal) - float(row @ row)
        if not pivot_sq > 0.0:
            raise NumericalError(
                "Bordered matrix is not positive definite", minor_index=self.size + 1
            )

        p = self.size
        grown = np.zeros((p + 1, p + 1))
        grown[:p, :p] = self._lower
        grown[p, :p] = row
        grown[p, p] = np.sqrt(pivot_sq)
        self._lower = grown
        return row

    def leading(self, p: int) -> "CholeskyFactor":
        """Factor of the leading p x p block."""
        clone = CholeskyFactor()
        clone._lower = self._lower[:p, :p].copy()
        return clone
