"""
Impact point selection by maximizing Q0(T) = c'_T Σ_T⁻¹ c_T over grid index sets.

The module implements:
- q0: the criterion for a given covariance submatrix and cross-covariance
- q0_increment: the gain of adding one point, from a cached Cholesky factor
- q0_increment_semipartial: the same gain as a squared part correlation, from sample residuals
- admissible_candidates: the δ-separation rule
- greedy_select: forward selection with the recursive increment
- exhaustive_select: brute-force maximization, used as an oracle for small grids
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import lstsq

from rkhselect.data import DataError, Grid
from rkhselect.estimators import MomentEstimates, check_indices, submatrix
from rkhselect.linalg import CholeskyFactor, NumericalError, cholesky_lower, quadratic_form

LOGGER = logging.getLogger(__name__)

DEFAULT_MAX_SUBSETS = 250_000


class SelectionError(NumericalError):
    """Exception raised when the criterion cannot be evaluated or optimized."""


class RedundantCandidateError(SelectionError):
    """A candidate whose conditional variance given the selected points vanishes."""


@dataclass(frozen=True)
class SelectionConstraints:
    """Separation, size cap and increment tolerance for a selection run.

    ``delta=None`` means one grid step; ``denom_tol=None`` means
    ``relative_tol`` times the largest variance on the grid.
    """

    delta: Optional[float] = None
    max_p: int = 10
    denom_tol: Optional[float] = None
    relative_tol: float = 1e-10

    def __post_init__(self):
        if self.max_p < 1:
            raise DataError(f"max_p must be >= 1, got {self.max_p}")
        if self.delta is not None and not self.delta >= 0:
            raise DataError(f"delta must be >= 0, got {self.delta}")
        if self.denom_tol is not None and not self.denom_tol > 0:
            raise DataError(f"denom_tol must be > 0, got {self.denom_tol}")
        if not self.relative_tol > 0:
            raise DataError(f"relative_tol must be > 0, got {self.relative_tol}")

    def resolved_delta(self, grid: Grid) -> float:
        return grid.step if self.delta is None else float(self.delta)

    def resolved_denom_tol(self, variances: np.ndarray) -> float:
        if self.denom_tol is not None:
            return float(self.denom_tol)
        scale = float(np.max(variances)) if np.size(variances) else 0.0
        return max(self.relative_tol * scale, np.finfo(float).tiny)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "delta": self.delta,
            "max_p": self.max_p,
            "denom_tol": self.denom_tol,
            "relative_tol": self.relative_tol,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SelectionConstraints":
        return cls(
            delta=data.get("delta"),
            max_p=int(data.get("max_p", 10)),
            denom_tol=data.get("denom_tol"),
            relative_tol=float(data.get("relative_tol", 1e-10)),
        )


@dataclass
class SolverState:
    """Cholesky factor of Σ̂ over the selected indices and the whitened ĉ_T = L⁻¹ ĉ_T."""

    indices: List[int] = field(default_factory=list)
    factor: CholeskyFactor = field(default_factory=CholeskyFactor)
    whitened: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def q(self) -> float:
        """Q0 over the selected indices."""
        return float(self.whitened @ self.whitened)

    def coefficients(self) -> np.ndarray:
        """Σ̂_T⁻¹ ĉ_T."""
        return self.factor.backward(self.whitened)

    def accept(self, est: MomentEstimates, candidate: int) -> None:
        cross = est.cov_provider(self.indices, [candidate])[:, 0]
        try:
            row = self.factor.append(cross, est.variances[candidate])
        except NumericalError as e:
            raise SelectionError(
                "Covariance submatrix is not positive definite",
                minor_index=e.minor_index,
                candidate=candidate,
            ) from e
        pivot = self.factor.lower[-1, -1]
        z = (est.cross_cov[candidate] - row @ self.whitened) / pivot
        self.whitened = np.append(self.whitened, z)
        self.indices.append(int(candidate))

    def prefix(self, p: int) -> "SolverState":
        """State of the first p accepted points (leading block of the factor)."""
        return SolverState(
            indices=list(self.indices[:p]),
            factor=self.factor.leading(p),
            whitened=self.whitened[:p].copy(),
        )


@dataclass
class SelectionPath:
    """Nested selected sets: grid indices in pick order and Q̂ after each pick."""

    selected: List[int]
    times: List[float]
    qmax_after: List[float]
    coeffs_at_each_step: List[np.ndarray]
    solver_state: SolverState

    def __len__(self) -> int:
        return len(self.selected)

    def truncated(self, p: int) -> "SelectionPath":
        p = max(0, min(p, len(self)))
        return SelectionPath(
            selected=self.selected[:p],
            times=self.times[:p],
            qmax_after=self.qmax_after[:p],
            coeffs_at_each_step=self.coeffs_at_each_step[:p],
            solver_state=self.solver_state.prefix(p),
        )


def q0(sigma: np.ndarray, c: np.ndarray) -> float:
    """c' Σ⁻¹ c through a Cholesky factor."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    c = np.asarray(c, dtype=float).reshape(-1)
    if c.size == 0:
        return 0.0
    if sigma.shape != (c.size, c.size):
        raise SelectionError(f"Shape mismatch: Σ is {sigma.shape}, c has {c.size} entries")

    scale = float(np.max(np.abs(sigma))) or 1.0
    if not np.allclose(sigma, sigma.T, rtol=0.0, atol=1e-10 * scale):
        raise SelectionError("Covariance submatrix is not symmetric")
    try:
        factor = cholesky_lower(sigma)
    except NumericalError as e:
        raise SelectionError(
            "Covariance submatrix is not positive definite", minor_index=e.minor_index
        ) from e
    return max(quadratic_form(factor, c), 0.0)


def _score(
    state: SolverState, est: MomentEstimates, candidates: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Numerators and denominators of the increment for each candidate."""
    c = est.cross_cov[candidates]
    variances = est.variances[candidates]
    if state.size == 0:
        return c**2, variances.copy()

    projected = state.factor.forward(est.cov_provider(state.indices, candidates))
    numerators = (state.whitened @ projected - c) ** 2
    denominators = variances - np.einsum("ij,ij->j", projected, projected)
    return numerators, denominators


def _default_tol(est: MomentEstimates, denom_tol: Optional[float]) -> float:
    if denom_tol is not None:
        return float(denom_tol)
    return SelectionConstraints().resolved_denom_tol(est.variances)


def q0_increment(
    state: SolverState, est: MomentEstimates, candidate: int, denom_tol: Optional[float] = None
) -> float:
    """Gain in Q0 from adding the candidate to the selected set.

    (ĉ'_T Σ̂_T⁻¹ k − ĉ_t)² / (σ̂²_t − k' Σ̂_T⁻¹ k), with k = Σ̂(T, t).
    """
    candidate = int(check_indices([candidate], est.m)[0])
    if candidate in state.indices:
        raise RedundantCandidateError("Candidate is redundant: already selected",
                                      candidate=candidate)

    numerators, denominators = _score(state, est, np.array([candidate]))
    if not denominators[0] > _default_tol(est, denom_tol):
        raise RedundantCandidateError(
            "Candidate is redundant: increment denominator below tolerance", candidate=candidate
        )
    return float(numerators[0] / denominators[0])


def q0_increment_semipartial(
    state: SolverState, est: MomentEstimates, candidate: int, denom_tol: Optional[float] = None
) -> float:
    """Gain in Q0 as cov²(Y − Ŷ_T, X(t)) / var(X(t) − X̂_T(t)) from sample residuals."""
    if not est.has_sample:
        raise SelectionError("Semi-partial increment needs sample trajectories and responses")
    candidate = int(check_indices([candidate], est.m)[0])
    if candidate in state.indices:
        raise RedundantCandidateError("Candidate is redundant: already selected",
                                      candidate=candidate)

    x = est.centered_paths
    y = est.centered_responses
    n = x.shape[0]
    target = x[:, candidate]

    if state.size:
        selected = x[:, state.indices]
        y_resid = y - selected @ lstsq(selected, y)[0]
        x_resid = target - selected @ lstsq(selected, target)[0]
    else:
        y_resid, x_resid = y, target

    denominator = float(x_resid @ x_resid) / n
    if not denominator > _default_tol(est, denom_tol):
        raise RedundantCandidateError(
            "Candidate is redundant: residual variance below tolerance", candidate=candidate
        )
    return (float(y_resid @ target) / n) ** 2 / denominator


def admissible_candidates(grid: Grid, selected: Sequence[int], delta: float) -> np.ndarray:
    """Grid indices at time distance >= delta from every selected point, never a selected one."""
    times = grid.times
    mask = np.ones(len(grid), dtype=bool)
    slack = 1e-9 * grid.step

    for idx in selected:
        mask[idx] = False
        mask &= np.abs(times - times[idx]) >= delta - slack
    return np.flatnonzero(mask)


def greedy_select(
    est: MomentEstimates, grid: Grid, constraints: Optional[SelectionConstraints] = None
) -> SelectionPath:
    """Forward selection: each step adds the admissible point with the largest increment.

    Ties go to the smallest grid index. Stops at max_p points or when every admissible
    candidate is redundant.
    """
    constraints = constraints or SelectionConstraints()
    if est.m != len(grid):
        raise DataError(f"Estimates cover {est.m} points, grid has {len(grid)}")

    delta = constraints.resolved_delta(grid)
    tol = constraints.resolved_denom_tol(est.variances)
    state = SolverState()
    qmax_after: List[float] = []
    coeffs: List[np.ndarray] = []

    for step in range(constraints.max_p):
        candidates = admissible_candidates(grid, state.indices, delta)
        if candidates.size == 0:
            LOGGER.debug("No admissible candidate left after %d points", step)
            break

        numerators, denominators = _score(state, est, candidates)
        usable = denominators > tol
        if not usable.any():
            LOGGER.debug("All %d candidates redundant after %d points", candidates.size, step)
            break

        gains = np.full(candidates.size, -np.inf)
        gains[usable] = numerators[usable] / denominators[usable]
        best = int(candidates[np.argmax(gains)])

        state.accept(est, best)
        qmax_after.append(state.q)
        coeffs.append(state.coefficients())
        LOGGER.debug(
            "Step %d: picked index %d (t=%.4g), gain %.6g, Q=%.6g",
            step + 1, best, grid.times[best], float(np.max(gains)), state.q,
        )

    return SelectionPath(
        selected=list(state.indices),
        times=[float(grid.times[i]) for i in state.indices],
        qmax_after=qmax_after,
        coeffs_at_each_step=coeffs,
        solver_state=state,
    )


def _separated(times: np.ndarray, combo: Sequence[int], delta: float, slack: float) -> bool:
    picked = times[list(combo)]
    return bool(np.all(np.diff(picked) >= delta - slack))


def exhaustive_select(
    est: MomentEstimates,
    grid: Grid,
    p: int,
    constraints: Optional[SelectionConstraints] = None,
    max_subsets: int = DEFAULT_MAX_SUBSETS,
) -> Tuple[List[int], float]:
    """Admissible p-subset maximizing Q0; ties keep the lexicographically first subset."""
    constraints = constraints or SelectionConstraints()
    m = len(grid)
    if not 1 <= p <= m:
        raise DataError(f"p must satisfy 1 <= p <= {m}, got {p}")
    total = math.comb(m, p)
    if total > max_subsets:
        raise SelectionError(
            f"C({m}, {p}) = {total} subsets exceed the enumeration cap {max_subsets}"
        )

    delta = constraints.resolved_delta(grid)
    slack = 1e-9 * grid.step
    best: Optional[Tuple[int, ...]] = None
    best_q = -np.inf

    for combo in itertools.combinations(range(m), p):
        if not _separated(grid.times, combo, delta, slack):
            continue
        sigma, c = submatrix(est, combo)
        try:
            value = q0(sigma, c)
        except SelectionError:
            continue
        if value > best_q:
            best, best_q = combo, value

    if best is None:
        raise SelectionError(f"No admissible subset of size {p}")
    return list(best), float(best_q)
