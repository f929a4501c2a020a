"""
Estimating the number of impact points from the Q̂max series of a greedy path.

Two estimators:
- kmeans: 2-means on the log-gaps L(p) = log(Q̂max(p+1) − Q̂max(p)); p̂ is the first p from
  which every L(q), q >= p, sits in the cluster not containing L(1)
- threshold: p̂ is the first p whose gap falls below ρ·Q̂max(1)
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from sklearn.cluster import KMeans

from rkhselect.data import DataError
from rkhselect.selector import SelectionPath

LOGGER = logging.getLogger(__name__)

ORDER_METHODS = ("kmeans", "threshold")
GAP_FLOOR_RATIO = 1e-15
KMEANS_MAX_ITER = 100


@dataclass(frozen=True, eq=False)
class QmaxSeries:
    """Q̂max(1..P) and its floored log-gaps L(1..P-1)."""

    values: np.ndarray
    log_gaps: np.ndarray
    gap_floor: float

    @property
    def length(self) -> int:
        return self.values.size


def qmax_series(path: SelectionPath, floor_ratio: float = GAP_FLOOR_RATIO) -> QmaxSeries:
    """Log-gap series of a nonempty path; gaps are floored at floor_ratio * Q̂max(P)."""
    values = np.asarray(path.qmax_after, dtype=float)
    if values.size == 0:
        raise DataError("Cannot build a Q̂max series from an empty path")

    floor = max(floor_ratio * float(values[-1]), np.finfo(float).tiny)
    gaps = np.maximum(np.diff(values), floor)
    return QmaxSeries(values=values, log_gaps=np.log(gaps), gap_floor=floor)


def _two_means(log_gaps: np.ndarray) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Labels and centers of 1-D 2-means seeded at the min and max; None if degenerate."""
    lo, hi = float(np.min(log_gaps)), float(np.max(log_gaps))
    if lo == hi:
        return None

    model = KMeans(
        n_clusters=2,
        init=np.array([[lo], [hi]]),
        n_init=1,
        max_iter=KMEANS_MAX_ITER,
        algorithm="lloyd",
    )
    model.fit(log_gaps.reshape(-1, 1))
    centers = model.cluster_centers_.ravel()
    LOGGER.debug("2-means centers on log-gaps: %s", centers)
    return model.labels_, centers


def first_gap_is_small(series: QmaxSeries) -> bool:
    """True when L(1) falls in the lower (negligible-gap) cluster."""
    if series.log_gaps.size < 2:
        return False
    clustering = _two_means(series.log_gaps)
    if clustering is None:
        return False
    labels, centers = clustering
    return bool(centers[labels[0]] < centers[1 - labels[0]])


def estimate_p_kmeans(series: QmaxSeries) -> int:
    """p̂ from 2-means on the log-gaps; P when clustering is degenerate or never switches."""
    full = series.length
    if series.log_gaps.size < 2:
        return full

    clustering = _two_means(series.log_gaps)
    if clustering is None:
        return full
    labels, centers = clustering

    first = labels[0]
    if centers[first] < centers[1 - first]:
        LOGGER.warning("L(1) lies in the small-gap cluster; returning p̂ = 1")
        return 1

    in_first = np.flatnonzero(labels == first)
    # L is 1-based in p: the last L(q) sharing L(1)'s cluster sits at q = in_first[-1] + 1
    return min(int(in_first[-1]) + 2, full)


def estimate_p_threshold(series: QmaxSeries, rho: float) -> int:
    """p̂ = min{p : Q̂max(p+1) − Q̂max(p) < ρ·Q̂max(1)}, or P if no gap qualifies."""
    if not rho > 0:
        raise DataError(f"rho must be > 0, got {rho}")

    eps = rho * float(series.values[0])
    small = np.flatnonzero(np.diff(series.values) < eps)
    return int(small[0]) + 1 if small.size else series.length


def estimate_p(series: QmaxSeries, method: str = "kmeans", rho: float = 0.01) -> int:
    if float(series.values[-1]) <= 0.0:
        LOGGER.warning("Criterion is identically zero; returning p̂ = 1")
        return 1
    if method == "kmeans":
        return estimate_p_kmeans(series)
    if method == "threshold":
        return estimate_p_threshold(series, rho)
    raise DataError(f"Unknown order method '{method}', expected one of {ORDER_METHODS}")


def order_warnings(series: QmaxSeries, method: str) -> List[str]:
    """Report notes about degenerate order estimation."""
    notes = []
    if float(series.values[-1]) <= 0.0:
        notes.append("criterion identically zero: no cross-covariance with the response")
    elif method == "kmeans":
        if series.log_gaps.size < 2:
            notes.append("fewer than two log-gaps: p_hat set to the path length")
        elif first_gap_is_small(series):
            notes.append("L(1) lies in the small-gap cluster: p_hat set to 1")
    return notes
