"""Selection-quality metrics: Hausdorff distance between point sets and per-run scores."""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from rkhselect.data import DataError

LOGGER = logging.getLogger(__name__)


class MetricError(DataError):
    """Exception raised for empty point sets."""


def hausdorff(a: Sequence[float], b: Sequence[float]) -> float:
    """Larger of the two directed max-min distances between finite sets of times."""
    x = np.asarray(a, dtype=float).reshape(-1, 1)
    y = np.asarray(b, dtype=float).reshape(-1, 1)
    if x.size == 0 or y.size == 0:
        raise MetricError("Hausdorff distance needs two nonempty point sets")

    distances = cdist(x, y)
    return float(max(distances.min(axis=1).max(), distances.min(axis=0).max()))


@dataclass
class SelectionScore:
    hausdorff: float
    p_hat: int
    p_star: int
    selected_times: List[float] = field(default_factory=list)
    true_times: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "hausdorff": self.hausdorff,
            "p_hat": self.p_hat,
            "p_star": self.p_star,
            "selected_times": self.selected_times,
            "true_times": self.true_times,
        }


def score_selection(selected: Sequence[float], truth: Sequence[float]) -> SelectionScore:
    selected = [float(t) for t in selected]
    truth = [float(t) for t in truth]
    if not truth:
        raise MetricError("True point set is empty")

    LOGGER.debug("Scoring %d selected against %d true points", len(selected), len(truth))

    return SelectionScore(
        hausdorff=hausdorff(selected, truth),
        p_hat=len(selected),
        p_star=len(truth),
        selected_times=selected,
        true_times=truth,
    )
