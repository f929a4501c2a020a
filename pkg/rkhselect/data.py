"""
Data containers for rkhselect - grids, trajectory samples and scalar responses.

The module provides:
- Grid: ordered evaluation times in (0, 1]
- Dataset: n discretized trajectories on a grid plus n responses
- SplitDataset: train/test partition sharing one grid
- CSV ingestion and export (header of grid times followed by "Y")
- Seeded train/test splitting
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

LOGGER = logging.getLogger(__name__)

RESPONSE_TOKEN = "Y"

PathLike = Union[str, Path]


class DataError(ValueError):
    """Exception raised for invalid data, with the location of the offending cell."""

    def __init__(
        self,
        message: str,
        path: Optional[PathLike] = None,
        row: Optional[int] = None,
        column: Optional[int] = None,
    ):
        self.message = message
        self.path = str(path) if path is not None else None
        self.row = row
        self.column = column

        full_message = message
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column {column}")
        if location:
            full_message += f" (at {', '.join(location)}"
            if self.path:
                full_message += f" in '{self.path}'"
            full_message += ")"
        elif self.path:
            full_message += f" (in '{self.path}')"

        super().__init__(full_message)


def _readonly(values: np.ndarray) -> np.ndarray:
    values.flags.writeable = False
    return values


@dataclass(frozen=True, eq=False)
class Grid:
    """Strictly increasing evaluation times in (0, 1] with a nominal spacing."""

    times: np.ndarray
    step: float

    def __post_init__(self):
        times = np.array(self.times, dtype=float).reshape(-1)
        if times.size < 2:
            raise DataError(f"Grid needs at least 2 points, got {times.size}")
        if not np.all(np.isfinite(times)):
            raise DataError("Grid times must be finite")

        decreasing = np.flatnonzero(np.diff(times) <= 0)
        if decreasing.size:
            raise DataError("Grid not strictly increasing", column=int(decreasing[0]) + 2)
        if times[0] <= 0.0 or times[-1] > 1.0 + 1e-12:
            raise DataError(f"Grid times must lie in (0, 1], got [{times[0]}, {times[-1]}]")
        if not self.step > 0:
            raise DataError(f"Grid step must be positive, got {self.step}")

        object.__setattr__(self, "times", _readonly(times))
        object.__setattr__(self, "step", float(self.step))

    @classmethod
    def equispaced(cls, m: int) -> "Grid":
        """The grid t_i = i/m, i = 1..m."""
        if m < 2:
            raise DataError(f"Grid needs at least 2 points, got {m}")
        return cls(np.arange(1, m + 1) / m, 1.0 / m)

    @classmethod
    def from_times(cls, times: Sequence[float]) -> "Grid":
        t = np.asarray(times, dtype=float).reshape(-1)
        step = (t[-1] - t[0]) / (t.size - 1) if t.size > 1 else 0.0
        return cls(t, step)

    def __len__(self) -> int:
        return self.times.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Grid):
            return NotImplemented
        return self.step == other.step and np.array_equal(self.times, other.times)

    __hash__ = None

    def index_of(self, t: float) -> int:
        """Index of the grid time nearest to t, within half a step."""
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 0.5 * self.step + 1e-12:
            raise DataError(f"Time {t} is not representable on the grid (step {self.step:g})")
        return idx

    def cell_widths(self) -> np.ndarray:
        """Width of the cell (t_{i-1}, t_i] each grid value stands for."""
        left = max(self.times[0] - self.step, 0.0)
        return np.diff(np.concatenate([[left], self.times]))

    def cell_midpoints(self) -> np.ndarray:
        return self.times - 0.5 * self.cell_widths()


@dataclass(frozen=True, eq=False)
class Dataset:
    """n trajectories sampled on a grid plus n scalar responses. Immutable."""

    grid: Grid
    trajectories: np.ndarray
    responses: np.ndarray
    source_domain: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        paths = np.array(self.trajectories, dtype=float)
        if paths.ndim == 1:
            paths = paths.reshape(1, -1)
        responses = np.array(self.responses, dtype=float).reshape(-1)

        if paths.ndim != 2 or paths.shape[1] != len(self.grid):
            raise DataError(
                f"Trajectory column count {paths.shape[-1]} does not match grid length "
                f"{len(self.grid)}"
            )
        if responses.size != paths.shape[0]:
            raise DataError(
                f"Got {responses.size} responses for {paths.shape[0]} trajectories"
            )

        bad = np.argwhere(~np.isfinite(paths))
        if bad.size:
            raise DataError("Non-finite trajectory value", row=int(bad[0, 0]) + 1,
                            column=int(bad[0, 1]) + 1)
        bad_y = np.flatnonzero(~np.isfinite(responses))
        if bad_y.size:
            raise DataError("Non-finite response", row=int(bad_y[0]) + 1)

        object.__setattr__(self, "trajectories", _readonly(paths))
        object.__setattr__(self, "responses", _readonly(responses))

    @property
    def n(self) -> int:
        return self.trajectories.shape[0]

    @property
    def m(self) -> int:
        return self.trajectories.shape[1]

    def subset(self, rows: Sequence[int]) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return Dataset(
            self.grid, self.trajectories[rows], self.responses[rows], self.source_domain
        )


@dataclass(frozen=True)
class SplitDataset:
    """Disjoint train/test rows of one dataset."""

    train: Dataset
    test: Dataset

    def __post_init__(self):
        if self.train.grid != self.test.grid:
            raise DataError("Train and test sets must share the same grid")


def split(dataset: Dataset, n_train: int, seed: int) -> SplitDataset:
    """Seeded permutation split: the first n_train permuted rows train, the rest test."""
    if not 0 < n_train < dataset.n:
        raise DataError(f"n_train must satisfy 0 < n_train < {dataset.n}, got {n_train}")

    order = np.random.default_rng(seed).permutation(dataset.n)
    return SplitDataset(
        train=dataset.subset(order[:n_train]), test=dataset.subset(order[n_train:])
    )


def rescale_to_unit(times: np.ndarray) -> Tuple[np.ndarray, Optional[Tuple[float, float]]]:
    """Map grid times outside (0, 1] affinely onto (0, 1].

    [a, b] with m points goes to ((t - a + h) / (b - a + h)), h = (b - a) / (m - 1), so an
    equispaced grid becomes i/m. Returns the times and the original domain (None if untouched).
    """
    t = np.asarray(times, dtype=float)
    if t[0] > 0.0 and t[-1] <= 1.0:
        return t, None

    a, b = float(t[0]), float(t[-1])
    h = (b - a) / (t.size - 1)
    return (t - a + h) / (b - a + h), (a, b)


def _parse_cell(text: str, path: PathLike, row: int, column: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"Non-numeric cell '{text.strip()}'", path, row, column) from None
    if not np.isfinite(value):
        raise DataError(f"Non-finite cell '{text.strip()}'", path, row, column)
    return value


def load_dataset_csv(path: PathLike) -> Dataset:
    """Read a dataset whose header lists the grid times followed by 'Y'."""
    path = Path(path)
    if not path.exists():
        raise DataError("File not found", path=path)

    with open(path, encoding="utf-8", newline="") as f:
        rows = [row for row in csv.reader(f) if row and any(cell.strip() for cell in row)]

    if not rows:
        raise DataError("Empty file", path=path)

    header = [cell.strip() for cell in rows[0]]
    if len(header) < 3 or header[-1] != RESPONSE_TOKEN:
        raise DataError(
            f"Malformed header: expected at least two grid times followed by '{RESPONSE_TOKEN}'",
            path, 1, len(header),
        )

    m = len(header) - 1
    raw_times = np.array([_parse_cell(cell, path, 1, j + 1) for j, cell in enumerate(header[:-1])])
    decreasing = np.flatnonzero(np.diff(raw_times) <= 0)
    if decreasing.size:
        raise DataError("Grid not strictly increasing", path, 1, int(decreasing[0]) + 2)

    if len(rows) < 2:
        raise DataError("No data rows", path=path)

    values = np.empty((len(rows) - 1, m + 1))
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != m + 1:
            # first missing cell, or first surplus one
            column = len(row) + 1 if len(row) < m + 1 else m + 2
            raise DataError(f"Ragged row: expected {m + 1} cells, got {len(row)}", path, line,
                            column)
        values[i] = [_parse_cell(cell, path, line, j + 1) for j, cell in enumerate(row)]

    times, domain = rescale_to_unit(raw_times)
    if domain is not None:
        LOGGER.warning("Rescaled grid [%g, %g] of '%s' onto (0, 1]", domain[0], domain[1], path)

    return Dataset(Grid.from_times(times), values[:, :m], values[:, m], domain)


def write_dataset_csv(dataset: Dataset, path: PathLike) -> None:
    """Write a dataset in the layout read by load_dataset_csv."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow([repr(float(t)) for t in dataset.grid.times] + [RESPONSE_TOKEN])
        for x, y in zip(dataset.trajectories, dataset.responses):
            writer.writerow([repr(float(v)) for v in x] + [repr(float(y))])
