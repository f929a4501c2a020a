"""
Replication harness for the simulation benchmarks and the external-data pipeline.

Handles:
- ExperimentConfig: process, model, sample sizes, constraints and order method of one table row
- run_replication: simulate, split, estimate, select, order, fit, predict and score one seed
- run_experiment: every replication (serially or in a process pool) plus mean/sd aggregates
- select_on_dataset: the estimate -> select -> order -> fit pipeline on a loaded dataset
- JSON reports and the CSV table export
"""

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from functools import partial
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from rkhselect import __version__
from rkhselect.data import DataError, Dataset, Grid, split
from rkhselect.estimators import estimate_moments
from rkhselect.metrics import score_selection
from rkhselect.order import ORDER_METHODS, estimate_p, order_warnings, qmax_series
from rkhselect.processes import ProcessSpec, RegressionModelSpec, gen_response, sample_paths
from rkhselect.regressor import LinearPredictor, fit, predict, rmse
from rkhselect.selector import SelectionConstraints, SelectionError, greedy_select

LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]

FAILURE_CAP = 0.10
AGGREGATED = ("rmse", "hausdorff", "p_hat")


class ExperimentError(RuntimeError):
    """Exception raised when too many replications of an experiment fail."""

    def __init__(self, message: str, failed: int = 0, reps: int = 0, label: str = ""):
        self.message = message
        self.failed = failed
        self.reps = reps
        self.label = label

        full_message = message
        if label:
            full_message += f" for {label}"
        if reps:
            full_message += f" ({failed}/{reps} replications failed)"
        super().__init__(full_message)


def benchmark_processes() -> List[ProcessSpec]:
    """The six simulated processes of the benchmark tables."""
    return [
        ProcessSpec.brownian(),
        ProcessSpec.geometric(),
        ProcessSpec.integrated(),
        ProcessSpec.ornstein_uhlenbeck(1.0, 1.0, 1.0),
        ProcessSpec.fractional(0.2),
        ProcessSpec.fractional(0.8),
    ]


def derive_seeds(seed: int, count: int = 3) -> List[int]:
    """Independent child seeds (paths, noise, split) from one replication seed."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count)]


@dataclass(frozen=True)
class ExperimentConfig:
    """One benchmark cell. Defaults: n = 150 split 100/50, m = 100, sigma = 0.2, 100 reps."""

    process: ProcessSpec = field(default_factory=ProcessSpec.brownian)
    model: RegressionModelSpec = field(default_factory=lambda: RegressionModelSpec.preset(1))
    n_train: int = 100
    n_test: int = 50
    grid_size: int = 100
    reps: int = 100
    constraints: SelectionConstraints = field(default_factory=SelectionConstraints)
    order_method: str = "kmeans"
    rho: float = 0.01
    base_seed: int = 0
    forced_p: Optional[int] = None
    table_scale: Optional[float] = None

    def __post_init__(self):
        if self.reps < 1:
            raise DataError(f"reps must be >= 1, got {self.reps}")
        if self.n_train < 2 or self.n_test < 1 or self.n_train + self.n_test < 4:
            raise DataError(
                f"Need n_train >= 2, n_test >= 1 and n_train + n_test >= 4, "
                f"got {self.n_train}/{self.n_test}"
            )
        if self.grid_size < self.constraints.max_p + 1:
            raise DataError(
                f"grid_size {self.grid_size} must exceed max_p {self.constraints.max_p}"
            )
        if self.order_method not in ORDER_METHODS:
            raise DataError(f"order_method must be one of {ORDER_METHODS}")
        if not self.rho > 0:
            raise DataError(f"rho must be > 0, got {self.rho}")
        if self.base_seed < 0:
            raise DataError(f"base_seed must be >= 0, got {self.base_seed}")
        if self.forced_p is not None and not 1 <= self.forced_p <= self.constraints.max_p:
            raise DataError(f"forced_p must lie in [1, max_p], got {self.forced_p}")

    @property
    def label(self) -> str:
        return f"{self.process.label} / model {self.model.model_id}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "process": self.process.to_dict(),
            "model": self.model.to_dict(),
            "n_train": self.n_train,
            "n_test": self.n_test,
            "grid_size": self.grid_size,
            "reps": self.reps,
            "constraints": self.constraints.to_dict(),
            "order_method": self.order_method,
            "rho": self.rho,
            "base_seed": self.base_seed,
            "forced_p": self.forced_p,
            "table_scale": self.table_scale,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DataError(f"Unknown config keys: {sorted(unknown)}")

        values = dict(data)
        if "process" in values:
            values["process"] = ProcessSpec.from_dict(values["process"])
        if "model" in values:
            values["model"] = RegressionModelSpec.from_dict(values["model"])
        if "constraints" in values:
            values["constraints"] = SelectionConstraints.from_dict(values["constraints"])
        return cls(**values)


def configs_from_dict(data: Dict[str, Any]) -> List[ExperimentConfig]:
    """One config, or one per entry of a "processes" list."""
    if "processes" not in data:
        return [ExperimentConfig.from_dict(data)]
    if "process" in data:
        raise DataError("Give either 'process' or 'processes', not both")

    shared = {k: v for k, v in data.items() if k != "processes"}
    return [ExperimentConfig.from_dict({**shared, "process": p}) for p in data["processes"]]


def load_configs(path: PathLike) -> List[ExperimentConfig]:
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"Invalid JSON config: {e.msg}", path, e.lineno, e.colno) from None
    if not isinstance(data, dict):
        raise DataError("Config must be a JSON object", path=path)
    return configs_from_dict(data)


@dataclass
class ReplicationRecord:
    """Outcome of one seeded replication."""

    rep_index: int
    seed: int
    rmse: Optional[float] = None
    hausdorff: Optional[float] = None
    p_hat: Optional[int] = None
    p_star: Optional[int] = None
    selected_times: List[float] = field(default_factory=list)
    coverage: Optional[bool] = None
    warnings: List[str] = field(default_factory=list)
    error: Optional[str] = None
    wall_time: float = field(default=0.0, compare=False)

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "rep_index": self.rep_index,
            "seed": self.seed,
            "rmse": self.rmse,
            "hausdorff": self.hausdorff,
            "p_hat": self.p_hat,
            "p_star": self.p_star,
            "selected_times": self.selected_times,
            "coverage": self.coverage,
            "warnings": self.warnings,
            "error": self.error,
            "wall_time": self.wall_time,
        }
        # no true points, no selection accuracy
        for key in ("hausdorff", "p_star", "coverage"):
            if data[key] is None:
                del data[key]
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ReplicationRecord":
        return cls(**{f.name: data[f.name] for f in fields(cls) if f.name in data})


def _covers(selected: Sequence[float], truth: Sequence[float], step: float) -> bool:
    """Every true point lies within one grid step of some selected point."""
    if not selected:
        return False
    picked = np.asarray(selected)
    return all(np.min(np.abs(picked - t)) <= step * (1 + 1e-9) for t in truth)


def run_replication(config: ExperimentConfig, rep_index: int) -> ReplicationRecord:
    """Simulate n_train + n_test curves with seed base_seed + rep_index and score the method."""
    seed = config.base_seed + rep_index
    record = ReplicationRecord(rep_index=rep_index, seed=seed, p_star=config.model.p_star)
    start = time.perf_counter()

    try:
        path_seed, noise_seed, split_seed = derive_seeds(seed)
        grid = Grid.equispaced(config.grid_size)
        n = config.n_train + config.n_test

        paths = sample_paths(config.process, grid, n, path_seed)
        responses = gen_response(config.model, paths, grid, noise_seed)
        parts = split(Dataset(grid, paths, responses), config.n_train, split_seed)

        est = estimate_moments(parts.train)
        path = greedy_select(est, grid, config.constraints)
        if not len(path):
            raise SelectionError("Greedy selection returned an empty path")

        if config.forced_p is not None:
            p_hat = min(config.forced_p, len(path))
        else:
            series = qmax_series(path)
            p_hat = estimate_p(series, config.order_method, config.rho)
            record.warnings = order_warnings(series, config.order_method)

        chosen = path.truncated(p_hat)
        predictor = fit(est, chosen.selected, grid)
        record.rmse = rmse(predict(predictor, parts.test.trajectories), parts.test.responses)
        record.p_hat = p_hat
        record.selected_times = list(chosen.times)

        if config.model.is_sparse:
            score = score_selection(chosen.times, config.model.true_points)
            record.hausdorff = score.hausdorff
            record.coverage = _covers(chosen.times, config.model.true_points, grid.step)
    except (ValueError, ArithmeticError) as e:  # DataError, NumericalError and LinAlgError included
        record.error = f"{type(e).__name__}: {e}"
        LOGGER.warning("Replication %d (seed %d) of %s failed: %s",
                       rep_index, seed, config.label, e)

    record.wall_time = time.perf_counter() - start
    return record


def _mean_sd(values: Sequence[float]) -> Optional[Dict[str, float]]:
    if not values:
        return None
    data = np.asarray(values, dtype=float)
    sd = float(np.std(data, ddof=1)) if data.size > 1 else 0.0
    return {"mean": float(np.mean(data)), "sd": sd, "count": int(data.size)}


@dataclass
class ExperimentReport:
    """Per-replication records, mean/sd aggregates, and the config that produced them."""

    config: ExperimentConfig
    records: List[ReplicationRecord]
    aggregates: Dict[str, Optional[Dict[str, float]]]
    failed_reps: int = 0
    software_version: str = __version__

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "records": [r.to_dict() for r in self.records],
            "aggregates": self.aggregates,
            "failed_reps": self.failed_reps,
            "software_version": self.software_version,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentReport":
        return cls(
            config=ExperimentConfig.from_dict(data["config"]),
            records=[ReplicationRecord.from_dict(r) for r in data["records"]],
            aggregates=data["aggregates"],
            failed_reps=int(data.get("failed_reps", 0)),
            software_version=data.get("software_version", __version__),
        )


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> ExperimentReport:
    """Run every replication and aggregate the successful ones.

    Seeding is per replication, so serial and parallel runs give identical records.
    """
    indices = range(config.reps)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(partial(run_replication, config), indices))
    else:
        records = [run_replication(config, i) for i in indices]

    failed = sum(r.failed for r in records)
    if failed > FAILURE_CAP * config.reps:
        raise ExperimentError("Too many failed replications", failed, config.reps, config.label)
    if failed:
        LOGGER.warning("%d of %d replications of %s failed and are excluded",
                       failed, config.reps, config.label)

    ok = [r for r in records if not r.failed]
    aggregates = {
        name: _mean_sd([getattr(r, name) for r in ok if getattr(r, name) is not None])
        for name in AGGREGATED
    }
    return ExperimentReport(config, records, aggregates, failed_reps=failed)


def write_report(report: ExperimentReport, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2)


def read_report(path: PathLike) -> ExperimentReport:
    with open(path, encoding="utf-8") as f:
        return ExperimentReport.from_dict(json.load(f))


def write_reports(reports: Sequence[ExperimentReport], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"reports": [r.to_dict() for r in reports]}, f, indent=2)


def read_reports(path: PathLike) -> List[ExperimentReport]:
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    if "reports" not in data:
        return [ExperimentReport.from_dict(data)]
    return [ExperimentReport.from_dict(r) for r in data["reports"]]


def scale_label(scale: float) -> str:
    """'1e-2' for 0.01."""
    exponent = math.log10(scale)
    if abs(exponent - round(exponent)) < 1e-9:
        return f"1e{int(round(exponent))}"
    return f"{scale:g}"


def _cell(aggregate: Optional[Dict[str, float]], scale: float = 1.0) -> str:
    if aggregate is None:
        return ""
    return f"{aggregate['mean'] / scale:.3g} ({aggregate['sd'] / scale:.3g})"


def export_table_csv(
    reports: Sequence[ExperimentReport], path: PathLike, scale: Optional[float] = None
) -> None:
    """One row per process; RMSE, Hausdorff and p̂ as 'mean (sd)'."""
    if scale is None:
        scales = {r.config.table_scale for r in reports if r.config.table_scale is not None}
        scale = scales.pop() if len(scales) == 1 else None

    rmse_header = "rmse" if scale is None else f"rmse (scale {scale_label(scale)})"
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["process", "model", rmse_header, "hausdorff", "p_hat", "failed"])
        for report in reports:
            writer.writerow([
                report.config.process.label,
                report.config.model.model_id,
                _cell(report.aggregates.get("rmse"), scale or 1.0),
                _cell(report.aggregates.get("hausdorff")),
                _cell(report.aggregates.get("p_hat")),
                report.failed_reps,
            ])


@dataclass
class SelectionReport:
    """Selected points, order estimate and fitted predictor for one dataset."""

    selected_indices: List[int]
    selected_times: List[float]
    qmax_series: List[float]
    log_gaps: List[float]
    p_hat: int
    order_method: str
    coefficients: List[float]
    intercept: float
    warnings: List[str] = field(default_factory=list)
    grid_times: List[float] = field(default_factory=list)
    source_domain: Optional[Tuple[float, float]] = None
    train_n: Optional[int] = None

    def predictor(self) -> LinearPredictor:
        return LinearPredictor(
            indices=self.selected_indices,
            times=self.selected_times,
            coefficients=self.coefficients,
            intercept=self.intercept,
            train_n=self.train_n,
            grid_times=self.grid_times or None,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "selected_indices": self.selected_indices,
            "selected_times": self.selected_times,
            "qmax_series": self.qmax_series,
            "log_gaps": self.log_gaps,
            "p_hat": self.p_hat,
            "order_method": self.order_method,
            "coefficients": self.coefficients,
            "intercept": self.intercept,
            "warnings": self.warnings,
            "grid_times": self.grid_times,
            "source_domain": list(self.source_domain) if self.source_domain else None,
            "train_n": self.train_n,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SelectionReport":
        values = {f.name: data[f.name] for f in fields(cls) if f.name in data}
        if values.get("source_domain") is not None:
            values["source_domain"] = tuple(values["source_domain"])
        return cls(**values)


def select_on_dataset(
    dataset: Dataset,
    constraints: Optional[SelectionConstraints] = None,
    order_method: str = "kmeans",
    rho: float = 0.01,
) -> SelectionReport:
    """Estimate, select, estimate p̂ and fit on the whole (training) dataset."""
    est = estimate_moments(dataset)
    path = greedy_select(est, dataset.grid, constraints)

    notes = []
    if dataset.source_domain is not None:
        a, b = dataset.source_domain
        notes.append(f"grid rescaled from [{a:g}, {b:g}] onto (0, 1]")

    if len(path):
        series = qmax_series(path)
        p_hat = estimate_p(series, order_method, rho)
        notes.extend(order_warnings(series, order_method))
        values, log_gaps = series.values.tolist(), series.log_gaps.tolist()
    else:
        p_hat, values, log_gaps = 0, [], []
        notes.append("no admissible candidate: empty selection")

    chosen = path.truncated(p_hat)
    predictor = fit(est, chosen.selected, dataset.grid)
    return SelectionReport(
        selected_indices=list(chosen.selected),
        selected_times=list(chosen.times),
        qmax_series=values,
        log_gaps=log_gaps,
        p_hat=p_hat,
        order_method=order_method,
        coefficients=predictor.coefficients.tolist(),
        intercept=predictor.intercept,
        warnings=notes,
        grid_times=dataset.grid.times.tolist(),
        source_domain=dataset.source_domain,
        train_n=dataset.n,
    )


def write_selection_report(report: SelectionReport, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2)


def read_selection_report(path: PathLike) -> SelectionReport:
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    missing = {"selected_indices", "coefficients", "intercept"} - set(data)
    if missing:
        raise DataError(f"Not a selection report, missing {sorted(missing)}", path=path)
    return SelectionReport.from_dict(data)


def with_overrides(config: ExperimentConfig, **changes: Any) -> ExperimentConfig:
    """Copy of the config with the non-None changes applied."""
    return replace(config, **{k: v for k, v in changes.items() if v is not None})
