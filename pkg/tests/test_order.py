"""Tests for estimating the number of impact points."""

import math

import numpy as np
import pytest

from rkhselect.data import DataError, Grid
from rkhselect.estimators import population_moments
from rkhselect.order import (
    QmaxSeries,
    estimate_p,
    estimate_p_kmeans,
    estimate_p_threshold,
    order_warnings,
    qmax_series,
)
from rkhselect.processes import ProcessSpec, RegressionModelSpec
from rkhselect.selector import SelectionConstraints, SelectionPath, SolverState, greedy_select


def path_with(values) -> SelectionPath:
    values = list(values)
    return SelectionPath(
        selected=list(range(len(values))),
        times=[0.1 * (i + 1) for i in range(len(values))],
        qmax_after=values,
        coeffs_at_each_step=[],
        solver_state=SolverState(),
    )


def series_from_gaps(log_gaps) -> QmaxSeries:
    gaps = np.exp(np.asarray(log_gaps, dtype=float))
    values = np.concatenate([[1.0], 1.0 + np.cumsum(gaps)])
    return QmaxSeries(values=values, log_gaps=np.asarray(log_gaps, dtype=float), gap_floor=0.0)


class TestQmaxSeries:
    """Test the log-gap series."""

    def test_log_gaps(self):
        """Test gaps (2.4, 0.1, 1e-4) become (ln 2.4, ln 0.1, ln 1e-4)."""
        series = qmax_series(path_with([2.0, 4.4, 4.5, 4.5001]))
        assert series.log_gaps == pytest.approx([0.8755, -2.3026, -9.2103], abs=1e-3)
        assert series.length == 4

    def test_single_step(self):
        """Test a one-point path has no gaps."""
        assert qmax_series(path_with([1.5])).log_gaps.size == 0

    def test_constant_tail_is_floored(self):
        """Test zero gaps map to the floor value."""
        series = qmax_series(path_with([1.0, 2.0, 2.0, 2.0]))
        floor = math.log(1e-15 * 2.0)
        assert series.log_gaps[1:] == pytest.approx([floor, floor])

    def test_empty_path(self):
        """Test an empty path has no series."""
        with pytest.raises(DataError, match="empty path"):
            qmax_series(path_with([]))


class TestKMeans:
    """Test the 2-means estimator."""

    def test_two_clusters(self):
        """Test (0.875, -2.303, -9.21, -9.21) splits after the second gap, p = 3."""
        assert estimate_p_kmeans(series_from_gaps([0.875, -2.303, -9.21, -9.21])) == 3

    def test_equal_gaps(self):
        """Test coinciding centers fall back to the full path length."""
        assert estimate_p_kmeans(series_from_gaps([-1.0, -1.0, -1.0])) == 4

    def test_first_gap_small(self):
        """Test L(1) alone in the low cluster gives p = 1."""
        series = series_from_gaps([-9.0, 0.1, 0.2])
        assert estimate_p_kmeans(series) == 1
        assert any("L(1)" in note for note in order_warnings(series, "kmeans"))

    def test_late_return_to_high_cluster(self):
        """Test p is placed after the last gap sharing L(1)'s cluster."""
        assert estimate_p_kmeans(series_from_gaps([0.0, -8.0, -0.5, -8.0, -8.1])) == 4

    def test_too_short(self):
        """Test fewer than two gaps returns the path length."""
        assert estimate_p_kmeans(series_from_gaps([0.3])) == 2

    def test_scale_invariance(self):
        """Test shifting every log-gap by 2 log(lambda) keeps p."""
        gaps = np.array([0.4, -1.2, -7.5, -8.0, -7.9])
        shift = 2 * math.log(3.0)
        assert estimate_p_kmeans(series_from_gaps(gaps)) == estimate_p_kmeans(
            series_from_gaps(gaps + shift)
        )


class TestThreshold:
    """Test the rho * Q(1) estimator."""

    def test_first_small_gap(self):
        """Test rho = 0.01 on (2.0, 4.4, 4.5, 4.5001) gives p = 3."""
        series = qmax_series(path_with([2.0, 4.4, 4.5, 4.5001]))
        assert estimate_p_threshold(series, 0.01) == 3

    def test_huge_rho(self):
        """Test a threshold above the first gap gives p = 1."""
        series = qmax_series(path_with([2.0, 4.4, 4.5, 4.5001]))
        assert estimate_p_threshold(series, 10.0) == 1

    def test_no_small_gap(self):
        """Test large gaps throughout give the path length."""
        series = qmax_series(path_with([1.0, 2.0, 3.0, 4.0]))
        assert estimate_p_threshold(series, 0.01) == 4

    def test_rho_must_be_positive(self):
        """Test rho <= 0 is refused."""
        series = qmax_series(path_with([1.0, 2.0]))
        with pytest.raises(DataError, match="rho"):
            estimate_p_threshold(series, 0.0)


class TestEstimateP:
    """Test the dispatcher and degenerate cases."""

    def test_population_oracle(self):
        """Test both estimators return 3 on the exact Bm / model 1 path."""
        grid = Grid.equispaced(100)
        est = population_moments(ProcessSpec.brownian(), RegressionModelSpec.preset(1), grid)
        series = qmax_series(greedy_select(est, grid, SelectionConstraints(max_p=10)))
        assert estimate_p(series, "kmeans") == 3
        assert estimate_p(series, "threshold", rho=0.01) == 3

    def test_zero_criterion(self):
        """Test an identically zero criterion returns 1 with a warning."""
        series = qmax_series(path_with([0.0, 0.0, 0.0]))
        assert estimate_p(series, "kmeans") == 1
        assert estimate_p(series, "threshold") == 1
        assert order_warnings(series, "kmeans") == [
            "criterion identically zero: no cross-covariance with the response"
        ]

    def test_range(self):
        """Test p always lies in [1, P]."""
        rng = np.random.default_rng(3)
        for _ in range(50):
            values = np.cumsum(rng.exponential(size=int(rng.integers(1, 10))) ** 3)
            series = qmax_series(path_with(values))
            for method in ("kmeans", "threshold"):
                assert 1 <= estimate_p(series, method) <= series.length

    def test_unknown_method(self):
        """Test unknown methods are refused."""
        with pytest.raises(DataError, match="Unknown order method"):
            estimate_p(qmax_series(path_with([1.0, 2.0])), "elbow")
