"""Tests for the Q0 criterion, its increments and the selection procedures."""

import numpy as np
import pytest
from scipy.linalg import lstsq

from rkhselect.data import DataError, Dataset, Grid
from rkhselect.estimators import estimate_moments, population_moments, submatrix
from rkhselect.processes import ProcessSpec, RegressionModelSpec, covariance_matrix, point_weights
from rkhselect.selector import (
    RedundantCandidateError,
    SelectionConstraints,
    SelectionError,
    SolverState,
    admissible_candidates,
    exhaustive_select,
    greedy_select,
    q0,
    q0_increment,
    q0_increment_semipartial,
)

MODEL1_TRUTH = [19, 39, 89]


def random_instance(seed: int, m: int = 12, n: int = 60):
    """Sample moments of random Brownian-like curves with a sparse response."""
    rng = np.random.default_rng(seed)
    paths = rng.standard_normal((n, m)).cumsum(axis=1) / np.sqrt(m)
    picks = rng.choice(m, size=min(3, m), replace=False)
    responses = paths[:, picks] @ rng.normal(0, 2, size=picks.size) + rng.normal(0, 0.5, size=n)
    grid = Grid.equispaced(m)
    return estimate_moments(Dataset(grid, paths, responses)), grid


def state_over(est, indices) -> SolverState:
    state = SolverState()
    for idx in indices:
        state.accept(est, idx)
    return state


def bm_model1(m: int = 100):
    grid = Grid.equispaced(m)
    return population_moments(ProcessSpec.brownian(), RegressionModelSpec.preset(1), grid), grid


class TestQ0:
    """Test the direct criterion."""

    def test_scalar(self):
        """Test c = -0.4, sigma^2 = 0.2 gives 0.8."""
        assert q0(np.array([[0.2]]), np.array([-0.4])) == pytest.approx(0.8)

    def test_zero_cross_covariance(self):
        """Test c = 0 gives 0."""
        assert q0(np.eye(3), np.zeros(3)) == 0.0

    def test_true_points_brownian(self):
        """Test Q0 at (0.2, 0.4, 0.9) on Bm is beta' Sigma beta = 4.5."""
        times = np.array([0.2, 0.4, 0.9])
        sigma = np.minimum.outer(times, times)
        assert q0(sigma, np.array([-0.4, -1.2, -0.7])) == pytest.approx(4.5, abs=1e-12)

    def test_not_positive_definite(self):
        """Test a singular matrix reports the failing leading minor."""
        sigma = np.array([[1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(SelectionError, match="not positive definite") as info:
            q0(sigma, np.array([1.0, 1.0]))
        assert info.value.minor_index == 2

    def test_not_symmetric(self):
        """Test an asymmetric matrix is refused."""
        with pytest.raises(SelectionError, match="not symmetric"):
            q0(np.array([[1.0, 0.5], [0.0, 1.0]]), np.ones(2))

    def test_residual_identity(self):
        """Test var(Y) - Q0(T*) equals the noise variance on model 1."""
        grid = Grid.equispaced(100)
        model = RegressionModelSpec.preset(1, noise_sigma=0.2)
        kernel = covariance_matrix(ProcessSpec.brownian(), grid)
        w = point_weights(model, grid)
        var_y = w @ kernel @ w + model.noise_sigma**2

        est = population_moments(ProcessSpec.brownian(), model, grid)
        sigma, c = submatrix(est, MODEL1_TRUTH)
        assert q0(sigma, c) == pytest.approx(w @ kernel @ w, rel=1e-12)
        assert var_y - q0(sigma, c) == pytest.approx(0.04, abs=1e-12)


class TestIncrements:
    """Test the recursive and semi-partial increments."""

    def test_empty_state(self):
        """Test the first increment is c^2 / sigma^2."""
        est, _ = random_instance(0)
        state = SolverState()
        for k in (0, 5, 11):
            expected = est.cross_cov[k] ** 2 / est.variances[k]
            assert q0_increment(state, est, k) == pytest.approx(expected, rel=1e-12)
            assert q0_increment_semipartial(state, est, k) == pytest.approx(expected, rel=1e-10)

    def test_matches_direct_difference(self):
        """Test Q0(T + t) - Q0(T) equals the increment on a 5-point instance."""
        est, _ = random_instance(1)
        selected = [2, 6, 9, 0, 4]
        state = state_over(est, selected)
        base = q0(*submatrix(est, selected))
        for k in (1, 7, 11):
            grown = q0(*submatrix(est, selected + [k]))
            assert q0_increment(state, est, k) == pytest.approx(grown - base, rel=1e-9, abs=1e-12 * grown)

    def test_already_selected_is_redundant(self):
        """Test a selected index cannot be scored again."""
        est, _ = random_instance(2)
        state = state_over(est, [3])
        with pytest.raises(RedundantCandidateError, match="redundant"):
            q0_increment(state, est, 3)
        with pytest.raises(RedundantCandidateError, match="redundant"):
            q0_increment_semipartial(state, est, 3)

    def test_collinear_candidate_is_redundant(self):
        """Test a column that duplicates a selected one has a vanishing denominator."""
        rng = np.random.default_rng(5)
        paths = rng.standard_normal((30, 4))
        paths[:, 3] = paths[:, 1]
        est = estimate_moments(Dataset(Grid.equispaced(4), paths, rng.standard_normal(30)))
        state = state_over(est, [1])
        with pytest.raises(RedundantCandidateError, match="below tolerance") as info:
            q0_increment(state, est, 3)
        assert info.value.candidate == 3

    def test_semipartial_agrees(self):
        """Test both increment forms agree on 100 random instances."""
        for seed in range(100):
            est, _ = random_instance(seed, m=15)
            rng = np.random.default_rng(seed + 1000)
            order = rng.permutation(15)
            state = state_over(est, order[: rng.integers(0, 4)])
            k = int(order[-1])
            recursive = q0_increment(state, est, k)
            semipartial = q0_increment_semipartial(state, est, k)
            assert semipartial == pytest.approx(recursive, rel=1e-8, abs=1e-14), seed

    def test_residualized_numerator(self):
        """Test replacing X(t) by its residual in the numerator leaves the value unchanged."""
        est, _ = random_instance(3)
        selected = [1, 5, 8]
        state = state_over(est, selected)
        x, y = est.centered_paths, est.centered_responses
        chosen = x[:, selected]
        y_resid = y - chosen @ lstsq(chosen, y)[0]
        x_resid = x[:, 10] - chosen @ lstsq(chosen, x[:, 10])[0]
        n = x.shape[0]

        value = (y_resid @ x_resid / n) ** 2 / (x_resid @ x_resid / n)
        assert value == pytest.approx(q0_increment_semipartial(state, est, 10), rel=1e-9)

    def test_semipartial_needs_sample(self):
        """Test population moments cannot use the residual form."""
        est, _ = bm_model1(10)
        with pytest.raises(SelectionError, match="sample"):
            q0_increment_semipartial(SolverState(), est, 0)

    @pytest.mark.slow
    def test_three_forms_agree_on_many_instances(self):
        """Test recursive, semi-partial and direct increments agree on 1000 small instances."""
        rng = np.random.default_rng(2024)
        for seed in range(1000):
            m = int(rng.integers(6, 31))
            est, _ = random_instance(seed, m=m, n=int(rng.integers(40, 80)))
            p = int(rng.integers(0, 5))
            order = rng.permutation(m)
            selected = [int(i) for i in order[:p]]
            k = int(order[p])
            state = state_over(est, selected)

            recursive = q0_increment(state, est, k)
            semipartial = q0_increment_semipartial(state, est, k)
            grown = q0(*submatrix(est, selected + [k]))
            direct = grown - q0(*submatrix(est, selected))
            assert semipartial == pytest.approx(recursive, rel=1e-8, abs=1e-14), seed
            assert direct == pytest.approx(recursive, rel=1e-8, abs=1e-10 * grown), seed


class TestAdmissibleCandidates:
    """Test the separation rule."""

    def test_no_selection(self):
        """Test an empty selection leaves the whole grid."""
        grid = Grid.equispaced(10)
        assert admissible_candidates(grid, [], 0.5).tolist() == list(range(10))

    def test_zero_delta(self):
        """Test delta = 0 only removes the selected index."""
        grid = Grid.equispaced(10)
        assert admissible_candidates(grid, [4], 0.0).tolist() == [0, 1, 2, 3, 5, 6, 7, 8, 9]

    def test_neighbours_excluded(self):
        """Test delta = 0.015 around 0.50 removes 0.49, 0.50 and 0.51."""
        grid = Grid.equispaced(100)
        centre = grid.index_of(0.5)
        remaining = set(admissible_candidates(grid, [centre], 0.015).tolist())
        assert remaining == set(range(100)) - {centre - 1, centre, centre + 1}

    def test_one_step_keeps_neighbours(self):
        """Test the default separation of one grid step keeps adjacent points."""
        grid = Grid.equispaced(100)
        remaining = admissible_candidates(grid, [50], grid.step)
        assert 49 in remaining and 51 in remaining and 50 not in remaining


class TestGreedySelect:
    """Test forward selection."""

    def test_population_first_pick(self):
        """Test the first population pick is t = 0.4 with Q = 3.6."""
        est, grid = bm_model1()
        path = greedy_select(est, grid, SelectionConstraints(max_p=1))
        assert path.times == [pytest.approx(0.4)]
        assert path.qmax_after[0] == pytest.approx(3.6, abs=1e-8)

    def test_population_recovers_true_points(self):
        """Test three population steps return {0.2, 0.4, 0.9} with Q = 4.5."""
        est, grid = bm_model1()
        path = greedy_select(est, grid, SelectionConstraints(max_p=3))
        assert sorted(path.selected) == MODEL1_TRUTH
        assert path.qmax_after == [pytest.approx(v, abs=1e-8) for v in (3.6, 4.1, 4.5)]

    def test_one_step_equals_exhaustive(self):
        """Test greedy with max_p = 1 matches the exhaustive p = 1 optimum."""
        est, grid = random_instance(7, m=20)
        path = greedy_select(est, grid, SelectionConstraints(max_p=1))
        best, value = exhaustive_select(est, grid, 1)
        assert path.selected == best
        assert path.qmax_after[0] == pytest.approx(value, rel=1e-12)

    def test_path_invariants(self):
        """Test monotone Q values, separation and length cap along a path."""
        est, grid = random_instance(8, m=40, n=120)
        constraints = SelectionConstraints(delta=0.05, max_p=6)
        path = greedy_select(est, grid, constraints)

        assert len(path) == len(path.qmax_after) <= 6
        assert np.all(np.diff(path.qmax_after) >= 0)
        times = np.sort(path.times)
        assert np.all(np.diff(times) >= 0.05 - 1e-9 * grid.step)

    def test_running_sum_matches_direct(self):
        """Test every prefix Q value equals the direct criterion."""
        est, grid = random_instance(9, m=30, n=100)
        path = greedy_select(est, grid, SelectionConstraints(max_p=8))
        for p in range(1, len(path) + 1):
            direct = q0(*submatrix(est, path.selected[:p]))
            assert path.qmax_after[p - 1] == pytest.approx(direct, rel=1e-8)

    def test_coefficients_per_step(self):
        """Test recorded coefficients solve the normal equations at each step."""
        est, grid = random_instance(10, m=20)
        path = greedy_select(est, grid, SelectionConstraints(max_p=4))
        for p, beta in enumerate(path.coeffs_at_each_step, start=1):
            sigma, c = submatrix(est, path.selected[:p])
            assert np.allclose(sigma @ beta, c)

    def test_scale_equivariance(self):
        """Test scaling Y by 3 scales Q by 9 and keeps the selected sequence."""
        rng = np.random.default_rng(11)
        paths = rng.standard_normal((80, 25)).cumsum(axis=1)
        responses = paths[:, 4] - 2 * paths[:, 17] + rng.standard_normal(80)
        grid = Grid.equispaced(25)
        base = greedy_select(estimate_moments(Dataset(grid, paths, responses)), grid)
        scaled = greedy_select(estimate_moments(Dataset(grid, paths, 3 * responses)), grid)

        assert scaled.selected == base.selected
        assert np.allclose(scaled.qmax_after, 9 * np.asarray(base.qmax_after), rtol=1e-10)

    def test_truncated_prefix(self):
        """Test truncation keeps the first p picks and their solver state."""
        est, grid = random_instance(12, m=20)
        path = greedy_select(est, grid, SelectionConstraints(max_p=5))
        head = path.truncated(2)
        assert head.selected == path.selected[:2]
        assert head.solver_state.q == pytest.approx(path.qmax_after[1])
        assert len(path.truncated(99)) == len(path)

    def test_stops_when_all_candidates_redundant(self):
        """Test constant trajectories give an empty path."""
        grid = Grid.equispaced(5)
        est = estimate_moments(Dataset(grid, np.ones((6, 5)), np.arange(6.0)))
        assert len(greedy_select(est, grid)) == 0

    def test_grid_mismatch(self):
        """Test estimates and grid must have the same length."""
        est, _ = random_instance(0, m=12)
        with pytest.raises(DataError, match="grid has 13"):
            greedy_select(est, Grid.equispaced(13))


class TestExhaustiveSelect:
    """Test the brute-force oracle."""

    def test_scalar_case(self):
        """Test p = 1 is the argmax of c^2 / sigma^2."""
        est, grid = random_instance(13)
        best, value = exhaustive_select(est, grid, 1)
        ratios = est.cross_cov**2 / est.variances
        assert best == [int(np.argmax(ratios))]
        assert value == pytest.approx(ratios.max(), rel=1e-12)

    def test_zero_cross_covariance(self):
        """Test an all-zero c returns Q = 0 and the first admissible subset."""
        grid = Grid.equispaced(6)
        rng = np.random.default_rng(14)
        est = estimate_moments(Dataset(grid, rng.standard_normal((20, 6)), np.full(20, 3.0)))
        best, value = exhaustive_select(est, grid, 2)
        assert value == 0.0
        assert best == [0, 1]

    def test_cap(self):
        """Test enumeration refuses more subsets than the cap."""
        est, grid = random_instance(15, m=30)
        with pytest.raises(SelectionError, match="enumeration cap"):
            exhaustive_select(est, grid, 5, max_subsets=1000)

    def test_population_three_points(self):
        """Test the exhaustive p = 3 optimum on a coarse Bm grid is the true set."""
        est, grid = bm_model1(20)
        best, value = exhaustive_select(est, grid, 3)
        assert [grid.times[i] for i in best] == [pytest.approx(t) for t in (0.2, 0.4, 0.9)]
        assert value == pytest.approx(4.5, abs=1e-10)

    @pytest.mark.slow
    def test_dominates_greedy(self):
        """Test exhaustive p = 2 is at least greedy's two-step value on 200 instances."""
        for seed in range(200):
            est, grid = random_instance(seed, m=12)
            path = greedy_select(est, grid, SelectionConstraints(max_p=2))
            _, best2 = exhaustive_select(est, grid, 2)
            _, best1 = exhaustive_select(est, grid, 1)
            assert best2 >= path.qmax_after[1] - 1e-10 * abs(path.qmax_after[1]), seed
            assert best1 == pytest.approx(path.qmax_after[0], rel=1e-12), seed
