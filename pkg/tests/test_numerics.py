import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from trendhmm.numerics import (
    SingularSystemError,
    WlsProblem,
    best_permutation,
    fit_line,
    log_sum_exp,
    solve_wls,
)

finite = st.floats(-700, 700, allow_nan=False)


class TestLogSumExp:
    def test_two_zeros(self):
        assert log_sum_exp([0.0, 0.0]) == pytest.approx(0.6931471805599453, abs=1e-15)

    def test_large_negative(self):
        assert log_sum_exp([-1000.0, -1000.0]) == pytest.approx(-1000 + math.log(2), abs=1e-12)

    def test_all_minus_inf(self):
        assert log_sum_exp([-np.inf, -np.inf]) == -np.inf

    def test_empty(self):
        with pytest.raises(ValueError):
            log_sum_exp([])

    def test_against_naive(self, rng):
        v = rng.normal(0, 20, size=100)
        m = v.max()
        naive = m + math.log(math.fsum(math.exp(x - m) for x in v))
        assert log_sum_exp(v) == pytest.approx(naive, abs=1e-12)

    @settings(max_examples=300, deadline=None)
    @given(st.lists(finite, min_size=1, max_size=30), st.floats(-1e3, 1e3))
    def test_shift_invariance(self, values, c):
        v = np.array(values)
        assert log_sum_exp(v + c) == pytest.approx(log_sum_exp(v) + c, abs=1e-12 * max(1.0, abs(c) + np.abs(v).max()))


class TestSolveWls:
    def test_identity(self, rng):
        y = rng.normal(size=4)
        assert_allclose(solve_wls(WlsProblem(np.eye(4), y, np.ones(4))), y, atol=1e-14)

    def test_exact_quadratic(self):
        x = np.linspace(-2, 3, 9)
        beta = np.array([1.5, -0.25, 2.0])
        a = np.vander(x, 3, increasing=True)
        assert_allclose(solve_wls(WlsProblem(a, a @ beta, np.ones(9))), beta, atol=1e-9)

    def test_against_pseudo_inverse(self, rng):
        a = rng.normal(size=(50, 4))
        y = rng.normal(size=50)
        w = rng.uniform(0.1, 3.0, size=50)
        prob = WlsProblem(a, y, w)
        sw = np.sqrt(w)
        oracle = np.linalg.pinv(a * sw[:, None]) @ (y * sw)
        beta = solve_wls(prob)
        assert prob.objective(beta) == pytest.approx(prob.objective(oracle), abs=1e-10)
        assert_allclose(beta, oracle, atol=1e-10)

    def test_zero_weights_drop_rows(self, rng):
        a = rng.normal(size=(10, 2))
        y = rng.normal(size=10)
        w = np.r_[np.ones(5), np.zeros(5)]
        assert_allclose(solve_wls(WlsProblem(a, y, w)), solve_wls(WlsProblem(a[:5], y[:5], np.ones(5))), atol=1e-12)

    def test_rank_deficient(self):
        a = np.column_stack([np.ones(5), 2 * np.ones(5)])
        with pytest.raises(SingularSystemError) as info:
            solve_wls(WlsProblem(a, np.arange(5.0), np.ones(5)))
        assert info.value.rank == 1 and info.value.n_params == 2

    def test_too_few_weighted_rows(self):
        with pytest.raises(SingularSystemError):
            solve_wls(WlsProblem(np.eye(3), np.ones(3), [1.0, 0.0, 0.0]))

    def test_validation(self):
        with pytest.raises(ValueError):
            WlsProblem(np.eye(3), np.ones(2), np.ones(3))
        with pytest.raises(ValueError):
            WlsProblem(np.eye(3), np.ones(3), [1.0, -1.0, 1.0])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
    def test_weight_scale_invariance(self, seed, c):
        r = np.random.default_rng(seed)
        a = r.normal(size=(30, 3))
        y = r.normal(size=30)
        w = r.uniform(0.1, 2.0, size=30)
        assert_allclose(solve_wls(WlsProblem(a, y, c * w)), solve_wls(WlsProblem(a, y, w)), atol=1e-8)


class TestBestPermutation:
    def test_identity(self):
        assert best_permutation(1 - np.eye(3)) == (0, 1, 2)

    def test_swap(self):
        assert best_permutation([[5.0, 1.0], [1.0, 5.0]]) == (1, 0)

    def test_exhaustive_oracle(self, rng):
        for _ in range(20):
            c = rng.uniform(size=(3, 3))
            vals = {p: sum(c[p[x], x] for x in range(3)) for p in itertools.permutations(range(3))}
            assert best_permutation(c) == min(vals, key=vals.get)

    def test_ties_are_lexicographic(self):
        assert best_permutation(np.zeros((3, 3))) == (0, 1, 2)

    def test_tiebreak(self):
        tb = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert best_permutation(np.zeros((2, 2)), tiebreak=tb) == (1, 0)

    def test_limits(self):
        with pytest.raises(ValueError):
            best_permutation(np.zeros((11, 11)))
        with pytest.raises(ValueError):
            best_permutation(np.zeros((2, 3)))

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 5), st.integers(0, 2**32 - 1))
    def test_not_worse_than_identity(self, k, seed):
        c = np.random.default_rng(seed).uniform(size=(k, k))
        p = best_permutation(c)
        assert sum(c[p[x], x] for x in range(k)) <= np.trace(c) + 1e-12


class TestFitLine:
    def test_exact(self):
        x = np.arange(5.0)
        s, i = fit_line(x, 2 * x + 1)
        assert s == pytest.approx(2.0, abs=1e-14) and i == pytest.approx(1.0, abs=1e-14)

    def test_repeated_x(self):
        with pytest.raises(ValueError):
            fit_line([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_against_wls(self, rng):
        x = rng.uniform(0, 10, size=20)
        y = 0.3 * x - 2 + rng.normal(size=20)
        beta = solve_wls(WlsProblem(np.column_stack([np.ones(20), x]), y, np.ones(20)))
        s, i = fit_line(x, y)
        assert s == pytest.approx(beta[1], abs=1e-12) and i == pytest.approx(beta[0], abs=1e-12)
