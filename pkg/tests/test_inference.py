import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from trendhmm.inference import (
    InstanceTooLargeError,
    brute_force_loglik,
    emission_logdensity,
    emission_logmatrix,
    log_forward,
    posterior,
    posterior_logemission,
)
from trendhmm.model import ModelParams, Trajectory, TrendPoly, simulate

from conftest import random_params


def random_instance(seed, k, n, sigma_minus=0.0):
    r = np.random.default_rng(seed)
    p = random_params(r, k, degree=2, n_scale=float(n), sigma_minus=sigma_minus)
    return p, simulate(p, n, int(r.integers(2**31)))


def path_posterior(params, traj):
    """``P(X_t = x | Y)`` and ``log p(Y)`` by summing every path in 50-digit arithmetic."""
    mpmath.mp.dps = 50
    n, k = traj.length, params.n_states
    dens = np.exp(emission_logmatrix(params, traj)).tolist()
    pi, q = params.initial_dist.tolist(), params.transition.tolist()
    gamma = [[mpmath.mpf(0)] * k for _ in range(n)]
    total = mpmath.mpf(0)
    for path in itertools.product(range(k), repeat=n):
        w = mpmath.mpf(pi[path[0]]) * dens[0][path[0]]
        for t in range(1, n):
            w *= q[path[t - 1]][path[t]] * mpmath.mpf(dens[t][path[t]])
        total += w
        for t, x in enumerate(path):
            gamma[t][x] += w
    g = np.array([[float(v / total) for v in row] for row in gamma])
    return g, float(mpmath.log(total))


class TestEmission:
    def test_standard_normal_at_zero(self):
        p = ModelParams([1.0], [[1.0]], [1.0], [TrendPoly.constant(0.0, 10)])
        assert emission_logdensity(p, 0.0, 3.0)[0] == pytest.approx(-0.9189385332046727, abs=1e-15)

    def test_mean_hit_exactly(self, rate_params):
        # T1(1e4) = 4 in the rate-study model, variance 5
        val = emission_logdensity(rate_params, 4.0, 1e4)[0]
        assert val == pytest.approx(-0.5 * math.log(2 * math.pi * 5), abs=1e-12)

    def test_translation_invariance(self, rng):
        p = random_params(rng, 3)
        c = 7.25
        shifted = p.with_(trends=tuple(tr.shifted(c) for tr in p.trends))
        assert_allclose(emission_logdensity(shifted, 1.3 + c, 4.0), emission_logdensity(p, 1.3, 4.0), atol=1e-12)


class TestForward:
    def test_single_state(self, rng):
        p = random_params(rng, 1)
        traj = simulate(p, 30, 1)
        ll, _ = log_forward(p, traj)
        assert ll == pytest.approx(emission_logmatrix(p, traj).sum(), abs=1e-10)

    def test_matches_enumeration(self):
        p, traj = random_instance(7, 3, 8)
        _, oracle = path_posterior(p, traj)
        assert log_forward(p, traj)[0] == pytest.approx(oracle, abs=1e-10)
        assert brute_force_loglik(p, traj) == pytest.approx(oracle, abs=1e-10)

    def test_two_state_seed_42(self):
        p, traj = random_instance(42, 2, 10)
        assert log_forward(p, traj)[0] == pytest.approx(brute_force_loglik(p, traj), abs=1e-10)

    def test_single_observation(self, rng):
        p = random_params(rng, 3, n_scale=1.0)
        traj = Trajectory([0.4])
        lb = emission_logmatrix(p, traj)[0]
        expected = math.log(sum(p.initial_dist[x] * math.exp(lb[x]) for x in range(3)))
        assert brute_force_loglik(p, traj) == pytest.approx(expected, abs=1e-12)
        assert log_forward(p, traj)[0] == pytest.approx(expected, abs=1e-12)

    def test_filter_rows_normalised(self):
        p, traj = random_instance(3, 3, 50)
        _, la = log_forward(p, traj)
        assert_allclose(np.exp(la).sum(axis=1), 1.0, atol=1e-12)

    def test_long_diverging_trends(self, rate_params):
        traj = simulate(rate_params, 100_000, 1)
        ll, la = log_forward(rate_params, traj)
        assert np.isfinite(ll)
        assert np.all(np.isfinite(la))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 7))
    def test_relabel_invariance(self, seed, k, n):
        p, traj = random_instance(seed, k, n)
        perm = np.random.default_rng(seed).permutation(k)
        assert log_forward(p.relabel(perm), traj)[0] == pytest.approx(log_forward(p, traj)[0], abs=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 8))
    def test_forward_equals_enumeration(self, seed, k, n):
        p, traj = random_instance(seed, k, n)
        assert abs(log_forward(p, traj)[0] - brute_force_loglik(p, traj)) <= 1e-9

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 3))
    def test_one_step_increment_bounds(self, seed, k):
        sm = 0.1
        p, traj = random_instance(seed, k, 30, sigma_minus=sm)
        lb = emission_logmatrix(p, traj)
        inc = log_forward(p, traj)[0] - log_forward(p, traj.head(29))[0]
        assert lb[-1].min() + math.log(sm) - 1e-10 <= inc <= lb[-1].max() + 1e-10

    def test_enumeration_limit(self):
        p, traj = random_instance(1, 3, 8)
        with pytest.raises(InstanceTooLargeError):
            brute_force_loglik(p, traj, max_paths=100)


class TestPosterior:
    def test_single_state(self, rng):
        p = random_params(rng, 1)
        post = posterior(p, simulate(p, 10, 0))
        assert_allclose(post.gamma, 1.0)
        assert_allclose(post.xi, 1.0)

    def test_matches_enumeration(self):
        p, traj = random_instance(99, 2, 6)
        gamma, ll = path_posterior(p, traj)
        post = posterior(p, traj)
        assert_allclose(post.gamma, gamma, atol=1e-10)
        assert post.loglik == pytest.approx(ll, abs=1e-10)

    def test_uniform_q_single_step(self, rng):
        k = 3
        p = random_params(rng, k, n_scale=1.0).with_(transition=np.full((k, k), 1 / k), initial_dist=np.full(k, 1 / k))
        traj = Trajectory([0.8])
        b = np.exp(emission_logmatrix(p, traj)[0])
        assert_allclose(posterior(p, traj).gamma[0], b / b.sum(), atol=1e-14)

    def test_shapes(self):
        p, traj = random_instance(5, 3, 12)
        post = posterior(p, traj)
        assert post.gamma.shape == (12, 3)
        assert post.xi.shape == (11, 3, 3)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(2, 40))
    def test_marginal_consistency(self, seed, k, n):
        p, traj = random_instance(seed, k, n)
        post = posterior(p, traj)
        assert_allclose(post.gamma.sum(axis=1), 1.0, atol=1e-10)
        assert_allclose(post.xi.sum(axis=2), post.gamma[:-1], atol=1e-10)
        assert_allclose(post.xi.sum(axis=1), post.gamma[1:], atol=1e-10)
        assert post.gamma.min() >= 0 and post.gamma.max() <= 1 + 1e-12
        assert post.xi.min() >= 0 and post.xi.max() <= 1 + 1e-12

    def test_zero_likelihood(self):
        log_b = np.array([[0.0, -np.inf], [-np.inf, 0.0]])
        log_q = np.log(np.eye(2) + 1e-300)
        log_q[0, 1] = log_q[1, 0] = -np.inf
        with pytest.raises(FloatingPointError):
            posterior_logemission(np.log([0.5, 0.5]), log_q, log_b)

    def test_far_outlier_stays_finite(self):
        p = ModelParams([0.5, 0.5], [[0.9, 0.1], [0.1, 0.9]], [1e-8, 1.0], [TrendPoly.constant(0, 1), TrendPoly.constant(0, 1)])
        post = posterior(p, Trajectory([0.0, 1e6, 0.0]))
        assert np.isfinite(post.loglik)
        assert post.gamma[1, 1] == pytest.approx(1.0)
