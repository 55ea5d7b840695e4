"""Exact inference for Gaussian HMMs with trends (log-domain forward-backward)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import ModelParams, Trajectory
from .numerics import log_sum_exp

LOG_2PI = float(np.log(2.0 * np.pi))


class InstanceTooLargeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Posteriors:
    """Smoothing marginals ``gamma[t, x]``, pair marginals ``xi[t, x, x']`` and ``loglik``."""

    gamma: np.ndarray
    xi: np.ndarray
    loglik: float

    def transition_counts(self) -> np.ndarray:
        """Expected number of ``x -> x'`` transitions."""
        return self.xi.sum(axis=0)


def _log(a) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(a, dtype=float))


def gaussian_logdensity(y, means, variances) -> np.ndarray:
    """Broadcasted ``log N(y; mean, var)``; ``y`` of shape ``(n,)`` against ``(n, K)`` means."""
    y = np.asarray(y, dtype=float)
    var = np.asarray(variances, dtype=float)
    r = y[..., None] - means if np.ndim(means) > np.ndim(y) else y - means
    return -0.5 * (LOG_2PI + np.log(var)) - r * r / (2.0 * var)


def emission_logdensity(params: ModelParams, y: float, t: float) -> np.ndarray:
    """``log gamma_x(y - T_x(t))`` for every state ``x``."""
    means = params.trend_matrix([t])[0]
    return gaussian_logdensity(float(y), means, params.variances)


def emission_logmatrix(params: ModelParams, traj: Trajectory) -> np.ndarray:
    """``(n, K)`` log emission densities along a trajectory."""
    means = params.trend_matrix(traj.times)
    return gaussian_logdensity(traj.observations, means, params.variances)


def forward_logemission(log_pi, log_q, log_b) -> tuple[float, np.ndarray, np.ndarray]:
    """Forward pass on an arbitrary log-emission matrix.

    Returns ``(loglik, log_filter, increments)`` where ``increments[t]`` is
    ``log p(obs_t | obs_1..obs_{t-1})``.  A ``-inf`` increment makes the
    likelihood ``-inf``; filter rows after it are NaN.
    """
    log_b = np.ascontiguousarray(log_b, dtype=float)
    la, inc = _kernels.forward(
        np.ascontiguousarray(log_pi, dtype=float), np.ascontiguousarray(log_q, dtype=float), log_b
    )
    if np.any(inc == -np.inf):
        return -np.inf, la, inc
    return float(inc.sum()), la, inc


def log_forward(params: ModelParams, traj: Trajectory) -> tuple[float, np.ndarray]:
    """``(log p(Y_1^n), log P(X_t | Y_1^t))``."""
    ll, la, _ = forward_logemission(
        _log(params.initial_dist), _log(params.transition), emission_logmatrix(params, traj)
    )
    return ll, la


def posterior_logemission(log_pi, log_q, log_b) -> Posteriors:
    log_b = np.ascontiguousarray(log_b, dtype=float)
    log_q = np.ascontiguousarray(log_q, dtype=float)
    ll, la, _ = forward_logemission(log_pi, log_q, log_b)
    if not np.isfinite(ll):
        raise FloatingPointError("observations have zero likelihood under the parameter")
    lb = _kernels.backward(log_q, log_b)
    gamma, xi = _kernels.smooth(la, lb, log_q, log_b)
    return Posteriors(gamma, xi, ll)


def posterior(params: ModelParams, traj: Trajectory) -> Posteriors:
    """Forward-backward smoothing marginals of the hidden chain."""
    return posterior_logemission(
        _log(params.initial_dist), _log(params.transition), emission_logmatrix(params, traj)
    )


def _enumerate_paths(k: int, n: int, chunk: int):
    total = k ** n
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        yield np.stack(np.unravel_index(idx, (k,) * n), axis=1)


def brute_force_logemission(log_pi, log_q, log_b, max_paths: int = 10**7, chunk: int = 2**16) -> float:
    """``log sum_{x_1^n} pi(x_1) prod Q(x_t, x_{t+1}) prod b_t(x_t)`` by enumeration."""
    log_b = np.asarray(log_b, dtype=float)
    n, k = log_b.shape
    if k ** n > max_paths:
        raise InstanceTooLargeError(f"{k}^{n} paths exceeds the enumeration limit {max_paths}")
    log_pi = np.asarray(log_pi, dtype=float)
    log_q = np.asarray(log_q, dtype=float)
    parts = []
    steps = np.arange(n)
    for paths in _enumerate_paths(k, n, chunk):
        with np.errstate(invalid="ignore"):
            w = log_pi[paths[:, 0]] + log_b[steps, paths].sum(axis=1)
            if n > 1:
                w = w + log_q[paths[:, :-1], paths[:, 1:]].sum(axis=1)
        parts.append(log_sum_exp(w))
    return log_sum_exp(parts)


def brute_force_loglik(params: ModelParams, traj: Trajectory, max_paths: int = 10**7) -> float:
    """Independent oracle for :func:`log_forward`: explicit sum over all ``K**n`` paths."""
    return brute_force_logemission(
        _log(params.initial_dist), _log(params.transition), emission_logmatrix(params, traj), max_paths
    )
