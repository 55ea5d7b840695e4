"""Maximum-likelihood fitting of Gaussian HMMs with polynomial trends by EM."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .inference import Posteriors, emission_logmatrix, posterior
from .model import VARIANCE_FLOOR, ModelParams, Trajectory, TrendPoly, legendre_design, trend_sup_distance
from .numerics import SingularSystemError, WlsProblem, best_permutation, solve_wls

log = logging.getLogger(__name__)


class DegenerateStateError(RuntimeError):
    def __init__(self, state: int, weight: float, needed: float):
        super().__init__(
            f"state {state} carries posterior weight {weight:.3g} < {needed:g}; "
            "too few observations to refit its trend"
        )
        self.state = state


class FitError(RuntimeError):
    """Every EM restart failed."""

    def __init__(self, failures: Sequence[Exception]):
        msgs = "; ".join(f"restart {i}: {e}" for i, e in enumerate(failures))
        super().__init__(f"all {len(failures)} EM restarts failed ({msgs})")
        self.failures = list(failures)


@dataclass(frozen=True)
class FitConfig:
    n_states: int
    degree_bound: int = 4
    sigma_minus: float = 0.0
    max_iters: int = 500
    rel_tol: float = 1e-8
    n_restarts: int = 10
    seed: int = 0
    variance_floor: float = VARIANCE_FLOOR

    def __post_init__(self):
        if self.n_states < 1:
            raise ValueError("n_states must be >= 1")
        if self.degree_bound < 0:
            raise ValueError("degree_bound must be >= 0")
        if not 0.0 <= self.sigma_minus <= 1.0 / self.n_states:
            raise ValueError("sigma_minus must lie in [0, 1/n_states]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")
        if not self.variance_floor >= VARIANCE_FLOOR:
            raise ValueError(f"variance_floor must be >= {VARIANCE_FLOOR}")


@dataclass(frozen=True, eq=False)
class FitResult:
    params: ModelParams
    loglik_trace: np.ndarray
    restart_logliks: np.ndarray
    iterations: int
    converged: bool
    failures: tuple = field(default=())

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1])


def time_design(traj: Trajectory, degree: int) -> np.ndarray:
    return legendre_design(traj.times, traj.length, degree)


def project_transition_row(counts, sigma_minus: float) -> np.ndarray:
    """Maximiser of ``sum_j c_j log q_j`` over probability rows with ``q_j >= sigma_minus``.

    Entries falling below the floor are clipped to it and the remaining mass is
    shared among the free entries in proportion to their counts, repeated until
    no free entry violates the floor.
    """
    c = np.asarray(counts, dtype=float)
    k = c.size
    if sigma_minus <= 0.0:
        s = c.sum()
        return c / s if s > 0 else np.full(k, 1.0 / k)
    clipped = np.zeros(k, dtype=bool)
    q = np.empty(k)
    while True:
        free = ~clipped
        mass = 1.0 - sigma_minus * np.count_nonzero(clipped)
        s = c[free].sum()
        q[free] = c[free] * (mass / s) if s > 0 else mass / np.count_nonzero(free)
        q[clipped] = sigma_minus
        low = free & (q < sigma_minus)
        if not low.any():
            return q
        clipped |= low


def _uniform(k: int) -> np.ndarray:
    return np.full(k, 1.0 / k)


def _q_init(k: int, sigma_minus: float) -> np.ndarray:
    if k == 1:
        return np.ones((1, 1))
    s = max(sigma_minus, 0.1)
    return np.full((k, k), s) + np.eye(k) * (1.0 - k * s)


def _fit_labels(design, y, labels, k, floor, n_scale):
    trends, variances = [], []
    for x in range(k):
        w = (labels == x).astype(float)
        coef = solve_wls(WlsProblem(design, y, w))
        r = y - design @ coef
        variances.append(max(float(np.dot(w, r * r) / w.sum()), floor))
        trends.append(TrendPoly(coef, n_scale))
    return trends, variances


def _quantile_labels(values, k: int, edges) -> np.ndarray:
    """Label ``i`` for values between the ``edges[i-1]`` and ``edges[i]`` quantiles."""
    n = values.size
    order = np.argsort(values, kind="stable")
    labels = np.empty(n, dtype=np.int64)
    for i, idx in enumerate(np.split(order, np.round(np.asarray(edges) * n).astype(int))):
        labels[idx] = i
    return labels


# run lengths (as fractions of n) cycled through by the random-run restarts
_RUN_FRACTIONS = (1 / 50, 1 / 200, 1 / 20)


def initialize(traj: Trajectory, config: FitConfig, restart_index: int = 0) -> ModelParams:
    """Starting point for EM restart ``restart_index``.

    Restart 0 removes the common drift with a pooled polynomial fit, cuts the
    residuals into ``K`` quantile bands and fits each band separately.  Every
    third later restart does the same with jittered band edges and perturbed
    coefficients.  The others label time by random contiguous runs (a moving
    average of uniform noise cut into ``K`` quantile bands); residual bands can
    only produce trends that never cross, and crossing trends are common.
    """
    k, d, n = config.n_states, config.degree_bound, traj.length
    if n < k * (d + 2):
        raise ValueError(f"need at least K*(d+2) = {k * (d + 2)} observations, got {n}")
    design = time_design(traj, d)
    y = traj.observations
    base = solve_wls(WlsProblem(design, y, np.ones(n)))
    resid = y - design @ base
    floor = config.variance_floor
    if k == 1:
        var = max(float(np.mean(resid**2)), floor)
        return ModelParams([1.0], [[1.0]], [var], [TrendPoly(base, n)], config.sigma_minus)

    rng = np.random.default_rng([config.seed, restart_index])
    edges = np.arange(1, k) / k
    if restart_index == 0 or restart_index % 3 == 0:
        if restart_index > 0:
            edges = np.sort(np.clip(edges + rng.normal(0.0, 0.15 / k, size=k - 1), 0.05, 0.95))
        labels = _quantile_labels(resid, k, edges)
    else:
        frac = _RUN_FRACTIONS[(restart_index - 1) % len(_RUN_FRACTIONS)]
        width = max(d + 2, int(round(frac * n)))
        field_ = np.convolve(rng.random(n), np.ones(width) / width, mode="same")
        labels = _quantile_labels(field_, k, edges)
    counts = np.bincount(labels, minlength=k)
    if counts.min() < d + 1:
        labels = _quantile_labels(resid, k, np.arange(1, k) / k)
    trends, variances = _fit_labels(design, y, labels, k, floor, n)
    if restart_index > 0 and restart_index % 3 == 0:
        sd = np.sqrt(variances)
        trends = [TrendPoly(tr.coefficients + rng.normal(0.0, s, size=d + 1), n) for tr, s in zip(trends, sd)]
    return ModelParams(_uniform(k), _q_init(k, config.sigma_minus), variances, trends, config.sigma_minus)


def m_step(traj: Trajectory, post: Posteriors, config: FitConfig) -> ModelParams:
    """Exact maximiser of the EM auxiliary function given smoothing posteriors."""
    k, d, n = config.n_states, config.degree_bound, traj.length
    if post.gamma.shape != (n, k):
        raise ValueError(f"posteriors of shape {post.gamma.shape} do not match ({n}, {k})")
    design = time_design(traj, d)
    y = traj.observations
    weight = post.gamma.sum(axis=0)
    needed = 10.0 * (d + 1)
    trends, variances = [], []
    for x in range(k):
        if weight[x] < needed:
            raise DegenerateStateError(x, float(weight[x]), needed)
        g = post.gamma[:, x]
        try:
            coef = solve_wls(WlsProblem(design, y, g))
        except SingularSystemError as exc:
            raise DegenerateStateError(x, float(weight[x]), needed) from exc
        r = y - design @ coef
        variances.append(max(float(np.dot(g, r * r) / weight[x]), config.variance_floor))
        trends.append(TrendPoly(coef, n))
    if k == 1:
        q = np.ones((1, 1))
    else:
        counts = post.transition_counts()
        q = np.vstack([project_transition_row(row, config.sigma_minus) for row in counts])
    return ModelParams(_uniform(k), q, variances, trends, config.sigma_minus)


def run_em(traj: Trajectory, init: ModelParams, config: FitConfig) -> tuple[ModelParams, list, bool]:
    """EM iterations from ``init``; returns ``(params, loglik_trace, converged)``.

    ``loglik_trace[0]`` is the likelihood of ``init`` and ``loglik_trace[i]`` the
    likelihood after ``i`` iterations, always of the returned parameter at the end.
    """
    params = init
    post = posterior(params, traj)
    trace = [post.loglik]
    for _ in range(config.max_iters):
        params = m_step(traj, post, config)
        post = posterior(params, traj)
        trace.append(post.loglik)
        if abs(trace[-1] - trace[-2]) / (1.0 + abs(trace[-1])) < config.rel_tol:
            return params, trace, True
    return params, trace, False


def em_fit(
    traj: Trajectory,
    config: FitConfig,
    warm_starts: Sequence[ModelParams] = (),
    include_default_restarts: bool = True,
) -> FitResult:
    """Best EM run over ``config.n_restarts`` initialisations plus ``warm_starts``.

    Failed restarts get a ``-inf`` entry in ``restart_logliks``.  Ties go to the
    earliest restart.
    """
    starts = []
    if include_default_restarts:
        starts.extend(("restart", r) for r in range(config.n_restarts))
    starts.extend(("warm", p) for p in warm_starts)
    if not starts:
        raise ValueError("no initialisation to run EM from")

    best = None
    finals = np.full(len(starts), -np.inf)
    failures = []
    for i, (kind, arg) in enumerate(starts):
        try:
            init = initialize(traj, config, arg) if kind == "restart" else arg
            params, trace, conv = run_em(traj, init, config)
        except (DegenerateStateError, SingularSystemError, FloatingPointError) as exc:
            log.debug("EM start %d failed: %s", i, exc)
            failures.append(exc)
            continue
        finals[i] = trace[-1]
        if best is None or trace[-1] > best[1][-1]:
            best = (params, trace, conv)
    if best is None:
        raise FitError(failures)
    params, trace, conv = best
    return FitResult(params, np.asarray(trace), finals, len(trace) - 1, conv, tuple(failures))


def align_states(est: ModelParams, truth: ModelParams, horizon: float) -> tuple[int, ...]:
    """Permutation ``tau`` with ``est`` state ``tau[x]`` matched to true state ``x``.

    Minimises the summed sup-norm trend distance on ``[0, horizon]``; the summed
    variance gap breaks ties.
    """
    k = truth.n_states
    if est.n_states != k:
        raise ValueError("cannot align parameters with different numbers of states")
    trend_cost = np.array(
        [[trend_sup_distance(est.trends[i], truth.trends[x], horizon) for x in range(k)] for i in range(k)]
    )
    var_cost = np.abs(est.variances[:, None] - truth.variances[None, :])
    return best_permutation(trend_cost, tiebreak=var_cost)


def q_function(traj: Trajectory, post: Posteriors, params: ModelParams) -> float:
    """EM auxiliary function ``sum gamma log-emission + sum xi log Q`` (pi term omitted)."""
    lb = emission_logmatrix(params, traj)
    with np.errstate(divide="ignore", invalid="ignore"):
        lq = np.where(post.transition_counts() > 0, np.log(params.transition), 0.0)
    return float(np.sum(post.gamma * lb) + np.sum(post.transition_counts() * lq))
