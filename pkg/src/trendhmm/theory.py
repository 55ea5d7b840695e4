"""Numerical counterparts of the objects used in the consistency argument.

Block-augmented likelihoods, de-trending, residual trends on rescaled time,
piecewise-frozen ("homogenized") likelihoods, tube membership, Monte-Carlo
estimates of the homogeneous and integrated log-likelihood limits, and filter
forgetting.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .inference import _log, emission_logmatrix, forward_logemission, gaussian_logdensity, log_forward
from .model import (
    BlockStructure,
    ModelParams,
    Trajectory,
    TrendPoly,
    eval_trend,
    stationary_distribution,
    trend_sup_distance,
)


# --------------------------------------------------------------------------
# trend errors and tubes


def sup_trend_error(est: ModelParams, truth: ModelParams, perm: Sequence[int], n: float) -> np.ndarray:
    """``||T_est[perm[x]] - T_truth[x]||_{inf,[0,n]}`` for every true state ``x``."""
    if est.n_states != truth.n_states:
        raise ValueError("est and truth must have the same number of states")
    return np.array(
        [trend_sup_distance(est.trends[perm[x]], truth.trends[x], n) for x in range(truth.n_states)]
    )


def pairwise_sup(est: ModelParams, truth: ModelParams, n: float) -> np.ndarray:
    """``[x_true, x_est]`` matrix of sup-norm trend distances on ``[0, n]``."""
    return np.array(
        [[trend_sup_distance(te, tt, n) for te in est.trends] for tt in truth.trends]
    )


@dataclass(frozen=True, eq=False)
class TubeReport:
    M: float
    n: float
    cover_ok: bool
    containment_ok: bool
    per_pair_sup: np.ndarray

    @property
    def ok(self) -> bool:
        return self.cover_ok and self.containment_ok


def tube_check(est: ModelParams, truth: ModelParams, M: float, n: float, per_pair_sup=None) -> TubeReport:
    """Membership of ``est`` in the set of parameters whose trends cover and stay in the tubes.

    ``cover_ok``: every true trend has an estimated trend within ``M``.
    ``containment_ok``: every estimated trend is within ``M`` of some true trend.
    """
    if not M > 0:
        raise ValueError("tube size M must be positive")
    d = pairwise_sup(est, truth, n) if per_pair_sup is None else np.asarray(per_pair_sup)
    return TubeReport(
        float(M), float(n), bool(np.all(d.min(axis=1) <= M)), bool(np.all(d.min(axis=0) <= M)), d
    )


def minimal_tube_size(est: ModelParams, truth: ModelParams, n: float, tol: float = 1e-3) -> TubeReport:
    """Bisect for the smallest ``M`` (to ``tol``) at which both tube flags hold."""
    d = pairwise_sup(est, truth, n)
    hi = max(float(d.max()), tol)
    while not tube_check(est, truth, hi, n, d).ok:
        hi *= 2.0
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid > 0 and tube_check(est, truth, mid, n, d).ok:
            hi = mid
        else:
            lo = mid
    return tube_check(est, truth, hi, n, d)


# --------------------------------------------------------------------------
# blocks, de-trending, residual trends


def nearest_tube_blockmap(params: ModelParams, blocks: BlockStructure, n: float) -> tuple[tuple, np.ndarray]:
    """Assign every trend of ``params`` to the true block whose trends are nearest on ``[0, n]``.

    Returns the block map and the achieved sup distances.
    """
    members = [
        [blocks.reference_trend[b].shifted(blocks.offsets[x]) for x in blocks.members(b)]
        for b in range(blocks.n_blocks)
    ]
    blockmap, dist = [], []
    for tr in params.trends:
        per_block = [min(trend_sup_distance(tr, m, n) for m in ms) for ms in members]
        b = int(np.argmin(per_block))
        blockmap.append(b)
        dist.append(per_block[b])
    return tuple(blockmap), np.asarray(dist)


def detrend(traj: Trajectory, blocks: BlockStructure) -> Trajectory:
    """Replace ``Y_t`` with ``Y_t - Tref_{B_t}(t)``."""
    if traj.blocks is None:
        raise ValueError("de-trending needs the block label of every observation")
    ref = blocks.reference_matrix(traj.times)
    z = traj.observations - ref[np.arange(traj.length), traj.blocks]
    return Trajectory(z, traj.hidden_states, traj.blocks, traj.seed)


@dataclass(frozen=True, eq=False)
class ResidualTrend:
    """``D(u) = T_x(n u) - Tref_b(n u)`` on ``u in [0, 1]``."""

    state: int
    block: int
    difference: TrendPoly
    horizon: float
    bound: Optional[float] = None

    def __post_init__(self):
        if self.bound is not None:
            sup = trend_sup_distance(self.difference, TrendPoly.constant(0.0, self.horizon), self.horizon)
            if sup > self.bound:
                raise ValueError(
                    f"residual trend of state {self.state} reaches {sup:.6g} > bound {self.bound:.6g}"
                )

    def __call__(self, u):
        return eval_trend(self.difference, np.asarray(u, dtype=float) * self.horizon)


def residual_trends(
    params: ModelParams,
    blocks: BlockStructure,
    n: float,
    blockmap: Optional[Sequence[int]] = None,
    M: Optional[float] = None,
) -> list[ResidualTrend]:
    """Residual trends of ``params`` against the reference trends of its assigned blocks.

    With ``M`` given, each one is checked against ``M + ||Delta||_inf``.
    """
    if blockmap is None:
        blockmap, _ = nearest_tube_blockmap(params, blocks, n)
    bound = None if M is None else M + blocks.max_offset
    out = []
    for x, tr in enumerate(params.trends):
        b = int(blockmap[x])
        ref = blocks.reference_trend[b].rescaled(float(n))
        neg = TrendPoly(-ref.coefficients, ref.n_scale)
        out.append(ResidualTrend(x, b, tr.rescaled(float(n)) + neg, float(n), bound))
    return out


def _block_mask(log_b: np.ndarray, blockmap, labels) -> np.ndarray:
    ok = np.asarray(blockmap)[None, :] == np.asarray(labels)[:, None]
    return np.where(ok, log_b, -np.inf)


def _check_blockmap(params: ModelParams, blockmap) -> np.ndarray:
    bm = np.asarray(blockmap, dtype=np.int64)
    if bm.shape != (params.n_states,):
        raise ValueError("blockmap must give a block for every state")
    return bm


def block_loglik(params: ModelParams, traj: Trajectory, blockmap: Sequence[int]) -> float:
    """``log p((Y, B)_1^n)``: state ``x`` may emit at ``t`` only when ``blockmap[x] == B_t``.

    ``-inf`` when some ``B_t`` has no compatible state.
    """
    if traj.blocks is None:
        raise ValueError("block likelihood needs block labels on the trajectory")
    bm = _check_blockmap(params, blockmap)
    log_b = _block_mask(emission_logmatrix(params, traj), bm, traj.blocks)
    ll, _, _ = forward_logemission(_log(params.initial_dist), _log(params.transition), log_b)
    return ll


def block_gap(params: ModelParams, traj: Trajectory, blockmap: Sequence[int]) -> float:
    """``|l_n - l_n^{(Y,B)}| / n`` (``inf`` when the block likelihood vanishes)."""
    ll, _ = log_forward(params, traj)
    lb = block_loglik(params, traj, blockmap)
    if lb == -np.inf:
        return float("inf")
    return abs(ll - lb) / traj.length


def frozen_times(n: int, n_segments: int) -> np.ndarray:
    """Times at which residual trends are frozen when ``[0, n]`` is cut into ``N`` segments.

    Time ``t`` uses the left end ``n * floor(t N / n) / N`` of its segment.  Once
    segments are no longer than one step (``N >= n``) nothing is frozen.
    """
    t = np.arange(1, n + 1, dtype=np.int64)
    if n_segments >= n:
        return t.astype(float)
    return n * ((t * n_segments) // n).astype(float) / n_segments


def homogenized_loglik(
    params: ModelParams,
    traj: Trajectory,
    blocks: BlockStructure,
    n_segments: int,
    blockmap: Optional[Sequence[int]] = None,
) -> float:
    """Block likelihood with every residual trend held constant on ``n_segments`` segments.

    The emission mean of state ``x`` at ``t`` is ``Tref_b(t) + D_x(frozen(t) / n)``,
    written as ``T_x(t) + (D_x(frozen) - D_x(t))`` so that unfrozen steps
    reproduce :func:`block_loglik` bit for bit.
    """
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    if traj.blocks is None:
        raise ValueError("homogenized likelihood needs block labels on the trajectory")
    n = traj.length
    if blockmap is None:
        blockmap, _ = nearest_tube_blockmap(params, blocks, n)
    bm = _check_blockmap(params, blockmap)
    t = traj.times
    tf = frozen_times(n, n_segments)
    res = residual_trends(params, blocks, n, bm)
    shift = np.column_stack([eval_trend(r.difference, tf) - eval_trend(r.difference, t) for r in res])
    shift[tf == t] = 0.0
    means = params.trend_matrix(t) + shift
    log_b = _block_mask(gaussian_logdensity(traj.observations, means, params.variances), bm, traj.blocks)
    ll, _, _ = forward_logemission(_log(params.initial_dist), _log(params.transition), log_b)
    return ll


# --------------------------------------------------------------------------
# homogeneous and integrated likelihood limits


@dataclass(frozen=True, eq=False)
class DetrendedProcess:
    """The true de-trended process ``(Z'_t, B_t)``: a homogeneous HMM with offsets ``Delta``."""

    transition: np.ndarray
    variances: np.ndarray
    offsets: np.ndarray
    block_of_state: tuple

    @classmethod
    def from_truth(cls, truth: ModelParams, blocks: BlockStructure) -> "DetrendedProcess":
        return cls(truth.transition, truth.variances, blocks.offsets, blocks.block_of_state)

    def simulate(self, m: int, seed) -> tuple[np.ndarray, np.ndarray]:
        """Stationary-start draw of ``(Z'_1^m, B_1^m)``."""
        rng = np.random.default_rng(seed)
        q = np.asarray(self.transition, dtype=float)
        x0 = int(rng.choice(q.shape[0], p=stationary_distribution(q)))
        u = rng.random(m - 1)
        eps = rng.standard_normal(m)
        x = _kernels.sample_chain(np.cumsum(q, axis=1), x0, u)
        var = np.asarray(self.variances)[x]
        z = np.asarray(self.offsets)[x] + np.sqrt(var) * eps
        return z, np.asarray(self.block_of_state)[x]


@dataclass(frozen=True)
class MCEstimate:
    value: float
    stderr: float
    n_batches: int


def homogeneous_increments(transition, variances, offsets, blockmap, z, b, initial_dist=None) -> np.ndarray:
    """Per-step ``log p(z_t, b_t | past)`` of the homogeneous block HMM with means ``offsets``."""
    q = np.asarray(transition, dtype=float)
    k = q.shape[0]
    pi = np.full(k, 1.0 / k) if initial_dist is None else np.asarray(initial_dist, dtype=float)
    means = np.broadcast_to(np.asarray(offsets, dtype=float), (len(z), k))
    log_b = _block_mask(gaussian_logdensity(np.asarray(z, dtype=float), means, variances), blockmap, b)
    _, _, inc = forward_logemission(_log(pi), _log(q), log_b)
    return inc


def homogeneous_loglik(transition, variances, offsets, blockmap, z, b, initial_dist=None) -> float:
    """``l_m^hom`` on the supplied de-trended data (not normalised)."""
    inc = homogeneous_increments(transition, variances, offsets, blockmap, z, b, initial_dist)
    return -np.inf if np.any(inc == -np.inf) else float(inc.sum())


def _batch_means(inc: np.ndarray, n_batches: int) -> MCEstimate:
    if np.any(~np.isfinite(inc)):
        return MCEstimate(-np.inf, np.inf, n_batches)
    if inc.size < 2 * n_batches:
        raise ValueError(f"need at least {2 * n_batches} steps for {n_batches} batch means")
    means = np.array([c.mean() for c in np.array_split(inc, n_batches)])
    return MCEstimate(float(inc.mean()), float(means.std(ddof=1) / np.sqrt(n_batches)), n_batches)


def mc_homogeneous_loglik(
    transition,
    variances,
    offsets,
    blockmap,
    process: DetrendedProcess,
    length: int,
    seed,
    n_batches: int = 20,
) -> MCEstimate:
    """Monte-Carlo estimate of ``l^hom(Q, tau(gamma, offsets), b)`` under the true de-trended process.

    ``value`` is ``l_m^hom / m`` on one stationary path of length ``m``;
    ``stderr`` comes from ``n_batches`` consecutive batch means.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    z, b = process.simulate(length, seed)
    inc = homogeneous_increments(transition, variances, offsets, blockmap, z, b)
    return _batch_means(inc, n_batches)


def integrated_loglik(
    params: ModelParams,
    process: DetrendedProcess,
    blocks: BlockStructure,
    n: float,
    grid_n: int,
    mc_length: int,
    seed,
    blockmap: Optional[Sequence[int]] = None,
    n_batches: int = 20,
) -> MCEstimate:
    """Riemann sum ``(1/N) sum_i l^hom(Q, tau(gamma, D(i/N)), b)`` with common random numbers.

    All grid points are evaluated on the same simulated path; the batch-means
    error is computed on the grid-averaged per-step increments.
    """
    if grid_n < 1:
        raise ValueError("grid_n must be >= 1")
    if blockmap is None:
        blockmap, _ = nearest_tube_blockmap(params, blocks, n)
    res = residual_trends(params, blocks, n, blockmap)
    z, b = process.simulate(mc_length, seed)
    total = np.zeros(mc_length)
    for i in range(grid_n):
        offsets = np.array([r(i / grid_n) for r in res])
        total += homogeneous_increments(params.transition, params.variances, offsets, blockmap, z, b)
    return _batch_means(total / grid_n, n_batches)


# --------------------------------------------------------------------------
# forgetting of the initial distribution


def forgetting_rate(sigma_minus: float) -> float:
    return 1.0 - sigma_minus / (1.0 - sigma_minus)


def forgetting_bound(sigma_minus: float, t) -> np.ndarray:
    """``C rho^t`` with ``rho = 1 - s/(1-s)`` and ``C = 2 / (rho (1 - rho)^3)``."""
    rho = forgetting_rate(sigma_minus)
    return 2.0 / (rho * (1.0 - rho) ** 3) * rho ** np.asarray(t, dtype=float)


def _predictive_filters(params: ModelParams, log_b: np.ndarray, start, t_max: int) -> np.ndarray:
    q = params.transition
    p = np.asarray(start, dtype=float) @ q
    out = np.empty((t_max, q.shape[0]))
    for t in range(t_max):
        out[t] = p
        w = np.log(p) + log_b[t]
        w = np.exp(w - w.max())
        p = (w / w.sum()) @ q
    return out


def forgetting_curve(params: ModelParams, traj: Trajectory, mu, nu, t_max: int) -> np.ndarray:
    """``sum_x |P(X_t=x | Y_1^{t-1}, X_0~mu) - P(X_t=x | Y_1^{t-1}, X_0~nu)|`` for ``t = 1..t_max``."""
    if params.sigma_minus <= 0:
        raise ValueError("forgetting bound is vacuous without a positive sigma_minus")
    if not 1 <= t_max <= traj.length:
        raise ValueError(f"t_max must lie in [1, {traj.length}]")
    log_b = emission_logmatrix(params, traj.head(t_max))
    fm = _predictive_filters(params, log_b, mu, t_max)
    fn = _predictive_filters(params, log_b, nu, t_max)
    return np.abs(fm - fn).sum(axis=1)


def filter_forgetting_gap(params: ModelParams, traj: Trajectory, mu, nu, t: int) -> float:
    """L1 (total-variation norm) distance between the two predictive filters at time ``t``."""
    return float(forgetting_curve(params, traj, mu, nu, t)[-1])
