"""Small numeric kernels shared by the rest of the package."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg


class SingularSystemError(np.linalg.LinAlgError):
    """Raised when a weighted least-squares system does not have full column rank."""

    def __init__(self, rank: int, n_params: int):
        super().__init__(f"weighted design has rank {rank} < {n_params} parameters")
        self.rank = rank
        self.n_params = n_params


def log_sum_exp(values) -> float:
    """Overflow-safe ``log(sum(exp(values)))``; ``-inf`` when every value is ``-inf``."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty sequence")
    m = v.max()
    if m == -np.inf:
        return -np.inf
    if m == np.inf:
        return np.inf
    return float(m + np.log(np.sum(np.exp(v - m))))


@dataclass(frozen=True, eq=False)
class WlsProblem:
    design: np.ndarray
    targets: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        design = np.atleast_2d(np.asarray(self.design, dtype=float))
        targets = np.asarray(self.targets, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        m = design.shape[0]
        if targets.shape[0] != m or weights.shape[0] != m:
            raise ValueError(
                f"inconsistent sizes: design has {m} rows, targets {targets.shape[0]}, "
                f"weights {weights.shape[0]}"
            )
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and non-negative")
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "weights", weights)

    @property
    def n_params(self) -> int:
        return self.design.shape[1]

    def objective(self, beta) -> float:
        r = self.targets - self.design @ np.asarray(beta, dtype=float)
        return float(np.sum(self.weights * r * r))


def solve_wls(problem: WlsProblem, rcond: float = 1e-12) -> np.ndarray:
    """Minimise ``sum_i w_i (y_i - A_i beta)^2`` by pivoted QR of the sqrt(w)-scaled design.

    Raises :class:`SingularSystemError` when the scaled design is rank deficient.
    """
    p = problem.n_params
    keep = problem.weights > 0
    if np.count_nonzero(keep) < p:
        raise SingularSystemError(int(np.count_nonzero(keep)), p)
    sw = np.sqrt(problem.weights[keep])
    a = problem.design[keep] * sw[:, None]
    b = problem.targets[keep] * sw
    q, r, piv = scipy.linalg.qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.count_nonzero(diag > rcond * diag[0])) if diag.size and diag[0] > 0 else 0
    if rank < p:
        raise SingularSystemError(rank, p)
    z = scipy.linalg.solve_triangular(r, q.T @ b)
    beta = np.empty(p)
    beta[piv] = z
    return beta


def best_permutation(cost, tiebreak=None, rtol: float = 1e-12) -> tuple[int, ...]:
    """Exhaustive search for ``tau`` minimising ``sum_x cost[tau[x], x]``.

    Permutations are visited in lexicographic order and only a strictly better
    value replaces the incumbent, so ties resolve to the lexicographically
    smallest ``tau``.  When ``tiebreak`` is given, primary values within
    ``rtol`` of each other are compared on the tiebreak matrix instead.
    """
    cost = np.asarray(cost, dtype=float)
    k = cost.shape[0]
    if cost.shape != (k, k):
        raise ValueError("cost must be square")
    if k > 10:
        raise ValueError("exhaustive permutation search is limited to K <= 10")
    tb = None if tiebreak is None else np.asarray(tiebreak, dtype=float)
    cols = np.arange(k)
    best, best_val, best_tb = None, np.inf, np.inf
    for perm in itertools.permutations(range(k)):
        val = float(cost[list(perm), cols].sum())
        if tb is None:
            if val < best_val:
                best, best_val = perm, val
            continue
        tval = float(tb[list(perm), cols].sum())
        close = abs(val - best_val) <= rtol * max(1.0, abs(val), abs(best_val))
        if best is None or (not close and val < best_val) or (close and tval < best_tb):
            best, best_val, best_tb = perm, val, tval
    return tuple(int(i) for i in best)


def fit_line(xs, ys) -> tuple[float, float]:
    """Ordinary least-squares line; returns ``(slope, intercept)``."""
    x = np.asarray(xs, dtype=float).ravel()
    y = np.asarray(ys, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("xs and ys must have the same length")
    if np.unique(x).size < 2:
        raise ValueError("fit_line needs at least two distinct x values")
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    slope = float(np.dot(dx, y - ym) / np.dot(dx, dx))
    return slope, float(ym - slope * xm)
