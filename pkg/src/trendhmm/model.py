"""Domain types for HMMs with polynomial trends, simulation and trend blocks."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial import Legendre, Polynomial

from . import _kernels

VARIANCE_FLOOR = 1e-8


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TrendPoly:
    """Polynomial trend stored as shifted-Legendre coefficients in ``u = t / n_scale``.

    Monomial coefficients in raw time are hopeless at degree 4 and ``t ~ 1e5``;
    the Legendre basis on ``[0, n_scale]`` keeps the regression well conditioned.
    """

    coefficients: np.ndarray
    n_scale: float = 1.0

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coefficients, dtype=float))
        if c.ndim != 1 or c.size == 0:
            raise ValueError("trend needs a non-empty 1-D coefficient vector")
        if not np.all(np.isfinite(c)):
            raise ValueError("trend coefficients must be finite")
        if not (np.isfinite(self.n_scale) and self.n_scale > 0):
            raise ValueError("n_scale must be positive")
        object.__setattr__(self, "coefficients", _frozen(c))
        object.__setattr__(self, "n_scale", float(self.n_scale))

    @property
    def degree_bound(self) -> int:
        return self.coefficients.size - 1

    @classmethod
    def constant(cls, value: float, n_scale: float = 1.0) -> "TrendPoly":
        return cls([value], n_scale)

    @classmethod
    def from_monomial(cls, coefs: Sequence[float], n_scale: float) -> "TrendPoly":
        """Build from coefficients of ``1, t, t**2, ...`` in raw time."""
        leg = Polynomial(np.asarray(coefs, dtype=float)).convert(
            kind=Legendre, domain=[0.0, float(n_scale)]
        )
        c = np.zeros(len(coefs))
        c[: leg.coef.size] = leg.coef
        return cls(c, n_scale)

    def as_legendre(self) -> Legendre:
        return Legendre(self.coefficients, domain=[0.0, self.n_scale])

    def to_monomial(self) -> np.ndarray:
        mono = self.as_legendre().convert(kind=Polynomial)
        c = np.zeros(self.coefficients.size)
        c[: mono.coef.size] = mono.coef
        return c

    def rescaled(self, n_scale: float) -> "TrendPoly":
        """Same function of ``t`` expressed on a different horizon."""
        if float(n_scale) == self.n_scale:
            return self
        leg = self.as_legendre().convert(domain=[0.0, float(n_scale)])
        c = np.zeros(self.coefficients.size)
        c[: leg.coef.size] = leg.coef
        return TrendPoly(c, n_scale)

    def __call__(self, t):
        return eval_trend(self, t)

    def __add__(self, other: "TrendPoly") -> "TrendPoly":
        o = other.rescaled(self.n_scale)
        d = max(self.coefficients.size, o.coefficients.size)
        c = np.zeros(d)
        c[: self.coefficients.size] += self.coefficients
        c[: o.coefficients.size] += o.coefficients
        return TrendPoly(c, self.n_scale)

    def shifted(self, value: float) -> "TrendPoly":
        c = self.coefficients.copy()
        c[0] += value
        return TrendPoly(c, self.n_scale)


def eval_trend(trend: TrendPoly, t):
    """Evaluate ``T(t)`` by Clenshaw recursion on the rescaled time."""
    u = 2.0 * np.asarray(t, dtype=float) / trend.n_scale - 1.0
    out = np.polynomial.legendre.legval(u, trend.coefficients)
    return float(out) if np.ndim(out) == 0 else out


def legendre_design(times, n_scale: float, degree: int) -> np.ndarray:
    """Basis matrix of a degree-``degree`` trend evaluated at ``times``."""
    u = 2.0 * np.asarray(times, dtype=float) / n_scale - 1.0
    return np.polynomial.legendre.legvander(u, degree)


def trend_sup_distance(a: TrendPoly, b: TrendPoly, horizon: float, min_grid: int = 64) -> float:
    """``sup_{t in [0, horizon]} |a(t) - b(t)|``.

    Extrema of the difference polynomial come from the real roots of its
    derivative; a grid of at least ``min_grid * (d + 1)`` points backs them up.
    """
    h = float(horizon)
    ca = a.as_legendre().convert(domain=[0.0, h]).coef
    cb = b.as_legendre().convert(domain=[0.0, h]).coef
    diff = np.zeros(max(ca.size, cb.size))
    diff[: ca.size] += ca
    diff[: cb.size] -= cb
    d = diff.size - 1
    p = Legendre(diff)
    pts = [np.linspace(-1.0, 1.0, max(min_grid * (d + 1), 2))]
    if d >= 2:
        r = p.deriv().roots()
        r = r[np.abs(r.imag) < 1e-9].real
        pts.append(r[(r >= -1.0) & (r <= 1.0)])
    return float(np.max(np.abs(p(np.concatenate(pts)))))


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Parameter of a Gaussian HMM with trends: ``(pi, Q, sigma^2, T)``."""

    initial_dist: np.ndarray
    transition: np.ndarray
    variances: np.ndarray
    trends: tuple
    sigma_minus: float = 0.0

    def __post_init__(self):
        pi = np.asarray(self.initial_dist, dtype=float).ravel()
        q = np.atleast_2d(np.asarray(self.transition, dtype=float))
        var = np.asarray(self.variances, dtype=float).ravel()
        trends = tuple(self.trends)
        k = var.size
        if k < 1:
            raise ValueError("at least one hidden state is required")
        if pi.size != k or q.shape != (k, k) or len(trends) != k:
            raise ValueError(
                f"inconsistent sizes: {k} variances, {pi.size} initial probabilities, "
                f"transition {q.shape}, {len(trends)} trends"
            )
        if not all(isinstance(tr, TrendPoly) for tr in trends):
            raise TypeError("trends must be TrendPoly instances")
        if not 0.0 <= self.sigma_minus <= 1.0 / k:
            raise ValueError(f"sigma_minus must lie in [0, 1/K], got {self.sigma_minus}")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError("initial_dist must be a probability vector")
        if not np.all(np.isfinite(q)) or np.any(np.abs(q.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("transition rows must sum to 1")
        if np.any(q < self.sigma_minus) or np.any(q < 0):
            raise ValueError(f"transition entries must be >= sigma_minus = {self.sigma_minus}")
        if not np.all(np.isfinite(var)) or np.any(var < VARIANCE_FLOOR):
            raise ValueError(f"variances must be finite and >= {VARIANCE_FLOOR}")
        object.__setattr__(self, "initial_dist", _frozen(pi))
        object.__setattr__(self, "transition", _frozen(q))
        object.__setattr__(self, "variances", _frozen(var))
        object.__setattr__(self, "trends", trends)
        object.__setattr__(self, "sigma_minus", float(self.sigma_minus))

    @property
    def n_states(self) -> int:
        return self.variances.size

    @property
    def degree_bound(self) -> int:
        return max(tr.degree_bound for tr in self.trends)

    def trend_matrix(self, times) -> np.ndarray:
        """``(len(times), K)`` matrix of ``T_x(t)``."""
        times = np.asarray(times, dtype=float)
        return np.column_stack([eval_trend(tr, times) for tr in self.trends])

    def relabel(self, perm: Sequence[int]) -> "ModelParams":
        """New parameter whose state ``x`` is this parameter's state ``perm[x]``."""
        p = np.asarray(perm, dtype=int)
        if sorted(p.tolist()) != list(range(self.n_states)):
            raise ValueError(f"{perm!r} is not a permutation of the states")
        return ModelParams(
            self.initial_dist[p],
            self.transition[np.ix_(p, p)],
            self.variances[p],
            tuple(self.trends[i] for i in p),
            self.sigma_minus,
        )

    def stationary_distribution(self) -> np.ndarray:
        return stationary_distribution(self.transition)

    def with_(self, **changes) -> "ModelParams":
        kw = dict(
            initial_dist=self.initial_dist,
            transition=self.transition,
            variances=self.variances,
            trends=self.trends,
            sigma_minus=self.sigma_minus,
        )
        kw.update(changes)
        return ModelParams(**kw)


def stationary_distribution(q) -> np.ndarray:
    """Left Perron eigenvector of a stochastic matrix, normalised to sum 1."""
    q = np.asarray(q, dtype=float)
    w, v = np.linalg.eig(q.T)
    i = int(np.argmin(np.abs(w - 1.0)))
    p = np.abs(np.real(v[:, i]))
    return p / p.sum()


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Observations ``Y_1..Y_n`` (times are implicit: ``t = 1..n``).

    ``hidden_states`` and ``blocks`` are 0-based labels; CSV files use 1-based.
    """

    observations: np.ndarray
    hidden_states: Optional[np.ndarray] = None
    blocks: Optional[np.ndarray] = None
    seed: Optional[int] = None

    def __post_init__(self):
        y = np.asarray(self.observations, dtype=float).ravel()
        n = y.size
        object.__setattr__(self, "observations", _frozen(y))
        for name in ("hidden_states", "blocks"):
            v = getattr(self, name)
            if v is None:
                continue
            v = np.asarray(v).ravel()
            if v.size != n:
                raise ValueError(f"{name} has length {v.size}, expected {n}")
            if v.size and (np.any(v < 0) or np.any(v != np.round(v))):
                raise ValueError(f"{name} must hold non-negative integer labels")
            object.__setattr__(self, name, _frozen(v, dtype=np.int64))

    @property
    def length(self) -> int:
        return self.observations.size

    def __len__(self) -> int:
        return self.length

    @property
    def times(self) -> np.ndarray:
        return np.arange(1, self.length + 1, dtype=float)

    def head(self, n: int) -> "Trajectory":
        """First ``n`` time steps."""
        if not 1 <= n <= self.length:
            raise ValueError(f"cannot take {n} steps from a trajectory of length {self.length}")
        cut = lambda a: None if a is None else a[:n]
        return Trajectory(self.observations[:n], cut(self.hidden_states), cut(self.blocks), self.seed)

    def to_csv(self, path) -> None:
        cols = ["t", "y"]
        data = [range(1, self.length + 1), [repr(float(v)) for v in self.observations]]
        if self.hidden_states is not None:
            cols.append("x")
            data.append(self.hidden_states + 1)
        if self.blocks is not None:
            cols.append("b")
            data.append(self.blocks + 1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in zip(*data):
                w.writerow(row)

    @classmethod
    def read_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "y" not in reader.fieldnames:
                raise ValueError(f"{path}: expected a header with at least a 'y' column")
            rows = list(reader)
        cols = reader.fieldnames
        if "t" in cols:
            t = np.array([int(r["t"]) for r in rows])
            if not np.array_equal(t, np.arange(1, len(rows) + 1)):
                raise ValueError(f"{path}: column t must run 1..n")
        y = np.array([float(r["y"]) for r in rows])
        x = np.array([int(r["x"]) - 1 for r in rows]) if "x" in cols else None
        b = np.array([int(r["b"]) - 1 for r in rows]) if "b" in cols else None
        return cls(y, x, b)


@dataclass(frozen=True, eq=False)
class BlockStructure:
    """Partition of states into blocks of trends equal up to translation."""

    block_of_state: tuple
    reference_trend: tuple
    offsets: np.ndarray
    tolerance: float

    def __post_init__(self):
        object.__setattr__(self, "block_of_state", tuple(int(b) for b in self.block_of_state))
        object.__setattr__(self, "reference_trend", tuple(self.reference_trend))
        object.__setattr__(self, "offsets", _frozen(self.offsets))
        if sorted(set(self.block_of_state)) != list(range(len(self.reference_trend))):
            raise ValueError("block_of_state must map onto 0..n_blocks-1")

    @property
    def n_blocks(self) -> int:
        return len(self.reference_trend)

    @property
    def n_states(self) -> int:
        return len(self.block_of_state)

    def members(self, b: int) -> list[int]:
        return [x for x, bx in enumerate(self.block_of_state) if bx == b]

    def reference_matrix(self, times) -> np.ndarray:
        """``(len(times), n_blocks)`` matrix of reference trends."""
        times = np.asarray(times, dtype=float)
        return np.column_stack([eval_trend(tr, times) for tr in self.reference_trend])

    @property
    def max_offset(self) -> float:
        """``||Delta||_inf``."""
        return float(np.max(np.abs(self.offsets)))


class BlockError(ValueError):
    """Tolerance-based trend clustering is not an equivalence relation."""


def default_block_grid(n: float, size: int = 256) -> np.ndarray:
    return np.linspace(1.0, float(n), size)


def compute_blocks(params: ModelParams, tolerance: Optional[float] = None, grid=None) -> BlockStructure:
    """Group states whose trends differ by a constant (up to ``tolerance`` on ``grid``).

    Blocks are numbered by their smallest member; the reference trend of a block
    is the trend of that member.  Offsets are the grid-mean trend differences,
    which equal ``T_x(1) - T_ref(1)`` whenever the difference is exactly constant.
    """
    if grid is None:
        grid = default_block_grid(max(tr.n_scale for tr in params.trends))
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("block grid must be non-empty")
    vals = params.trend_matrix(grid)
    if tolerance is None:
        tolerance = 1e-6 * (1.0 + float(np.max(np.abs(vals))))
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")
    k = params.n_states
    mean_diff = np.zeros((k, k))
    related = np.zeros((k, k), dtype=bool)
    for x in range(k):
        for y in range(k):
            d = vals[:, x] - vals[:, y]
            mean_diff[x, y] = d.mean()
            related[x, y] = np.max(np.abs(d - d.mean())) <= tolerance

    block_of = [-1] * k
    n_blocks = 0
    for x in range(k):
        if block_of[x] >= 0:
            continue
        # closure of the relation starting at x
        comp, stack = {x}, [x]
        while stack:
            z = stack.pop()
            for y in np.flatnonzero(related[z]):
                if int(y) not in comp:
                    comp.add(int(y))
                    stack.append(int(y))
        for a in comp:
            for b in comp:
                if not related[a, b]:
                    raise BlockError(
                        f"states {a} and {b} are linked through other states but their "
                        f"trend difference is not constant within tolerance {tolerance:g}"
                    )
        for y in comp:
            block_of[y] = n_blocks
        n_blocks += 1

    refs = []
    offsets = np.zeros(k)
    for b in range(n_blocks):
        members = [x for x in range(k) if block_of[x] == b]
        ref = min(members)
        refs.append(params.trends[ref])
        for x in members:
            offsets[x] = 0.0 if x == ref else mean_diff[x, ref]
    return BlockStructure(tuple(block_of), tuple(refs), offsets, float(tolerance))


def block_separation(blocks: BlockStructure, t: float) -> float:
    """Smallest gap between two distinct reference trends at time ``t``."""
    if blocks.n_blocks < 2:
        return float("inf")
    v = np.array([eval_trend(tr, t) for tr in blocks.reference_trend])
    d = np.abs(v[:, None] - v[None, :])
    return float(d[~np.eye(v.size, dtype=bool)].min())


def simulate(params: ModelParams, n: int, seed: int, blocks: Optional[BlockStructure] = None) -> Trajectory:
    """Draw ``(X_t, Y_t)_{t<=n}`` with ``Y_t = T_{X_t}(t) + sigma_{X_t} eps_t``."""
    if not isinstance(params, ModelParams):
        raise TypeError("params must be a ModelParams")
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    if blocks is None:
        blocks = compute_blocks(params)
    rng = np.random.default_rng(seed)
    x0 = int(rng.choice(params.n_states, p=params.initial_dist))
    u = rng.random(n - 1)
    eps = rng.standard_normal(n)
    cum_q = np.cumsum(params.transition, axis=1)
    x = _kernels.sample_chain(cum_q, x0, u)
    t = np.arange(1, n + 1, dtype=float)
    means = params.trend_matrix(t)[np.arange(n), x]
    y = means + np.sqrt(params.variances[x]) * eps
    b = np.asarray(blocks.block_of_state)[x]
    return Trajectory(y, x, b, seed)
