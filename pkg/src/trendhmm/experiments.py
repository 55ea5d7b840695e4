"""Simulation studies: config files, rate and fixed-n experiments, diagnostics, output files."""
from __future__ import annotations

import configparser
import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .estimation import FitConfig, FitResult, align_states, em_fit
from .inference import log_forward
from .model import BlockStructure, ModelParams, Trajectory, TrendPoly, compute_blocks, simulate
from .theory import (
    DetrendedProcess,
    TubeReport,
    block_gap,
    block_loglik,
    forgetting_bound,
    forgetting_curve,
    homogenized_loglik,
    integrated_loglik,
    minimal_tube_size,
    nearest_tube_blockmap,
    sup_trend_error,
)
from .numerics import fit_line

log = logging.getLogger(__name__)

KINDS = ("rate", "fixed_n", "diagnostics")


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending entry."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class DiagnosticsConfig:
    segments: tuple = (1, 2, 4, 8, 16)
    homogenization_n: Optional[int] = None
    residual_drift: float = 1.0
    forgetting_steps: int = 50
    integrated_grid: int = 8
    mc_length: Optional[int] = None
    tube_tol: float = 1e-3
    fit: bool = True


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    kind: str
    truth: ModelParams
    n_values: tuple
    n_replications: int
    fit: FitConfig
    master_seed: int = 0
    output_dir: Optional[Path] = None
    cold_start: bool = False
    timing: bool = False
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"must be one of {', '.join(KINDS)}", "experiment.kind")
        nv = tuple(int(v) for v in self.n_values)
        if not nv or any(b <= a for a, b in zip(nv, nv[1:])) or nv[0] < 1:
            raise ConfigError("must be positive and strictly increasing", "experiment.n_values")
        object.__setattr__(self, "n_values", nv)
        if self.n_replications < 1:
            raise ConfigError("must be >= 1", "experiment.n_replications")
        if self.fit.n_states != self.truth.n_states:
            raise ConfigError("must equal the number of true states", "fit.n_states")

    @property
    def n_max(self) -> int:
        return self.n_values[-1]

    def with_seed(self, master_seed: int) -> "ExperimentConfig":
        return replace(self, master_seed=int(master_seed))


def _floats(text: str, name: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"expected numbers, got {text!r}", name) from exc


def _ints(text: str, name: str) -> list[int]:
    vals = _floats(text, name)
    if any(v != int(v) for v in vals):
        raise ConfigError(f"expected integers, got {text!r}", name)
    return [int(v) for v in vals]


def _matrix(text: str, name: str) -> np.ndarray:
    rows = [_floats(r, name) for r in text.split(";") if r.strip()]
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise ConfigError("rows must be ';'-separated and of equal length", name)
    return np.array(rows)


def _get(sec, key: str, conv, name: str, default=None, required=False):
    if key not in sec:
        if required:
            raise ConfigError("missing required entry", name)
        return default
    raw = sec[key].strip()
    try:
        return conv(raw)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"cannot parse {raw!r}", name) from exc


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def _read_parser(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        with open(path) as fh:
            cp.read_file(fh, source=str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except configparser.ParsingError as exc:
        where = "; ".join(f"line {ln}: {text.strip()!r}" for ln, text in exc.errors)
        raise ConfigError(f"{path}: parse error at {where}") from exc
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        msg = exc.message if hasattr(exc, "message") else str(exc)
        raise ConfigError(f"{path}: parse error{f' at line {line}' if line else ''}: {msg}") from exc
    return cp


def parse_params(sec, section: str = "truth", default_scale: Optional[float] = None) -> ModelParams:
    """Build a :class:`ModelParams` from a config section (grammar in the README)."""
    variances = _get(sec, "variances", lambda s: _floats(s, f"{section}.variances"), f"{section}.variances", required=True)
    k = _get(sec, "n_states", int, f"{section}.n_states", default=len(variances))
    if len(variances) != k:
        raise ConfigError(f"expected {k} values", f"{section}.variances")
    if any(not v > 0 for v in variances):
        raise ConfigError("variances must be positive", f"{section}.variances")
    q = _get(sec, "transition", lambda s: _matrix(s, f"{section}.transition"), f"{section}.transition", required=True)
    if q.shape != (k, k):
        raise ConfigError(f"expected a {k}x{k} matrix", f"{section}.transition")
    pi = _get(sec, "initial_dist", lambda s: _floats(s, f"{section}.initial_dist"), f"{section}.initial_dist", default=[1.0 / k] * k)
    sigma_minus = _get(sec, "sigma_minus", float, f"{section}.sigma_minus", default=0.0)
    basis = _get(sec, "trend_basis", str, f"{section}.trend_basis", default="monomial")
    if basis not in ("monomial", "legendre"):
        raise ConfigError("must be 'monomial' or 'legendre'", f"{section}.trend_basis")
    scale = _get(sec, "trend_scale", float, f"{section}.trend_scale", default=default_scale)
    if scale is None or not scale > 0:
        raise ConfigError("a positive trend_scale is required", f"{section}.trend_scale")
    trends = []
    for x in range(1, k + 1):
        name = f"{section}.trend_{x}"
        coefs = _get(sec, f"trend_{x}", lambda s: _floats(s, name), name, required=True)
        if not coefs:
            raise ConfigError("needs at least one coefficient", name)
        trends.append(TrendPoly.from_monomial(coefs, scale) if basis == "monomial" else TrendPoly(coefs, scale))
    try:
        return ModelParams(pi, q, variances, trends, sigma_minus)
    except ValueError as exc:
        raise ConfigError(str(exc), section) from exc


def parse_fit(sec, n_states: Optional[int]) -> FitConfig:
    g = lambda key, conv, default=None: _get(sec, key, conv, f"fit.{key}", default=default)
    k = g("n_states", int, n_states)
    if k is None:
        raise ConfigError("missing required entry", "fit.n_states")
    kw = dict(n_states=k)
    for key, conv in (
        ("degree_bound", int),
        ("sigma_minus", float),
        ("max_iters", int),
        ("rel_tol", float),
        ("n_restarts", int),
        ("seed", int),
        ("variance_floor", float),
    ):
        v = g(key, conv)
        if v is not None:
            kw[key] = v
    try:
        return FitConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc), "fit") from exc


def load_config(path) -> ExperimentConfig:
    """Read and validate an experiment config file."""
    cp = _read_parser(path)
    for sec in ("experiment", "truth"):
        if not cp.has_section(sec):
            raise ConfigError("missing section", sec)
    ex = cp["experiment"]
    kind = _get(ex, "kind", str, "experiment.kind", required=True)
    n_values = _get(ex, "n_values", lambda s: _ints(s, "experiment.n_values"), "experiment.n_values", required=True)
    if not n_values:
        raise ConfigError("must list at least one length", "experiment.n_values")
    truth = parse_params(cp["truth"], "truth", default_scale=float(max(n_values)))
    fit = parse_fit(cp["fit"] if cp.has_section("fit") else {}, truth.n_states)
    diag = DiagnosticsConfig()
    if cp.has_section("diagnostics"):
        d = cp["diagnostics"]
        g = lambda key, conv: _get(d, key, conv, f"diagnostics.{key}", default=getattr(diag, key))
        diag = DiagnosticsConfig(
            segments=tuple(g("segments", lambda s: _ints(s, "diagnostics.segments"))),
            homogenization_n=g("homogenization_n", int),
            residual_drift=g("residual_drift", float),
            forgetting_steps=g("forgetting_steps", int),
            integrated_grid=g("integrated_grid", int),
            mc_length=g("mc_length", int),
            tube_tol=g("tube_tol", float),
            fit=g("fit", _bool),
        )
    out = _get(ex, "output_dir", str, "experiment.output_dir")
    return ExperimentConfig(
        kind=kind,
        truth=truth,
        n_values=tuple(n_values),
        n_replications=_get(ex, "n_replications", int, "experiment.n_replications", default=1),
        fit=fit,
        master_seed=_get(ex, "master_seed", int, "experiment.master_seed", default=0),
        output_dir=None if out is None else Path(out),
        cold_start=_get(ex, "cold_start", _bool, "experiment.cold_start", default=False),
        timing=_get(ex, "timing", _bool, "experiment.timing", default=False),
        diagnostics=diag,
    )


def load_fit_config(path) -> FitConfig:
    """Only the ``[fit]`` section (``n_states`` may come from ``[truth]``)."""
    cp = _read_parser(path)
    k = None
    if cp.has_section("truth"):
        t = cp["truth"]
        k = _get(t, "n_states", int, "truth.n_states")
        if k is None and "variances" in t:
            k = len(_floats(t["variances"], "truth.variances"))
    return parse_fit(cp["fit"] if cp.has_section("fit") else {}, k)


def params_to_config(params: ModelParams, section: str = "model") -> str:
    """Serialise a parameter as a config section (Legendre basis, exact round trip)."""
    scale = max(tr.n_scale for tr in params.trends)
    f = lambda v: repr(float(v))
    lines = [
        f"[{section}]",
        f"n_states = {params.n_states}",
        f"initial_dist = {', '.join(map(f, params.initial_dist))}",
        "transition = " + "; ".join(", ".join(map(f, row)) for row in params.transition),
        f"variances = {', '.join(map(f, params.variances))}",
        f"sigma_minus = {f(params.sigma_minus)}",
        "trend_basis = legendre",
        f"trend_scale = {f(scale)}",
    ]
    for x, tr in enumerate(params.trends, start=1):
        lines.append(f"trend_{x} = {', '.join(map(f, tr.rescaled(scale).coefficients))}")
    return "\n".join(lines) + "\n"


def read_params(path, section: str = "model") -> ModelParams:
    cp = _read_parser(path)
    if not cp.has_section(section):
        raise ConfigError("missing section", section)
    return parse_params(cp[section], section)


# --------------------------------------------------------------------------
# error records


@dataclass(frozen=True)
class ErrorRecord:
    replication: int
    n: int
    err_trend_sup: tuple
    err_q_frobenius: float
    err_var_max: float
    loglik: float
    wall_time_s: float = 0.0
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def metrics(self) -> dict:
        out = {f"err_trend_sup_{x + 1}": v for x, v in enumerate(self.err_trend_sup)}
        out["err_q_frobenius"] = self.err_q_frobenius
        out["err_var_max"] = self.err_var_max
        return out


def error_record(
    fitted: ModelParams, truth: ModelParams, n: int, replication: int, loglik: float, wall_time_s: float = 0.0
) -> ErrorRecord:
    """Errors of ``fitted`` against ``truth`` after aligning the state labels."""
    perm = align_states(fitted, truth, n)
    aligned = fitted.relabel(perm)
    return ErrorRecord(
        replication=replication,
        n=n,
        err_trend_sup=tuple(float(v) for v in sup_trend_error(aligned, truth, range(truth.n_states), n)),
        err_q_frobenius=float(np.linalg.norm(truth.transition - aligned.transition)),
        err_var_max=float(np.max(np.abs(truth.variances - aligned.variances))),
        loglik=float(loglik),
        wall_time_s=float(wall_time_s),
    )


def failed_record(k: int, n: int, replication: int, exc: Exception) -> ErrorRecord:
    msg = " ".join(f"failed: {exc}".split()).replace(",", ";")
    nan = float("nan")
    return ErrorRecord(replication, n, (nan,) * k, nan, nan, nan, 0.0, msg)


def derive_seed(*keys: int) -> int:
    """Deterministic 32-bit seed from integer keys (independent of scheduling order)."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


# --------------------------------------------------------------------------
# experiments


def _run_replication(config: ExperimentConfig, r: int) -> list[ErrorRecord]:
    truth = config.truth
    full = simulate(truth, config.n_max, derive_seed(config.master_seed, r))
    records, previous = [], None
    for n in config.n_values:
        fit_cfg = replace(config.fit, seed=derive_seed(config.master_seed, r, n))
        warm = () if (config.cold_start or previous is None) else (previous,)
        t0 = time.perf_counter()
        try:
            res = em_fit(full.head(n), fit_cfg, warm_starts=warm)
        except Exception as exc:  # recorded in the row; the study goes on
            log.warning("replication %d, n=%d: fit failed: %s", r, n, exc)
            records.append(failed_record(truth.n_states, n, r, exc))
            continue
        wall = time.perf_counter() - t0 if config.timing else 0.0
        previous = res.params
        records.append(error_record(res.params, truth, n, r, res.loglik, wall))
        log.info("replication %d, n=%d: loglik %.3f after %d iterations", r, n, res.loglik, res.iterations)
    return records


def run_rate_experiment(config: ExperimentConfig, jobs: int = 1) -> list[ErrorRecord]:
    """Fit every replication on growing prefixes of one simulated path; one record per (r, n)."""
    if config.kind != "rate":
        raise ConfigError("run_rate_experiment needs kind = rate", "experiment.kind")
    reps = range(config.n_replications)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_replication, [config] * len(reps), reps))
    else:
        chunks = [_run_replication(config, r) for r in reps]
    return [rec for chunk in chunks for rec in chunk]


@dataclass(frozen=True, eq=False)
class FixedNReport:
    n: int
    perm: tuple
    transition: np.ndarray
    variances: np.ndarray
    trend_sup: np.ndarray
    tube: TubeReport
    blockmap: tuple
    block_gap: float
    loglik: float
    truth_loglik: float
    iterations: int
    converged: bool
    restart_logliks: np.ndarray
    aligned: ModelParams

    def render(self) -> str:
        f = lambda a: "[" + ", ".join(f"{v:.6f}" for v in np.ravel(a)) + "]"
        lines = [
            f"fixed-n fit, n = {self.n}",
            f"loglik = {self.loglik:.6f} (truth: {self.truth_loglik:.6f})",
            f"iterations = {self.iterations}, converged = {self.converged}",
            f"restart logliks = {f(self.restart_logliks)}",
            f"alignment (true state -> fitted state, 1-based) = {[p + 1 for p in self.perm]}",
            "aligned transition matrix:",
            *("  " + f(row) for row in self.transition),
            f"aligned variances = {f(self.variances)}",
            f"trend sup errors on [0, n] = {f(self.trend_sup)}",
            f"minimal tube size M = {self.tube.M:.6f} (cover {self.tube.cover_ok}, containment {self.tube.containment_ok})",
            f"block map (fitted state -> true block, 1-based) = {[b + 1 for b in self.blockmap]}",
            f"block gap (1/n)|l_n - l_n^(Y,B)| = {self.block_gap:.6e}",
        ]
        return "\n".join(lines) + "\n"


def fixed_n_report(
    res: FitResult, truth: ModelParams, traj: Trajectory, blocks: BlockStructure, tube_tol: float = 1e-3
) -> FixedNReport:
    n = traj.length
    perm = align_states(res.params, truth, n)
    aligned = res.params.relabel(perm)
    blockmap, _ = nearest_tube_blockmap(aligned, blocks, n)
    truth_ll, _ = log_forward(truth, traj)
    return FixedNReport(
        n=n,
        perm=perm,
        transition=aligned.transition,
        variances=aligned.variances,
        trend_sup=sup_trend_error(aligned, truth, range(truth.n_states), n),
        tube=minimal_tube_size(aligned, truth, n, tube_tol),
        blockmap=blockmap,
        block_gap=block_gap(aligned, traj, blockmap),
        loglik=res.loglik,
        truth_loglik=truth_ll,
        iterations=res.iterations,
        converged=res.converged,
        restart_logliks=res.restart_logliks,
        aligned=aligned,
    )


def run_fixed_n_experiment(config: ExperimentConfig) -> tuple[FixedNReport, list[ErrorRecord]]:
    """Single fit at ``n = max(n_values)`` with a full report."""
    if config.kind != "fixed_n":
        raise ConfigError("run_fixed_n_experiment needs kind = fixed_n", "experiment.kind")
    truth = config.truth
    blocks = compute_blocks(truth)
    traj = simulate(truth, config.n_max, derive_seed(config.master_seed, 0), blocks)
    fit_cfg = replace(config.fit, seed=derive_seed(config.master_seed, 0, config.n_max))
    t0 = time.perf_counter()
    res = em_fit(traj, fit_cfg)
    wall = time.perf_counter() - t0 if config.timing else 0.0
    report = fixed_n_report(res, truth, traj, blocks, config.diagnostics.tube_tol)
    return report, [error_record(res.params, truth, config.n_max, 0, res.loglik, wall)]


def drifted(params: ModelParams, drift: float, horizon: float) -> ModelParams:
    """Add ``drift * t / horizon`` to every trend (a parameter near, but not at, the truth)."""
    ramp = TrendPoly.from_monomial([0.0, drift / horizon], horizon)
    return params.with_(trends=tuple(tr + ramp for tr in params.trends))


@dataclass(frozen=True, eq=False)
class DiagnosticsReport:
    n: int
    block_gaps: list
    homogenization_n: int
    homogenization_gaps: list
    forgetting_sigma_minus: float
    forgetting: np.ndarray
    integrated: object
    normalized_loglik: float
    fit: Optional[FixedNReport] = None

    def render(self) -> str:
        lines = [f"diagnostics at the true parameter, n = {self.n}", "", "block gap (1/n)|l_n - l_n^(Y,B)|:"]
        lines += [f"  n = {n:>9d}: {g:.6e}" for n, g in self.block_gaps]
        lines += ["", f"homogenization gap (1/n)|l^(Y,B) - l^(Y,B)[1/N]| near the truth, n = {self.homogenization_n}:"]
        lines += [f"  N = {N:>9d}: {g:.6e}" for N, g in self.homogenization_gaps]
        lines += ["", f"filter forgetting with sigma_minus = {self.forgetting_sigma_minus:.6f}:"]
        if self.forgetting.size:
            bound = forgetting_bound(self.forgetting_sigma_minus, self.forgetting[:, 0])
            ok = bool(np.all(self.forgetting[:, 1] <= bound))
            lines += [f"  gap at t = 1: {self.forgetting[0, 1]:.6e}, at t = {int(self.forgetting[-1, 0])}: {self.forgetting[-1, 1]:.6e}"]
            lines += [f"  below C rho^t everywhere: {ok}"]
        else:
            lines += ["  skipped (transition matrix has a zero entry)"]
        iv = self.integrated
        lines += [
            "",
            f"integrated log-likelihood at the truth: {iv.value:.6f} +- {iv.stderr:.6f} (batch-means s.e.)",
            f"(1/n) l_n(truth) = {self.normalized_loglik:.6f}; difference / s.e. = {(self.normalized_loglik - iv.value) / iv.stderr:.3f}",
        ]
        if self.fit is not None:
            lines += ["", self.fit.render()]
        return "\n".join(lines) + "\n"


def run_diagnostics(config: ExperimentConfig) -> DiagnosticsReport:
    """Numerical witnesses of the consistency argument on one simulated path."""
    truth = config.truth
    dg = config.diagnostics
    blocks = compute_blocks(truth)
    n = config.n_max
    traj = simulate(truth, n, derive_seed(config.master_seed, 0), blocks)
    bm = blocks.block_of_state
    gaps = [(m, block_gap(truth, traj.head(m), bm)) for m in config.n_values]

    hn = min(dg.homogenization_n or n, n)
    sub = traj.head(hn)
    near = drifted(truth, dg.residual_drift, hn)
    near_bm, _ = nearest_tube_blockmap(near, blocks, hn)
    ref = block_loglik(near, sub, near_bm)
    hom = [(N, abs(ref - homogenized_loglik(near, sub, blocks, N, near_bm)) / hn) for N in (*dg.segments, hn)]

    smin = float(truth.transition.min())
    if smin > 0:
        steps = min(dg.forgetting_steps, n)
        fparams = truth.with_(sigma_minus=min(smin, 1.0 / truth.n_states))
        e = np.eye(truth.n_states)
        curve = forgetting_curve(fparams, traj, e[0], e[-1], steps)
        forgetting = np.column_stack([np.arange(1, steps + 1), curve])
    else:
        forgetting = np.empty((0, 2))

    proc = DetrendedProcess.from_truth(truth, blocks)
    iv = integrated_loglik(
        truth, proc, blocks, n, dg.integrated_grid, dg.mc_length or n, derive_seed(config.master_seed, 1), bm
    )
    ll, _ = log_forward(truth, traj)

    fit = None
    if dg.fit:
        fit_cfg = replace(config.fit, seed=derive_seed(config.master_seed, 0, n))
        fit = fixed_n_report(em_fit(traj, fit_cfg), truth, traj, blocks, dg.tube_tol)
    return DiagnosticsReport(n, gaps, hn, hom, smin, forgetting, iv, ll / n, fit)


# --------------------------------------------------------------------------
# slopes and output files


def _metric_names(records: Sequence[ErrorRecord]) -> list[str]:
    k = max((len(r.err_trend_sup) for r in records), default=0)
    return [f"err_trend_sup_{x + 1}" for x in range(k)] + ["err_q_frobenius", "err_var_max"]


def _log_errors(records: Sequence[ErrorRecord], metric: str) -> dict:
    """``n -> list of log10 errors`` over successful, positive records."""
    out: dict = {}
    for r in records:
        v = r.metrics().get(metric, float("nan")) if r.ok else float("nan")
        if np.isfinite(v) and v > 0:
            out.setdefault(r.n, []).append(math.log10(v))
    return out


def fit_slopes(records: Sequence[ErrorRecord]) -> dict:
    """Per metric, least-squares line of mean log10 error against log10 n.

    Raises ``ValueError`` when a metric has fewer than two usable lengths.
    """
    out = {}
    for metric in _metric_names(records):
        by_n = _log_errors(records, metric)
        if len(by_n) < 2:
            raise ValueError(f"{metric}: fewer than two lengths with valid errors")
        ns = sorted(by_n)
        out[metric] = fit_line([math.log10(n) for n in ns], [np.mean(by_n[n]) for n in ns])
    return out


ERROR_FIELDS_TAIL = ["err_q_frobenius", "err_var_max", "loglik", "wall_time_s", "status"]


def _fmt(v) -> str:
    return repr(float(v))


def errors_csv_text(records: Sequence[ErrorRecord], k: Optional[int] = None) -> str:
    k = k if k is not None else max((len(r.err_trend_sup) for r in records), default=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replication", "n", *[f"err_trend_sup_{x + 1}" for x in range(k)], *ERROR_FIELDS_TAIL])
    for r in records:
        w.writerow(
            [r.replication, r.n, *map(_fmt, r.err_trend_sup), _fmt(r.err_q_frobenius), _fmt(r.err_var_max),
             _fmt(r.loglik), _fmt(r.wall_time_s), r.status]
        )
    return buf.getvalue()


def read_errors_csv(path) -> list[ErrorRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        trend_cols = [c for c in reader.fieldnames or [] if c.startswith("err_trend_sup_")]
        return [
            ErrorRecord(
                replication=int(row["replication"]),
                n=int(row["n"]),
                err_trend_sup=tuple(float(row[c]) for c in trend_cols),
                err_q_frobenius=float(row["err_q_frobenius"]),
                err_var_max=float(row["err_var_max"]),
                loglik=float(row["loglik"]),
                wall_time_s=float(row["wall_time_s"]),
                status=row["status"],
            )
            for row in reader
        ]


def _write(path: Path, text: str) -> None:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def summary_text(records: Sequence[ErrorRecord], slopes: dict) -> str:
    lines = []
    if records:
        metrics = _metric_names(records)
        lines.append("median error over replications")
        lines.append("n," + ",".join(metrics))
        for n in sorted({r.n for r in records}):
            rows = [r.metrics() for r in records if r.n == n and r.ok]
            med = [np.median([m[k] for m in rows]) if rows else float("nan") for k in metrics]
            lines.append(f"{n}," + ",".join(f"{v:.6e}" for v in med))
        failed = sum(not r.ok for r in records)
        lines.append(f"failed fits: {failed}")
    if slopes:
        lines.append("")
        lines.append("log10(error) ~ slope * log10(n) + intercept")
        lines += [f"{m}: slope {s:.6f}, intercept {c:.6f}" for m, (s, c) in slopes.items()]
    return "\n".join(lines) + "\n" if lines else ""


def write_outputs(records: Sequence[ErrorRecord], report, output_dir, k: Optional[int] = None) -> list[Path]:
    """Write ``errors.csv``, ``slopes.csv``, ``plotdata_*.csv`` and ``report.txt``."""
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc.strerror or exc}") from exc
    written = []

    def emit(name: str, text: str):
        _write(out / name, text)
        written.append(out / name)

    emit("errors.csv", errors_csv_text(records, k))
    try:
        slopes = fit_slopes(records)
    except ValueError:
        slopes = {}
    emit("slopes.csv", "metric,slope,intercept\n" + "".join(f"{m},{_fmt(s)},{_fmt(c)}\n" for m, (s, c) in slopes.items()))
    for metric in _metric_names(records):
        by_n = _log_errors(records, metric)
        rows = [
            f"{_fmt(math.log10(n))},{_fmt(np.mean(v))},{_fmt(min(v))},{_fmt(max(v))}\n" for n, v in sorted(by_n.items())
        ]
        emit(f"plotdata_{metric}.csv", "x,y,ymin,ymax\n" + "".join(rows))
    text = summary_text(records, slopes)
    if report is not None:
        text = report.render() + ("\n" + text if text else "")
    emit("report.txt", text)
    return written


def write_diagnostics(report: DiagnosticsReport, output_dir) -> list[Path]:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "block_gap.csv": "n,gap\n" + "".join(f"{n},{_fmt(g)}\n" for n, g in report.block_gaps),
        "homogenization.csv": "segments,gap\n" + "".join(f"{N},{_fmt(g)}\n" for N, g in report.homogenization_gaps),
        "forgetting.csv": "t,gap,bound\n"
        + "".join(
            f"{int(t)},{_fmt(g)},{_fmt(forgetting_bound(report.forgetting_sigma_minus, t))}\n"
            for t, g in report.forgetting
        ),
        "report.txt": report.render(),
    }
    for name, text in files.items():
        _write(out / name, text)
    return [out / name for name in files]
