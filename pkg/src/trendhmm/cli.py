"""Command-line entry point: ``trendhmm {simulate,fit,experiment,diagnose}``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .estimation import FitError, em_fit
from .experiments import (
    ConfigError,
    derive_seed,
    load_config,
    load_fit_config,
    params_to_config,
    run_diagnostics,
    run_fixed_n_experiment,
    run_rate_experiment,
    write_diagnostics,
    write_outputs,
)
from .model import Trajectory, compute_blocks, simulate

SEED_ENV = "TRENDHMM_SEED"
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("trendhmm")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _env_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"expected an integer, got {raw!r}", SEED_ENV) from None


def _experiment_config(args):
    cfg = load_config(args.config)
    seed = _env_seed()
    if seed is not None:
        cfg = cfg.with_seed(seed)
    if getattr(args, "cold_start", False):
        cfg = replace(cfg, cold_start=True)
    return cfg


def _out_dir(args, cfg=None) -> Path:
    out = args.out or (cfg.output_dir if cfg is not None else None)
    if out is None:
        raise ConfigError("no output directory (use --out or experiment.output_dir)", "out")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> None:
    cfg = _experiment_config(args)
    out = _out_dir(args, cfg)
    blocks = compute_blocks(cfg.truth)
    traj = simulate(cfg.truth, cfg.n_max, derive_seed(cfg.master_seed, 0), blocks)
    traj.to_csv(out / "trajectory.csv")
    (out / "truth.cfg").write_text(params_to_config(cfg.truth, "truth"))
    log.info("wrote %d observations to %s", traj.length, out)


def cmd_fit(args) -> None:
    fit_cfg = load_fit_config(args.config)
    seed = _env_seed()
    if seed is not None:
        fit_cfg = replace(fit_cfg, seed=seed)
    traj = Trajectory.read_csv(args.data)
    out = _out_dir(args)
    res = em_fit(traj, fit_cfg)
    (out / "fit.cfg").write_text(params_to_config(res.params, "model"))
    lines = [
        f"n = {traj.length}",
        f"loglik = {res.loglik!r}",
        f"iterations = {res.iterations}",
        f"converged = {res.converged}",
        "restart_logliks = " + ", ".join(repr(float(v)) for v in res.restart_logliks),
    ]
    (out / "fit.txt").write_text("\n".join(lines) + "\n")
    (out / "loglik_trace.csv").write_text(
        "iteration,loglik\n" + "".join(f"{i},{float(v)!r}\n" for i, v in enumerate(res.loglik_trace))
    )


def cmd_experiment(args) -> None:
    cfg = _experiment_config(args)
    out = _out_dir(args, cfg)
    if cfg.kind == "rate":
        records = run_rate_experiment(cfg, jobs=args.jobs)
        write_outputs(records, None, out, cfg.truth.n_states)
    elif cfg.kind == "fixed_n":
        report, records = run_fixed_n_experiment(cfg)
        write_outputs(records, report, out, cfg.truth.n_states)
    else:
        write_diagnostics(run_diagnostics(cfg), out)


def cmd_diagnose(args) -> None:
    cfg = _experiment_config(args)
    write_diagnostics(run_diagnostics(cfg), _out_dir(args, cfg))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trendhmm", description="Gaussian HMMs with polynomial trends.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate a trajectory from the [truth] section")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit by EM to a trajectory CSV")
    f.add_argument("--config", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("experiment", help="run the experiment described by the config")
    e.add_argument("--config", required=True)
    e.add_argument("--out")
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--cold-start", action="store_true", help="no warm start from the previous n")
    e.set_defaults(func=cmd_experiment)

    d = sub.add_parser("diagnose", help="block gap, tubes, homogenization and forgetting at the truth")
    d.add_argument("--config", required=True)
    d.add_argument("--out")
    d.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    if getattr(args, "jobs", 1) < 1:
        print("trendhmm: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"trendhmm: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"trendhmm: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (FitError, OSError, RuntimeError, ArithmeticError) as exc:
        print(f"trendhmm: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
