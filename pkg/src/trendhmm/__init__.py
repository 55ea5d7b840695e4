"""Hidden Markov models with polynomial trends: simulation, likelihood, EM fitting and consistency diagnostics."""
from importlib.resources import files as _files

from .estimation import FitConfig, FitError, FitResult, align_states, em_fit
from .experiments import ConfigError, ErrorRecord, ExperimentConfig, load_config
from .inference import brute_force_loglik, log_forward, posterior
from .model import BlockStructure, ModelParams, Trajectory, TrendPoly, compute_blocks, simulate

__version__ = "0.1.0"


def bundled_config(name: str):
    """Path of a config shipped with the package (``experiment1.cfg``, ``experiment2.cfg``, ``diagnostics.cfg``)."""
    return _files(__name__) / "data" / name


__all__ = [
    "BlockStructure", "ConfigError", "ErrorRecord", "ExperimentConfig", "FitConfig", "FitError", "FitResult",
    "ModelParams", "Trajectory", "TrendPoly", "align_states", "brute_force_loglik", "bundled_config",
    "compute_blocks", "em_fit", "load_config", "log_forward", "posterior", "simulate",
]
