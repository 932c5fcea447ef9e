"""Experiment configuration, noise, reference solutions, artifacts and drivers."""
from .config import ConfigError, ExperimentConfig, config_from_dict, load_config
from .noise import make_noise, spawn_seeds
from .reference import Reference, ReferenceError, reference_minimizer

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "config_from_dict",
    "load_config",
    "make_noise",
    "spawn_seeds",
    "Reference",
    "ReferenceError",
    "reference_minimizer",
]
