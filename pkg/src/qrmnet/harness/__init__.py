"""Experiment harness: configuration, datasets, training, sweeps, FLOP counts, CLI."""

from .config import ConfigError, ExperimentConfig, load_config
from .sim import Link, Tti, simulate_tti

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "Link", "Tti", "simulate_tti"]
