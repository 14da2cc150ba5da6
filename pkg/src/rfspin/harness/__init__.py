"""Experiment configs, suites and the command line tool."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .experiments import RUNNERS, ExperimentResult, run_experiment, write_outputs

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "RUNNERS", "ExperimentResult",
           "run_experiment", "write_outputs"]
