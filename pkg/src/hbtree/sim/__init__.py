"""Monte Carlo driver, baselines, privacy game and reports."""
from .config import ConfigError, SimConfig
from .engine import TrialBatch, TrialReport
from .experiments import (
    run_config,
    simulate_descent_levels,
    simulate_exhaustive_search,
    simulate_tree_prf_baseline,
    simulate_tree_protocol,
)
from .privacy import KeyKnowing, RandomGuess, privacy_experiment
from .stats import AggregateStats, Metric, emit_report, wilson_interval

__all__ = [
    "AggregateStats",
    "ConfigError",
    "KeyKnowing",
    "Metric",
    "RandomGuess",
    "SimConfig",
    "TrialBatch",
    "TrialReport",
    "emit_report",
    "privacy_experiment",
    "run_config",
    "simulate_descent_levels",
    "simulate_exhaustive_search",
    "simulate_tree_prf_baseline",
    "simulate_tree_protocol",
    "wilson_interval",
]
