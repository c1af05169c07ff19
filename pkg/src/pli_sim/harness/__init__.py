"""Simulation harness: synthetic learners, the periodic retraining loop,
A/B testing, sweeps, drift scenarios, metrics export and the CLI."""

from .config import SimConfig
from .generator import ArchetypeSpec, default_archetypes
from .metrics import MetricsRecord, export_metrics, parse_metrics_csv
from .simulation import drift_scenario, run_centralized_baseline, run_simulation
from .analysis import ab_test, hyperparameter_sweep

__all__ = [
    "ArchetypeSpec",
    "MetricsRecord",
    "SimConfig",
    "ab_test",
    "default_archetypes",
    "drift_scenario",
    "export_metrics",
    "hyperparameter_sweep",
    "parse_metrics_csv",
    "run_centralized_baseline",
    "run_simulation",
]
