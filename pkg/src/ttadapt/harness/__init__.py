"""Experiment runner, comparison tooling, and CLI."""

from .config import ExperimentConfig, apply_override, load_defaults
from .run import (
    Experiment,
    ResultRecord,
    build_experiment,
    compare,
    compare_configs,
    dump_embeddings,
    export_synthetic,
    run_experiment,
    sweep_views,
)

__all__ = [
    "ExperimentConfig",
    "Experiment",
    "ResultRecord",
    "apply_override",
    "load_defaults",
    "build_experiment",
    "run_experiment",
    "compare",
    "compare_configs",
    "sweep_views",
    "dump_embeddings",
    "export_synthetic",
]
