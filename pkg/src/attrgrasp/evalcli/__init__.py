"""Evaluation metrics, pipeline stages and the command-line interface."""
from .evaluate import (ENVIRONMENTS, EvalCase, MetricsReport, affordance_confusion, environment, eval_grasping,
                       eval_recognition, evaluate, make_cases, wilson_interval)
from .pipeline import ConfigError, MissingCheckpoint, load_config, run_benchmark

__all__ = [
    "ENVIRONMENTS", "ConfigError", "EvalCase", "MetricsReport", "MissingCheckpoint", "affordance_confusion",
    "environment", "eval_grasping", "eval_recognition", "evaluate", "load_config", "make_cases", "run_benchmark",
    "wilson_interval",
]
