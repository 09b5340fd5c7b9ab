"""Scenarios, closed-loop experiments, benchmark tables, configuration and CLI."""

from .bench import benchmark_suite, results_csv, trace_csv
from .config import ConfigError, ExperimentConfig, load_config
from .experiments import (RunMetrics, Scenario, ScenarioError, TrainedModels, avoidance_scenario, build_planner,
                          compute_rmse, random_obstacle_field, run_avoidance_experiment, run_tracking_experiment,
                          tracking_scenario, train_models)
