"""Online differentially private answering of linear queries with a predicted workload."""

from lapras.allocation import (HALT, SPLITS, Allocator, BudgetPlan, ConfigError,
                               split_budget)
from lapras.baselines import offline_mm, online_independent
from lapras.dp import (BudgetExceeded, CalibrationError, PrivacyLedger, PrivacyParams,
                       agm_sigma, classic_gaussian_sigma)
from lapras.engine import EngineConfig, InvariantViolation, StreamTrace, process_stream
from lapras.estimator import EstimatorState, stopping_estimate, warmup_length
from lapras.fixtures import load_fixture
from lapras.harness import ExperimentConfig, emit_results, load_config, run_experiment
from lapras.matrix_mechanism import StrategyConfig, run_matrix_mechanism, select_strategy
from lapras.metrics import ErrorReport, compute_metrics
from lapras.workload import (PredictionSet, StreamSpec, build_stream, oracle_predict,
                             random_binary_universe, range_universe)

__all__ = [
    "HALT", "SPLITS", "Allocator", "BudgetPlan", "ConfigError", "split_budget",
    "offline_mm", "online_independent",
    "BudgetExceeded", "CalibrationError", "PrivacyLedger", "PrivacyParams", "agm_sigma",
    "classic_gaussian_sigma",
    "EngineConfig", "InvariantViolation", "StreamTrace", "process_stream",
    "EstimatorState", "stopping_estimate", "warmup_length",
    "load_fixture",
    "ExperimentConfig", "emit_results", "load_config", "run_experiment",
    "StrategyConfig", "run_matrix_mechanism", "select_strategy",
    "ErrorReport", "compute_metrics",
    "PredictionSet", "StreamSpec", "build_stream", "oracle_predict",
    "random_binary_universe", "range_universe",
]
