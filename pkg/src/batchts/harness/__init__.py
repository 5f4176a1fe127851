from .config import ConfigError, ExperimentConfig, load_config, parse_prob_method
from .experiment import (
    CSV_HEADER,
    AggregateResult,
    ComparisonReport,
    ReplicateResult,
    aggregate,
    aggregate_csv,
    audit_ipase,
    compare_runs,
    diagnose,
    emit_outputs,
    format_diagnosis,
    load_result,
    run_experiment,
    run_replicate,
)

__all__ = [
    "CSV_HEADER",
    "AggregateResult",
    "ComparisonReport",
    "ConfigError",
    "ExperimentConfig",
    "ReplicateResult",
    "aggregate",
    "aggregate_csv",
    "audit_ipase",
    "compare_runs",
    "diagnose",
    "emit_outputs",
    "format_diagnosis",
    "load_config",
    "load_result",
    "parse_prob_method",
    "run_experiment",
    "run_replicate",
]
