"""patternbench: non-intrusive cloud design-pattern injection and energy
benchmarking for HTTP data-sharing pipelines."""

from patternbench.config import (
    ExperimentConfig,
    PatternInjection,
    PatternKind,
    PipelineTopology,
    WorkloadLevel,
    WorkloadProfile,
    default_case_study,
    parse_experiment_config,
    serialize_experiment_config,
)
from patternbench.metrics import MetricSample, RunCollector, RunResult, export_csv
from patternbench.orchestrator import ExperimentOptions, deploy, run_experiment
from patternbench.proxy import ProxyEngine, RouteBinding, start_proxy
from patternbench.workload import concurrency_trace, run_workload

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "ExperimentOptions",
    "MetricSample",
    "PatternInjection",
    "PatternKind",
    "PipelineTopology",
    "ProxyEngine",
    "RouteBinding",
    "RunCollector",
    "RunResult",
    "WorkloadLevel",
    "WorkloadProfile",
    "concurrency_trace",
    "default_case_study",
    "deploy",
    "export_csv",
    "parse_experiment_config",
    "run_experiment",
    "run_workload",
    "serialize_experiment_config",
    "start_proxy",
    "__version__",
]
