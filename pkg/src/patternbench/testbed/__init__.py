from patternbench.testbed.dataset import BookRecord, Dataset, generate_dataset
from patternbench.testbed.stages import (
    aggregation_stage,
    anonymization_stage,
    compose_pipeline,
    filter_stage,
    formatting_stage,
    to_json_bytes,
)

__all__ = [
    "BookRecord",
    "Dataset",
    "generate_dataset",
    "filter_stage",
    "aggregation_stage",
    "anonymization_stage",
    "formatting_stage",
    "compose_pipeline",
    "to_json_bytes",
]
