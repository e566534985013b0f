from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .loop import (BatchIterator, DataRegistry, EarlyStopState, MetricsRow, PipelineResult, StageResult,
                   build_model, early_stop_update, read_metrics_csv, resolve_dataset, run_pipeline, run_stage,
                   write_metrics_csv)
from .plan import (DatasetMixture, DatasetRef, StageConfig, TrainPlan, sample_task, stage_total_steps)

__all__ = [
    "BatchIterator", "Checkpoint", "DataRegistry", "DatasetMixture", "DatasetRef", "EarlyStopState",
    "MetricsRow", "PipelineResult", "StageConfig", "StageResult", "TrainPlan", "build_model",
    "early_stop_update", "load_checkpoint", "read_metrics_csv", "resolve_dataset", "run_pipeline",
    "run_stage", "sample_task", "save_checkpoint", "stage_total_steps", "write_metrics_csv",
]
