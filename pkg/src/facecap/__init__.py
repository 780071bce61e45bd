"""Facial-capture post-processing: blendshape evaluation, hybrid Kalman /
Savitzky-Golay smoothing of per-frame predictions, and adaptive regression
distillation."""

__version__ = "0.1.0"

from .blendshape import (
    BlendshapeBasis,
    ExpressionWeights,
    clamp_project,
    complete_weights,
    evaluate,
    load_basis,
    save_basis,
)
from .distill import (
    ARDConfig,
    DistillBatch,
    SoftTargetConfig,
    ard_loss,
    classification_distill_loss,
    partition_outliers,
    softened_probs,
)
from .filters import (
    HybridConfig,
    HybridFilter,
    HybridFilterState,
    KalmanConfig,
    KalmanState,
    SGKernel,
    filter_series,
    hybrid_step,
    kalman_predict,
    kalman_update,
    sg_design_matrix,
    sg_fit,
    sg_smooth,
)
from .pipeline import (
    FrameSample,
    JitterReport,
    PipelineState,
    SynthSpec,
    evaluate_run,
    ingest,
    process_frame,
    run_stream,
    synth_stream,
)
from .regressor import (
    RegressorModel,
    TrainingSchedule,
    adam_step,
    make_dataset,
    run_experiment,
    schedule_at,
    train,
)

__all__ = [
    "adam_step",
    "ard_loss",
    "ARDConfig",
    "BlendshapeBasis",
    "clamp_project",
    "classification_distill_loss",
    "complete_weights",
    "DistillBatch",
    "evaluate",
    "evaluate_run",
    "ExpressionWeights",
    "filter_series",
    "FrameSample",
    "hybrid_step",
    "HybridConfig",
    "HybridFilter",
    "HybridFilterState",
    "ingest",
    "JitterReport",
    "kalman_predict",
    "kalman_update",
    "KalmanConfig",
    "KalmanState",
    "load_basis",
    "make_dataset",
    "partition_outliers",
    "PipelineState",
    "process_frame",
    "RegressorModel",
    "run_experiment",
    "run_stream",
    "save_basis",
    "schedule_at",
    "sg_design_matrix",
    "sg_fit",
    "sg_smooth",
    "SGKernel",
    "softened_probs",
    "SoftTargetConfig",
    "synth_stream",
    "SynthSpec",
    "train",
    "TrainingSchedule",
]
