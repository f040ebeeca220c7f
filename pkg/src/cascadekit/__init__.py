"""cascadekit: confidence-gated model cascades over ranked small models and
a terminal large model, with underfitted-data selection for targeted
augmentation and modeled cost reporting."""

from .augment import (
    PartitionResult,
    TrainingManifest,
    build_manifest,
    export_training_manifest,
    load_manifest,
    partition_conjunctive,
    partition_full,
    partition_training_data,
    register_augmented_model,
)
from .backends import (
    BackendDescriptor,
    BackendRegistry,
    CostProfile,
    PredictionRecord,
    SyntheticProfile,
    build_backend,
    confidence,
    softmax,
    validate_prediction_row,
)
from .dataset import (
    DatasetBundle,
    LabeledExample,
    LabelSpace,
    SliceAssignment,
    assign_slices,
    load_dataset,
    save_dataset,
    tertile_boundaries,
)
from .metrics import MetricsReport, compute_report, render_report
from .router import (
    BackendEvaluation,
    CascadePlan,
    RoutingTrace,
    Stage,
    build_plan,
    calibrate_thresholds,
    evaluate_backend,
    rank_models,
    route_dataset,
    route_example,
)
from .simulator import PRESETS, SyntheticWorld, WorldConfig, generate_world, preset_config

__version__ = "0.1.0"
