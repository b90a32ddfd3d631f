"""Longitudinal survival modeling: transformer sequence encoder,
discrete-time competing-risk hazards, censoring-aware metrics, and
synthetic-data augmentation."""

from .dataset import (
    FeatureSchema,
    PatientSequence,
    SurvivalDataset,
    assemble_sequences,
    conform_max_visits,
    fit_schema,
    last_visit_only,
    load_dataset,
    load_feature_spec,
    parse_long_csv,
    save_dataset,
    split_dataset,
)
from .encoder import EncoderConfig, EncoderState, encoder_forward
from .metrics import MetricReport, brier, c_td, evaluate_model
from .survival_head import (
    HazardPrediction,
    HeadConfig,
    HeadState,
    SurvivalModel,
    combined_loss,
    length_of_stay_loss,
    mortality_loss,
    pch_loss,
    predict,
    predict_sequences,
)
from .synth import GeneratorConfig, OptimismReport, augment, generate, optimism
from .timegrid import (
    StepFunction,
    TimeGrid,
    bin_index,
    censoring_weights,
    fit_time_bins,
    kaplan_meier,
    quantile_horizons,
)
from .trainer import (
    TrainConfig,
    TrainedModel,
    cross_validate,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "EncoderConfig",
    "EncoderState",
    "FeatureSchema",
    "GeneratorConfig",
    "HazardPrediction",
    "HeadConfig",
    "HeadState",
    "MetricReport",
    "OptimismReport",
    "PatientSequence",
    "StepFunction",
    "SurvivalDataset",
    "SurvivalModel",
    "TimeGrid",
    "TrainConfig",
    "TrainedModel",
    "assemble_sequences",
    "augment",
    "bin_index",
    "brier",
    "c_td",
    "censoring_weights",
    "combined_loss",
    "conform_max_visits",
    "cross_validate",
    "encoder_forward",
    "evaluate_model",
    "fit_schema",
    "fit_time_bins",
    "generate",
    "kaplan_meier",
    "last_visit_only",
    "length_of_stay_loss",
    "load_checkpoint",
    "load_dataset",
    "load_feature_spec",
    "mortality_loss",
    "optimism",
    "parse_long_csv",
    "pch_loss",
    "predict",
    "predict_sequences",
    "quantile_horizons",
    "save_checkpoint",
    "save_dataset",
    "split_dataset",
    "train",
]
