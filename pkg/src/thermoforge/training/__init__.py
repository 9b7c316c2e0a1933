"""Loss evaluation, optimization and the training loop."""

from .data import MaterialPointSamples, NormalizationState, PreparedScenario, Scenario, normalization_for, prepare
from .losses import (
    LossBreakdown,
    LossWeights,
    ModelSettings,
    RegularizationSpec,
    aux_loss,
    fem_loss,
    materialpoint_loss,
    physics_loss,
    regularization_loss,
    scenario_terms,
)
from .loop import LOG_COLUMNS, TrainConfig, TrainRecord, TrainResult, TrainingAborted, train
from .optim import AdamState, activity_report, adam_step, adam_update

__all__ = [
    "AdamState", "LOG_COLUMNS", "LossBreakdown", "LossWeights", "MaterialPointSamples", "ModelSettings",
    "NormalizationState", "PreparedScenario", "RegularizationSpec", "Scenario", "TrainConfig", "TrainRecord",
    "TrainResult", "TrainingAborted", "activity_report", "adam_step", "adam_update", "aux_loss", "fem_loss",
    "materialpoint_loss", "normalization_for", "physics_loss", "prepare", "regularization_loss",
    "scenario_terms", "train",
]
