"""
Models package for the uncertainty attention lab.
"""

from models.data_models import (
    AttentionMap,
    Dataset,
    DatasetConfig,
    Example,
    LossBundle,
    MetricsConfig,
    MetricsReport,
    ModeSpec,
    ModelConfig,
    ModelParams,
    PARAM_GROUPS,
    RasterImage,
    RunConfig,
    StepReport,
    TRAINING_MODES,
    TrainConfig,
    UncertaintyErrorReport,
    UncertaintyEstimate,
    VisualizationConfig,
)
from models.errors import (
    DatasetFormatError,
    LabError,
    NumericalFaultError,
    ShapeError,
    ValidationError,
)

__all__ = [
    "AttentionMap",
    "Dataset",
    "DatasetConfig",
    "Example",
    "LossBundle",
    "MetricsConfig",
    "MetricsReport",
    "ModeSpec",
    "ModelConfig",
    "ModelParams",
    "PARAM_GROUPS",
    "RasterImage",
    "RunConfig",
    "StepReport",
    "TRAINING_MODES",
    "TrainConfig",
    "UncertaintyErrorReport",
    "UncertaintyEstimate",
    "VisualizationConfig",
    "DatasetFormatError",
    "LabError",
    "NumericalFaultError",
    "ShapeError",
    "ValidationError",
]
