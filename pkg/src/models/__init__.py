"""Data models for local discrimination learning."""

from .data_config import AugmentConfig, EllipsePrior, SyntheticSceneSpec
from .network_config import BackboneConfig, DiscriminatorConfig
from .records import Checkpoint, EpochRecord, RunManifest
from .report import SegmentationReport
from .run_config import RunConfig, load_run_config
from .samples import (
    ImageDataset,
    MixupSample,
    ReferenceMaskSet,
    SampleGroup,
    SceneLayout,
)
from .training_config import FinetuneConfig, LossWeights, PriorSpec, StageConfig

__all__ = [
    "AugmentConfig",
    "BackboneConfig",
    "Checkpoint",
    "DiscriminatorConfig",
    "EllipsePrior",
    "EpochRecord",
    "FinetuneConfig",
    "ImageDataset",
    "LossWeights",
    "MixupSample",
    "PriorSpec",
    "ReferenceMaskSet",
    "RunConfig",
    "RunManifest",
    "SampleGroup",
    "SceneLayout",
    "SegmentationReport",
    "StageConfig",
    "SyntheticSceneSpec",
    "load_run_config",
]
