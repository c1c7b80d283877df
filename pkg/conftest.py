"""pytest configuration."""

from dataclasses import replace
from pathlib import Path

import pytest
import torch

from src.models.data_config import AugmentConfig, EllipsePrior, SyntheticSceneSpec
from src.models.network_config import BackboneConfig
from src.models.run_config import ReferenceConfig, RunConfig
from src.models.samples import ImageDataset
from src.models.training_config import (
    SUPPORTED_STAGES,
    FinetuneConfig,
    PriorSpec,
    StageConfig,
)
from src.services.scenes import generate_synthetic_dataset

TINY_SIZE = 32


def make_tiny_config(seed: int = 0, **stage_overrides: object) -> RunConfig:
    """32px run configuration with a 1/16-width backbone and 1-epoch stages."""
    overrides = {
        "max_epochs": 1,
        "groups_per_batch": 4,
        "mixups_per_batch": 2,
        "seed": seed,
        **stage_overrides,
    }
    stages = {name: StageConfig.for_stage(name, **overrides) for name in SUPPORTED_STAGES}
    return RunConfig(
        seed=seed,
        image_size=TINY_SIZE,
        backbone=BackboneConfig(width_scale=0.0625, embedding_dim=8, cluster_count=4),
        augment=AugmentConfig(output_size=TINY_SIZE),
        stages=stages,
        prior=PriorSpec(structure_names=["disk"], cluster_channels=[0]),
        finetune=FinetuneConfig(
            frozen_epochs=1, finetune_epochs=1, train_count=4, batch_size=2, seed=seed
        ),
        synthetic=make_tiny_scene_spec(seed),
        references=ReferenceConfig(
            disk=EllipsePrior(axes=(4.0, 4.0)),
            blob=EllipsePrior(axes=(2.75, 2.75), angle_jitter=0.0),
        ),
    )


def make_tiny_scene_spec(seed: int = 0) -> SyntheticSceneSpec:
    return SyntheticSceneSpec(
        image_size=TINY_SIZE,
        disk_radius=(3.0, 5.0),
        blob_radius=(2.5, 3.0),
        blob_offset=(9.0, 12.0),
        stroke_width=1,
        texture_sigma=2.0,
        seed=seed,
    )


def with_stage(config: RunConfig, stage: str, **changes: object) -> RunConfig:
    """Copy of ``config`` with one stage's settings replaced."""
    stages = dict(config.stages)
    stages[stage] = replace(stages[stage], **changes)
    return replace(config, stages=stages)


@pytest.fixture
def tiny_config() -> RunConfig:
    """Tiny run configuration for fast CPU tests."""
    return make_tiny_config()


@pytest.fixture(scope="session")
def tiny_dataset() -> ImageDataset:
    """Eight 32px synthetic scenes with ground-truth masks."""
    torch.set_num_threads(1)
    return generate_synthetic_dataset(make_tiny_scene_spec(), 8)


TINY_INI = """\
[run]
seed = 0
image_size = 32

[backbone]
width_scale = 0.0625
embedding_dim = 8
cluster_count = 4

[pretrain]
max_epochs = 2
groups_per_batch = 4
mixups_per_batch = 2

[ld]
max_epochs = 1
groups_per_batch = 4
mixups_per_batch = 2

[prior]
max_epochs = 1
groups_per_batch = 4
mixups_per_batch = 2
structure_names = disk
cluster_channels = 0
reference_kind = simulated

[finetune]
structure = disk
frozen_epochs = 1
finetune_epochs = 1
train_count = 6
batch_size = 2

[synthetic]
disk_radius = 3, 5
blob_radius = 2.5, 3
blob_offset = 9, 12
stroke_width = 1
texture_sigma = 2

[references]
disk_axes = 4, 4
blob_axes = 2.75, 2.75
blob_angle_jitter = 0
"""


@pytest.fixture
def tiny_ini(tmp_path: Path) -> Path:
    """INI file matching ``make_tiny_config`` at the CLI level."""
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_INI, encoding="utf-8")
    return path
