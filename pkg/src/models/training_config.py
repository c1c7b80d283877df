"""Training configuration data models."""

from dataclasses import dataclass, field
from typing import Literal, Optional

from src.errors import ConfigurationError

Stage = Literal["pretrain", "ld", "prior"]
SUPPORTED_STAGES: tuple[str, ...] = ("pretrain", "ld", "prior")
CHECKPOINT_STAGES: tuple[str, ...] = ("pretrain", "ld", "prior", "finetune")


@dataclass
class LossWeights:
    """Weights of the stage-total loss components."""

    w_pd: float = 1.0
    w_mixup: float = 1.0
    w_ld: float = 10.0
    w_entropy: float = 1.0
    w_area: float = 5.0
    w_adv: float = 2.0

    def __post_init__(self) -> None:
        """Validate configuration values after initialization."""
        for name, value in vars(self).items():
            if value < 0:
                raise ConfigurationError(f"{name} must be nonnegative")


@dataclass
class StageConfig:
    """Hyperparameters of one unsupervised training stage.

    Attributes:
        stage: Stage name.
        max_epochs: Number of epochs.
        groups_per_batch: Source images per batch (two views each).
        mixups_per_batch: Mixup images per batch.
        lr: Learning rate of the backbone and heads.
        disc_lr: Learning rate of the discriminator (prior stage).
        plateau_patience: Non-improving validation epochs before halving lr.
        plateau_factor: Multiplier applied on a plateau.
        weights: Loss weights.
        grid: Pooling grid side G of the patch losses.
        tau: Softmax temperature of the patch losses.
        symmetric_denominator: Add augmented-view patches to the denominator.
        val_fraction: Held-out fraction for the validation loss.
        num_workers: Data-loader worker processes.
        seed: Seed of every random draw in the stage.
    """

    stage: Stage = "pretrain"
    max_epochs: int = 20
    groups_per_batch: int = 16
    mixups_per_batch: int = 8
    lr: float = 1e-3
    disc_lr: float = 2e-4
    plateau_patience: Optional[int] = 3
    plateau_factor: float = 0.5
    weights: LossWeights = field(default_factory=LossWeights)
    grid: int = 4
    tau: float = 0.1
    symmetric_denominator: bool = False
    val_fraction: float = 0.1
    num_workers: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate configuration values after initialization."""
        if self.stage not in SUPPORTED_STAGES:
            supported = ", ".join(SUPPORTED_STAGES)
            raise ConfigurationError(f"stage must be one of: {supported}")
        if self.max_epochs < 1:
            raise ConfigurationError("max_epochs must be at least 1")
        if self.groups_per_batch < 1 or self.mixups_per_batch < 0:
            raise ConfigurationError("batch composition must be positive")
        if self.lr <= 0 or self.disc_lr <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.plateau_patience is not None and self.plateau_patience < 1:
            raise ConfigurationError("plateau_patience must be at least 1")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigurationError("plateau_factor must lie in (0, 1)")
        if self.grid < 1:
            raise ConfigurationError("grid must be positive")
        if self.tau <= 0:
            raise ConfigurationError("tau must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigurationError("val_fraction must lie in [0, 1)")
        if self.num_workers < 0:
            raise ConfigurationError("num_workers must be nonnegative")

    @classmethod
    def for_stage(cls, stage: str, **overrides: object) -> "StageConfig":
        """Published defaults of a stage, optionally overridden."""
        defaults: dict[str, dict[str, object]] = {
            "pretrain": dict(
                max_epochs=20, groups_per_batch=16, mixups_per_batch=8,
                lr=1e-3, plateau_patience=3,
            ),
            "ld": dict(
                max_epochs=80, groups_per_batch=6, mixups_per_batch=3,
                lr=1e-3, plateau_patience=None,
            ),
            "prior": dict(
                max_epochs=80, groups_per_batch=6, mixups_per_batch=3,
                lr=1e-3, disc_lr=2e-4, plateau_patience=None,
            ),
        }
        if stage not in defaults:
            supported = ", ".join(SUPPORTED_STAGES)
            raise ConfigurationError(f"stage must be one of: {supported}")
        values = {**defaults[stage], **overrides, "stage": stage}
        return cls(**values)  # type: ignore[arg-type]


@dataclass
class PriorSpec:
    """Which cluster channels the reference structures guide.

    Attributes:
        structure_names: Reference structures in discriminator channel order.
        cluster_channels: Cluster index assigned to each structure.
        reference_kind: Source of the reference masks.
        reference_dir: Directory holding ``<structure>/*.png`` masks.
        auto_assign: Pick channels by Dice against the mean reference instead.
    """

    structure_names: list[str] = field(default_factory=lambda: ["disk"])
    cluster_channels: list[int] = field(default_factory=lambda: [0])
    reference_kind: str = "simulated"
    reference_dir: Optional[str] = None
    auto_assign: bool = False

    def validate(self, cluster_count: int) -> None:
        """Check the assignment against the clustering head size."""
        if not self.structure_names:
            raise ConfigurationError("at least one prior structure is required")
        if len(self.cluster_channels) != len(self.structure_names):
            raise ConfigurationError(
                "cluster_channels must give one channel per structure"
            )
        if len(set(self.cluster_channels)) != len(self.cluster_channels):
            raise ConfigurationError("assigned cluster channels must be distinct")
        if any(not 0 <= c <= cluster_count - 1 for c in self.cluster_channels):
            raise ConfigurationError(
                f"cluster channels must lie in [0, {cluster_count - 1}]"
            )


@dataclass
class FinetuneConfig:
    """Downstream transfer protocol: frozen encoder, then full fine-tuning.

    Attributes:
        structure: Ground-truth mask the decoder learns to segment.
        frozen_epochs: Epochs with the encoder frozen.
        finetune_epochs: Epochs with every parameter trainable.
        frozen_lr: Learning rate of the frozen phase.
        finetune_lr: Learning rate of the fine-tune phase.
        batch_size: Labeled images per batch.
        train_count: Labeled training images (rest is the test split).
        threshold: Binarization threshold for test DSC.
        seed: Seed of every random draw.
    """

    structure: str = "disk"
    frozen_epochs: int = 100
    finetune_epochs: int = 100
    frozen_lr: float = 1e-3
    finetune_lr: float = 1e-4
    batch_size: int = 4
    train_count: int = 20
    threshold: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate configuration values after initialization."""
        if self.frozen_epochs < 0 or self.finetune_epochs < 0:
            raise ConfigurationError("epoch counts must be nonnegative")
        if self.frozen_lr <= 0 or self.finetune_lr <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.batch_size < 2 or self.train_count < 2:
            raise ConfigurationError("batch_size and train_count must be at least 2")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigurationError("threshold must lie in [0, 1]")
