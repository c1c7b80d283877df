"""Run bookkeeping data models: manifests, epoch records, checkpoints."""

from dataclasses import dataclass, field
from typing import Any, Optional


@dataclass
class RunManifest:
    """Provenance written once per run before any training step."""

    command: str
    config_path: Optional[str]
    config_hash: str
    seed: int
    output_dir: str
    code_hash: str
    created_at: str


@dataclass
class EpochRecord:
    """One metrics line: per-component epoch means, lr and wall time."""

    stage: str
    epoch: int
    components: dict[str, float]
    total: float
    lr: float
    wall_time: float
    val_loss: Optional[float] = None
    extra: dict[str, float] = field(default_factory=dict)

    def to_json_dict(self) -> dict[str, Any]:
        """Flatten into the JSON-lines record layout."""
        record: dict[str, Any] = {"stage": self.stage, "epoch": self.epoch}
        record.update(self.components)
        record["total"] = self.total
        record["lr"] = self.lr
        record["wall_time"] = self.wall_time
        if self.val_loss is not None:
            record["val_loss"] = self.val_loss
        record.update(self.extra)
        return record


@dataclass
class Checkpoint:
    """Everything needed to evaluate, transfer or resume a stage.

    Attributes:
        stage: Stage that produced the checkpoint.
        epoch: Last completed epoch (0-based).
        config_hash: Digest of the resolved run config.
        model_config: BackboneConfig fields.
        parameters: Model state dict keyed by module path.
        optimizer_state: Optimizer state dicts keyed by role.
        scheduler_state: LR scheduler state, if any.
        discriminator_config: DiscriminatorConfig fields (prior stage).
        discriminator_parameters: Discriminator state dict (prior stage).
        rng_state: Global torch RNG state.
        prior: Structure names and assigned channels (prior stage).
        metrics: Final metrics of the stage.
    """

    stage: str
    epoch: int
    config_hash: str
    model_config: dict[str, Any]
    parameters: dict[str, Any]
    optimizer_state: dict[str, Any] = field(default_factory=dict)
    scheduler_state: Optional[dict[str, Any]] = None
    discriminator_config: Optional[dict[str, Any]] = None
    discriminator_parameters: Optional[dict[str, Any]] = None
    rng_state: Optional[Any] = None
    prior: Optional[dict[str, Any]] = None
    metrics: dict[str, float] = field(default_factory=dict)
