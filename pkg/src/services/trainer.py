"""The three unsupervised training stages.

Stage 1 pretrains backbone and embedding branch with patch discrimination and
mixup, stage 2 adds the clustering branch with the local-discrimination
losses, stage 3 guides assigned cluster channels with reference masks through
a discriminator.
"""

import json
import logging
import math
import time
from collections import defaultdict
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, NoReturn, Optional, Union

import numpy as np
import torch
from torch.optim import SGD, Adam
from torch.optim.lr_scheduler import ReduceLROnPlateau
from torch.utils.data import DataLoader

from src.errors import ConfigurationError, DivergenceError, NonFiniteError
from src.models.network_config import BackboneConfig, DiscriminatorConfig
from src.models.records import Checkpoint, EpochRecord
from src.models.run_config import RunConfig
from src.models.samples import ImageDataset, ReferenceMaskSet, SampleGroup
from src.models.training_config import StageConfig
from src.services.augmentation import PairedViewDataset, make_mixup
from src.services.checkpoint import (
    CHECKPOINT_SUFFIX,
    DIVERGED_NAME,
    require_stage,
    save_checkpoint,
)
from src.services.core_math import adaptive_average_pool
from src.services.hasher import Hasher
from src.services.losses import (
    LossComponents,
    loss_adversarial,
    loss_area,
    loss_dice,
    loss_discriminator,
    loss_entropy,
    loss_ld,
    loss_mixup,
    loss_pd,
    mixup_target,
    stage_total,
)
from src.services.networks import LocalDiscriminationNet, MaskDiscriminator

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[str, int, int], None]

METRICS_NAME = "metrics.jsonl"
VAL_SEED_OFFSET = 0x7FFF_FFFF
ASSIGN_SAMPLE_SIZE = 32


@dataclass
class StageResult:
    """Outcome of one stage run.

    Attributes:
        checkpoint: Final checkpoint.
        records: One record per epoch run in this call.
        checkpoint_path: Where the checkpoint was written, if anywhere.
        step_log: Component values and total of every optimization step.
    """

    checkpoint: Checkpoint
    records: list[EpochRecord] = field(default_factory=list)
    checkpoint_path: Optional[Path] = None
    step_log: list[dict[str, float]] = field(default_factory=list)


class MetricsWriter:
    """Appends one JSON object per epoch to a JSON-lines file."""

    def __init__(self, path: Union[str, Path]) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, record: EpochRecord) -> None:
        try:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record.to_json_dict(), sort_keys=False) + "\n")
        except OSError as e:
            raise OSError(f"Failed to write metrics {self.path}: {e}") from e


def read_metrics(path: Union[str, Path]) -> list[dict[str, Any]]:
    """Records of a metrics file, in order."""
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def build_scheduler(
    optimizer: torch.optim.Optimizer, patience: Optional[int], factor: float
) -> Optional[ReduceLROnPlateau]:
    """Halving-on-plateau schedule.

    The lr drops once ``patience`` consecutive epochs fail to improve the best
    validation loss strictly; the counter restarts after every drop.
    """
    if patience is None:
        return None
    return ReduceLROnPlateau(
        optimizer,
        mode="min",
        factor=factor,
        patience=patience - 1,
        threshold=0.0,
        threshold_mode="abs",
    )


def plateau_lr_schedule(
    history: Sequence[float], lr: float, patience: int = 3, factor: float = 0.5
) -> float:
    """Learning rate after replaying ``history`` through the plateau schedule.

    Args:
        history: Validation losses, one per epoch.
        lr: Initial learning rate.
        patience: Non-improving epochs tolerated before a drop.
        factor: Multiplier of a drop.

    Returns:
        The learning rate in effect after the last epoch.
    """
    param = torch.nn.Parameter(torch.zeros(1))
    optimizer = SGD([param], lr=lr)
    scheduler = build_scheduler(optimizer, patience, factor)
    assert scheduler is not None  # noqa: S101
    for value in history:
        scheduler.step(value)
    return float(optimizer.param_groups[0]["lr"])


def split_indices(count: int, val_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Seeded train/validation split; empty validation when the fraction is 0."""
    order = np.random.default_rng(seed).permutation(count).tolist()
    val_count = int(round(count * val_fraction)) if count > 1 else 0
    if val_fraction > 0 and count > 1:
        val_count = min(max(val_count, 1), count - 1)
    return sorted(order[val_count:]), sorted(order[:val_count])


def _model_parameters(model: LocalDiscriminationNet, stage: str) -> list[torch.nn.Parameter]:
    if stage == "pretrain":
        modules = (model.encoder, model.decoder, model.embedding)
        return [p for m in modules for p in m.parameters()]
    return list(model.parameters())


def compute_stage_losses(
    model: LocalDiscriminationNet,
    view_a: torch.Tensor,
    view_b: torch.Tensor,
    groups: Sequence[SampleGroup],
    stage_config: StageConfig,
    rng: np.random.Generator,
) -> tuple[LossComponents, Optional[torch.Tensor]]:
    """Loss components of one batch, without the adversarial term.

    Returns:
        Components keyed like ``STAGE_COMPONENTS`` and, for clustering stages,
        the ClusterProbMap of ``view_a``.
    """
    n = view_a.shape[0]
    mixups = make_mixup(groups, stage_config.mixups_per_batch, rng) if n >= 2 else []
    parts = [view_a, view_b]
    if mixups:
        parts.append(torch.stack([m.image for m in mixups]).to(view_a.device))
    features = model.backbone_forward(torch.cat(parts))
    v = model.embedding_head(features)

    grid = stage_config.grid
    s = adaptive_average_pool(v[:n], grid)
    s_hat = adaptive_average_pool(v[n : 2 * n], grid)
    tau, symmetric = stage_config.tau, stage_config.symmetric_denominator
    losses: LossComponents = {"pd": loss_pd(s, s_hat, tau, symmetric)}
    if mixups:
        s_tilde = adaptive_average_pool(v[2 * n :], grid)
        parents = torch.tensor([m.parent_indices for m in mixups], device=v.device)
        lam = torch.tensor([m.lam for m in mixups], dtype=v.dtype, device=v.device)
        z = mixup_target(s[parents[:, 0]], s[parents[:, 1]], lam)
        losses["mixup"] = loss_mixup(z, s_tilde, tau, symmetric)
    else:
        losses["mixup"] = v.sum() * 0.0

    if stage_config.stage == "pretrain":
        return losses, None
    r = model.clustering_head(features[: 2 * n])
    losses["ld"] = loss_ld(r, v[: 2 * n])
    losses["entropy"] = loss_entropy(r)
    losses["area"] = loss_area(r)
    return losses, r[:n]


def assign_channels_by_dice(
    model: LocalDiscriminationNet,
    images: torch.Tensor,
    references: ReferenceMaskSet,
) -> list[int]:
    """Greedy channel choice: per structure, the unused cluster whose mean map
    has the highest soft Dice with the mean reference mask."""
    was_training = model.training
    model.eval()
    with torch.no_grad():
        r = model(images[:ASSIGN_SAMPLE_SIZE]).clustering.mean(dim=0)
    model.train(was_training)
    mean_reference = references.masks.float().mean(dim=0).to(r.device)
    if mean_reference.shape[-2:] != r.shape[-2:]:
        raise ConfigurationError("reference masks and images differ in size")
    chosen: list[int] = []
    for k in range(mean_reference.shape[0]):
        scores = [
            -math.inf if m in chosen else 1.0 - float(loss_dice(r[m], mean_reference[k]))
            for m in range(r.shape[0])
        ]
        chosen.append(int(np.argmax(scores)))
    logger.info("Assigned cluster channels %s to %s", chosen, references.structure_names)
    return chosen


class StageRunner:
    """Runs one stage: data loading, optimization, validation and bookkeeping."""

    def __init__(
        self,
        run_config: RunConfig,
        stage: str,
        out_dir: Optional[Union[str, Path]] = None,
        progress_callback: Optional[ProgressCallback] = None,
        config_hash: Optional[str] = None,
        device: Union[str, torch.device] = "cpu",
    ) -> None:
        self.run_config = run_config
        self.stage_config = run_config.stage(stage)
        self.stage = stage
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.progress_callback = progress_callback
        self.config_hash = config_hash or Hasher().hash_config(run_config.to_dict())
        self.device = torch.device(device)
        self.metrics = MetricsWriter(self.out_dir / METRICS_NAME) if self.out_dir else None

        self.model: LocalDiscriminationNet
        self.optimizer: Adam
        self.scheduler: Optional[ReduceLROnPlateau] = None
        self.discriminator: Optional[MaskDiscriminator] = None
        self.disc_optimizer: Optional[Adam] = None
        self.reference_generator = torch.Generator()
        self.prior_state: Optional[dict[str, Any]] = None
        self.start_epoch = 0
        self.step_log: list[dict[str, float]] = []

    # -- setup -------------------------------------------------------------

    def build(self, init: Optional[Checkpoint]) -> bool:
        """Create model and optimizer, loading ``init``.

        Returns:
            True when ``init`` is resumed rather than used as initialization.
        """
        config = self.stage_config
        torch.manual_seed(config.seed)
        self.reference_generator.manual_seed(config.seed)
        backbone = (
            BackboneConfig(**init.model_config) if init else self.run_config.backbone
        )
        self.model = LocalDiscriminationNet(backbone).to(self.device)
        if init is not None:
            self.model.load_state_dict(init.parameters)
        self.optimizer = Adam(_model_parameters(self.model, self.stage), lr=config.lr)
        self.scheduler = build_scheduler(
            self.optimizer, config.plateau_patience, config.plateau_factor
        )
        resume = (
            init is not None
            and init.stage == self.stage
            and init.config_hash == self.config_hash
        )
        if resume and init is not None:
            self.start_epoch = init.epoch + 1
            self.optimizer.load_state_dict(init.optimizer_state["model"])
            if self.scheduler is not None and init.scheduler_state is not None:
                self.scheduler.load_state_dict(init.scheduler_state)
            if init.rng_state is not None:
                torch.set_rng_state(init.rng_state["torch"])
                self.reference_generator.set_state(init.rng_state["reference"])
            logger.info("Resuming %s at epoch %d", self.stage, self.start_epoch)
        return resume

    def build_discriminator(
        self, channels: int, init: Optional[Checkpoint], resume: bool
    ) -> None:
        disc_config = DiscriminatorConfig(
            input_channels=channels, image_size=self.run_config.image_size
        )
        self.discriminator = MaskDiscriminator(disc_config).to(self.device)
        self.disc_optimizer = Adam(
            self.discriminator.parameters(), lr=self.stage_config.disc_lr
        )
        if resume and init is not None and init.discriminator_parameters is not None:
            self.discriminator.load_state_dict(init.discriminator_parameters)
            self.disc_optimizer.load_state_dict(init.optimizer_state["discriminator"])

    # -- bookkeeping -------------------------------------------------------

    def checkpoint(self, epoch: int, metrics: dict[str, float]) -> Checkpoint:
        optimizer_state: dict[str, Any] = {"model": self.optimizer.state_dict()}
        disc_config, disc_params = None, None
        if self.discriminator is not None and self.disc_optimizer is not None:
            optimizer_state["discriminator"] = self.disc_optimizer.state_dict()
            disc_config = asdict(self.discriminator.config)
            disc_params = self.discriminator.state_dict()
        return Checkpoint(
            stage=self.stage,
            epoch=epoch,
            config_hash=self.config_hash,
            model_config=asdict(self.model.config),
            parameters=self.model.state_dict(),
            optimizer_state=optimizer_state,
            scheduler_state=self.scheduler.state_dict() if self.scheduler else None,
            discriminator_config=disc_config,
            discriminator_parameters=disc_params,
            rng_state={
                "torch": torch.get_rng_state(),
                "reference": self.reference_generator.get_state(),
            },
            prior=self.prior_state,
            metrics=metrics,
        )

    def checkpoint_path(self) -> Optional[Path]:
        if self.out_dir is None:
            return None
        return self.out_dir / f"{self.stage}{CHECKPOINT_SUFFIX}"

    def abort(self, epoch: int, step: int, values: dict[str, float]) -> NoReturn:
        """Write the diagnostic checkpoint and raise DivergenceError."""
        path = None
        if self.out_dir is not None:
            path = save_checkpoint(
                self.checkpoint(epoch, {"step": float(step), **values}),
                self.out_dir / DIVERGED_NAME,
            )
        raise DivergenceError(
            f"{self.stage} diverged at epoch {epoch} step {step}: {values}",
            checkpoint_path=path,
        )

    # -- loops -------------------------------------------------------------

    def loader(self, dataset: PairedViewDataset, epoch: int, shuffle: bool) -> DataLoader:
        generator = torch.Generator().manual_seed(self.stage_config.seed + epoch)
        return DataLoader(
            dataset,
            batch_size=self.stage_config.groups_per_batch,
            shuffle=shuffle,
            generator=generator,
            num_workers=self.stage_config.num_workers,
        )

    def _groups(
        self, view_a: torch.Tensor, view_b: torch.Tensor, ids: torch.Tensor
    ) -> list[SampleGroup]:
        return [
            SampleGroup(view_a=view_a[k], view_b=view_b[k], source_id=int(ids[k]))
            for k in range(view_a.shape[0])
        ]

    def check_gradients(self, epoch: int, step: int, values: dict[str, float]) -> None:
        for p in self.model.parameters():
            if p.grad is not None and not bool(torch.isfinite(p.grad).all()):
                self.abort(epoch, step, {**values, "grad": math.nan})

    def train_epoch(
        self,
        dataset: PairedViewDataset,
        epoch: int,
        references: Optional[ReferenceMaskSet] = None,
        channels: Optional[list[int]] = None,
        train_generator: bool = True,
    ) -> tuple[dict[str, float], float]:
        """One pass over the training split; returns component means and mean total."""
        config = self.stage_config
        dataset.epoch = epoch
        rng = np.random.default_rng([config.seed, epoch])
        sums: dict[str, float] = defaultdict(float)
        total_sum, steps = 0.0, 0
        self.model.train()
        loader = self.loader(dataset, epoch, shuffle=True)
        batch_count = len(loader)
        for step, (view_a, view_b, ids) in enumerate(loader):
            view_a, view_b = view_a.to(self.device), view_b.to(self.device)
            groups = self._groups(view_a, view_b, ids)
            extra: dict[str, float] = {}
            try:
                losses, r_a = compute_stage_losses(
                    self.model, view_a, view_b, groups, config, rng
                )
                if references is not None and channels is not None and r_a is not None:
                    losses["adv"], extra = self.adversarial_step(r_a[:, channels], references)
                total = stage_total(losses, config.weights, self.stage)
            except NonFiniteError as e:
                logger.error("%s epoch %d step %d: %s", self.stage, epoch, step, e)
                self.abort(epoch, step, {"non_finite": math.nan})
            values = {name: float(value.detach()) for name, value in losses.items()}
            if not bool(torch.isfinite(total)):
                self.abort(epoch, step, values)
            if train_generator:
                self.optimizer.zero_grad()
                total.backward()
                self.check_gradients(epoch, step, values)
                self.optimizer.step()

            values_total = float(total.detach())
            self.step_log.append({**values, "total": values_total})
            logger.debug("%s epoch %d step %d: %s total=%.6f", self.stage, epoch, step, values, values_total)
            for name, value in {**values, **extra}.items():
                sums[name] += value
            total_sum += values_total
            steps += 1
            if self.progress_callback:
                self.progress_callback(f"{self.stage} epoch {epoch}", step + 1, batch_count)
        return {k: v / steps for k, v in sums.items()}, total_sum / steps

    def adversarial_step(
        self, fake: torch.Tensor, references: ReferenceMaskSet
    ) -> tuple[torch.Tensor, dict[str, float]]:
        """Update the discriminator once, then return the generator's adversarial loss."""
        assert self.discriminator is not None and self.disc_optimizer is not None  # noqa: S101
        n = fake.shape[0]
        count = len(references)
        if count >= n:
            index = torch.randperm(count, generator=self.reference_generator)[:n]
        else:
            index = torch.randint(0, count, (n,), generator=self.reference_generator)
        real = references.masks[index].to(device=fake.device, dtype=fake.dtype)

        self.disc_optimizer.zero_grad()
        d_real = self.discriminator(real)
        d_fake = self.discriminator(fake.detach())
        loss_d = loss_discriminator(d_real, d_fake)
        loss_d.backward()
        self.disc_optimizer.step()

        adv = loss_adversarial(self.discriminator(fake))
        extra = {
            "loss_d": float(loss_d.detach()),
            "d_real": float(d_real.detach().mean()),
            "d_fake": float(d_fake.detach().mean()),
        }
        return adv, extra

    def validate(self, dataset: PairedViewDataset, epoch: int) -> float:
        """Mean non-adversarial stage total on the held-out split."""
        config = self.stage_config
        rng = np.random.default_rng([config.seed, VAL_SEED_OFFSET])
        dataset.epoch = 0
        self.model.eval()
        totals = []
        with torch.no_grad():
            for step, (view_a, view_b, ids) in enumerate(self.loader(dataset, 0, shuffle=False)):
                view_a, view_b = view_a.to(self.device), view_b.to(self.device)
                try:
                    losses, _ = compute_stage_losses(
                        self.model, view_a, view_b, self._groups(view_a, view_b, ids), config, rng
                    )
                except NonFiniteError as e:
                    logger.error("%s validation epoch %d: %s", self.stage, epoch, e)
                    self.abort(epoch, step, {"val_non_finite": math.nan})
                losses.setdefault("adv", torch.zeros(()))
                totals.append(float(stage_total(losses, config.weights, self.stage)))
        self.model.train()
        return float(np.mean(totals))

    def run(
        self,
        dataset: ImageDataset,
        references: Optional[ReferenceMaskSet] = None,
        channels: Optional[list[int]] = None,
        train_generator: bool = True,
    ) -> StageResult:
        config = self.stage_config
        if len(dataset) == 0:
            raise ValueError("dataset is empty")
        use_validation = config.plateau_patience is not None and config.val_fraction > 0
        train_idx, val_idx = split_indices(
            len(dataset), config.val_fraction if use_validation else 0.0, config.seed
        )
        augment = self.run_config.augment
        train_set = PairedViewDataset(dataset.images, augment, config.seed, train_idx)
        val_set = (
            PairedViewDataset(dataset.images, augment, config.seed + VAL_SEED_OFFSET, val_idx)
            if val_idx
            else None
        )
        logger.info(
            "Starting %s: %d train / %d val images, epochs %d-%d",
            self.stage, len(train_idx), len(val_idx), self.start_epoch, config.max_epochs - 1,
        )

        records: list[EpochRecord] = []
        checkpoint: Optional[Checkpoint] = None
        path = self.checkpoint_path()
        for epoch in range(self.start_epoch, config.max_epochs):
            started = time.perf_counter()
            lr = float(self.optimizer.param_groups[0]["lr"])
            components, total = self.train_epoch(
                train_set, epoch, references, channels, train_generator
            )
            val_loss = self.validate(val_set, epoch) if val_set is not None else None
            if self.scheduler is not None and val_loss is not None:
                self.scheduler.step(val_loss)
            extra = {k: components.pop(k) for k in ("loss_d", "d_real", "d_fake") if k in components}
            record = EpochRecord(
                stage=self.stage,
                epoch=epoch,
                components=components,
                total=total,
                lr=lr,
                wall_time=time.perf_counter() - started,
                val_loss=val_loss,
                extra=extra,
            )
            records.append(record)
            if self.metrics is not None:
                self.metrics.write(record)
            logger.info(
                "%s epoch %d/%d total=%.4f lr=%.2e%s",
                self.stage, epoch + 1, config.max_epochs, total, lr,
                "" if val_loss is None else f" val={val_loss:.4f}",
            )
            checkpoint = self.checkpoint(epoch, {"total": total, **components})
            if path is not None:
                save_checkpoint(checkpoint, path)

        if checkpoint is None:
            logger.info("%s already complete at epoch %d", self.stage, self.start_epoch - 1)
            checkpoint = self.checkpoint(self.start_epoch - 1, {})
        return StageResult(
            checkpoint=checkpoint,
            records=records,
            checkpoint_path=path,
            step_log=self.step_log,
        )


def run_patch_pretrain(
    config: RunConfig,
    dataset: ImageDataset,
    out_dir: Optional[Union[str, Path]] = None,
    init: Optional[Checkpoint] = None,
    progress_callback: Optional[ProgressCallback] = None,
    config_hash: Optional[str] = None,
) -> StageResult:
    """Stage 1: patch discrimination + mixup on backbone and embedding branch.

    Args:
        config: Run configuration (``[pretrain]`` section).
        dataset: Unlabeled images.
        out_dir: Where ``pretrain.pt`` and ``metrics.jsonl`` go; ``None`` keeps
            everything in memory.
        init: Optional pretrain checkpoint to resume.
        progress_callback: Receives ``(message, step, steps_per_epoch)``.
        config_hash: Precomputed config digest.

    Returns:
        StageResult with the final checkpoint and epoch records.
    """
    if init is not None and init.stage != "pretrain":
        raise ConfigurationError("pretrain can only resume a pretrain checkpoint")
    runner = StageRunner(config, "pretrain", out_dir, progress_callback, config_hash)
    runner.build(init)
    return runner.run(dataset)


def run_local_discrimination(
    config: RunConfig,
    dataset: ImageDataset,
    init: Checkpoint,
    out_dir: Optional[Union[str, Path]] = None,
    progress_callback: Optional[ProgressCallback] = None,
    config_hash: Optional[str] = None,
) -> StageResult:
    """Stage 2: joint training of both branches from a pretrained backbone.

    Raises:
        ConfigurationError: If ``init`` is not a pretrain (or ld) checkpoint.
    """
    require_stage(init, "ld")
    runner = StageRunner(config, "ld", out_dir, progress_callback, config_hash)
    runner.build(init)
    return runner.run(dataset)


def run_prior_guided(
    config: RunConfig,
    dataset: ImageDataset,
    references: ReferenceMaskSet,
    init: Checkpoint,
    out_dir: Optional[Union[str, Path]] = None,
    progress_callback: Optional[ProgressCallback] = None,
    config_hash: Optional[str] = None,
    train_generator: bool = True,
) -> StageResult:
    """Stage 3: adversarial prior guidance of assigned cluster channels.

    The discriminator sees the soft maps of the assigned channels of each
    group's first view against as many sampled reference masks. With
    ``train_generator=False`` only the discriminator learns.

    Raises:
        ConfigurationError: On a wrong init stage or when reference channels
            do not match the assigned channels.
    """
    require_stage(init, "prior")
    prior = config.prior
    if list(references.structure_names) != list(prior.structure_names):
        raise ConfigurationError(
            f"reference structures {references.structure_names} do not match "
            f"prior structures {prior.structure_names}"
        )
    if references.masks.shape[1] != len(prior.cluster_channels):
        raise ConfigurationError(
            f"{references.masks.shape[1]} reference channels for "
            f"{len(prior.cluster_channels)} assigned cluster channels"
        )
    size = config.image_size
    if tuple(references.masks.shape[-2:]) != (size, size):
        raise ConfigurationError(f"reference masks must be {size}x{size}")

    runner = StageRunner(config, "prior", out_dir, progress_callback, config_hash)
    resume = runner.build(init)
    if resume and init.prior is not None:
        channels = list(init.prior["cluster_channels"])
    elif prior.auto_assign:
        channels = assign_channels_by_dice(
            runner.model, dataset.images.to(runner.device), references
        )
    else:
        channels = list(prior.cluster_channels)
    runner.prior_state = {
        "structure_names": list(prior.structure_names),
        "cluster_channels": channels,
        "reference_kind": references.source_kind,
    }
    runner.build_discriminator(len(channels), init, resume)
    logger.info("Prior guidance of channels %s by %s references", channels, references.source_kind)
    return runner.run(dataset, references, channels, train_generator)
