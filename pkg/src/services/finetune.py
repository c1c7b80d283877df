"""Downstream transfer: frozen-encoder training, then full fine-tuning."""

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import torch
from torch.optim import Adam

from src.models.network_config import BackboneConfig
from src.models.records import Checkpoint, EpochRecord
from src.models.run_config import RunConfig
from src.models.samples import ImageDataset
from src.services.checkpoint import CHECKPOINT_SUFFIX, require_stage, save_checkpoint
from src.services.evaluation import evaluate_probability_maps, predict
from src.services.hasher import Hasher
from src.services.losses import loss_dice
from src.services.networks import SegmentationNet, load_encoder_state
from src.services.trainer import METRICS_NAME, MetricsWriter

logger = logging.getLogger(__name__)

STAGE = "finetune"
MIN_BATCH = 2


@dataclass
class FinetuneResult:
    """Final checkpoint, per-epoch records and the test-split DSC."""

    checkpoint: Checkpoint
    records: list[EpochRecord] = field(default_factory=list)
    test_dsc: float = 0.0
    checkpoint_path: Optional[Path] = None


def split_labeled(count: int, train_count: int, seed: int) -> tuple[list[int], list[int]]:
    """Seeded split into ``train_count`` training and the remaining test images."""
    if count <= train_count:
        raise ValueError(
            f"need more than {train_count} labeled images for a test split, got {count}"
        )
    order = np.random.default_rng(seed).permutation(count).tolist()
    return sorted(order[:train_count]), sorted(order[train_count:])


def _train_phase(
    model: SegmentationNet,
    optimizer: Adam,
    images: torch.Tensor,
    masks: torch.Tensor,
    epochs: int,
    first_epoch: int,
    phase: int,
    batch_size: int,
    seed: int,
    frozen: bool,
    metrics: Optional[MetricsWriter],
    progress_callback: Optional[Callable[[str, int, int], None]],
) -> list[EpochRecord]:
    records = []
    for epoch in range(first_epoch, first_epoch + epochs):
        started = time.perf_counter()
        model.train()
        if frozen:
            # keep encoder batch-norm statistics fixed
            model.encoder.eval()
        generator = torch.Generator().manual_seed(seed + epoch)
        order = torch.randperm(images.shape[0], generator=generator)
        losses = []
        for start in range(0, len(order), batch_size):
            index = order[start : start + batch_size]
            if len(index) < MIN_BATCH:
                # batch norm needs two images per channel
                continue
            loss = loss_dice(model(images[index]), masks[index])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        mean = float(np.mean(losses))
        record = EpochRecord(
            stage=STAGE,
            epoch=epoch,
            components={"dice": mean},
            total=mean,
            lr=float(optimizer.param_groups[0]["lr"]),
            wall_time=time.perf_counter() - started,
            extra={"phase": float(phase)},
        )
        records.append(record)
        if metrics is not None:
            metrics.write(record)
        logger.info("finetune phase %d epoch %d dice_loss=%.4f", phase, epoch + 1, mean)
        if progress_callback:
            progress_callback(f"finetune phase {phase}", epoch - first_epoch + 1, epochs)
    return records


def run_finetune(
    config: RunConfig,
    dataset: ImageDataset,
    encoder_init: Optional[Checkpoint] = None,
    out_dir: Optional[Union[str, Path]] = None,
    progress_callback: Optional[Callable[[str, int, int], None]] = None,
    config_hash: Optional[str] = None,
) -> FinetuneResult:
    """Train a segmentation decoder on a labeled split of ``dataset``.

    Phase 1 trains the decoder on a frozen encoder, phase 2 trains every
    parameter at a lower learning rate. Both minimize the soft Dice loss.

    Args:
        config: Run configuration (``[finetune]`` section).
        dataset: Images with masks for ``config.finetune.structure``.
        encoder_init: Checkpoint whose encoder initializes the model;
            ``None`` starts from random weights.
        out_dir: Where ``finetune.pt`` and ``metrics.jsonl`` go.
        progress_callback: Receives ``(message, epoch, epochs)``.
        config_hash: Precomputed config digest.

    Returns:
        FinetuneResult with the mean per-image test DSC.
    """
    settings = config.finetune
    if encoder_init is not None:
        require_stage(encoder_init, STAGE)
    train_idx, test_idx = split_labeled(len(dataset), settings.train_count, settings.seed)
    masks = dataset.mask(settings.structure).float().unsqueeze(1)
    images = dataset.images

    torch.manual_seed(settings.seed)
    backbone = (
        BackboneConfig(**encoder_init.model_config) if encoder_init else config.backbone
    )
    model = SegmentationNet(backbone)
    if encoder_init is not None:
        copied = load_encoder_state(model, encoder_init.parameters)
        logger.info("Initialized encoder from %s checkpoint (%d tensors)", encoder_init.stage, copied)

    root = Path(out_dir) if out_dir is not None else None
    metrics = MetricsWriter(root / METRICS_NAME) if root else None
    train_images, train_masks = images[train_idx], masks[train_idx]

    model.encoder.requires_grad_(False)
    frozen_optimizer = Adam(model.decoder.parameters(), lr=settings.frozen_lr)
    records = _train_phase(
        model, frozen_optimizer, train_images, train_masks, settings.frozen_epochs,
        0, 1, settings.batch_size, settings.seed, True, metrics, progress_callback,
    )
    model.encoder.requires_grad_(True)
    full_optimizer = Adam(model.parameters(), lr=settings.finetune_lr)
    records += _train_phase(
        model, full_optimizer, train_images, train_masks, settings.finetune_epochs,
        settings.frozen_epochs, 2, settings.batch_size, settings.seed, False, metrics,
        progress_callback,
    )

    prob = predict(model, images[test_idx])
    report, _ = evaluate_probability_maps(
        prob, masks[test_idx, 0], settings.structure, settings.threshold
    )
    test_dsc = report.dsc[settings.structure]
    logger.info("finetune test DSC (%s, %d images): %.4f", settings.structure, len(test_idx), test_dsc)

    checkpoint = Checkpoint(
        stage=STAGE,
        epoch=settings.frozen_epochs + settings.finetune_epochs - 1,
        config_hash=config_hash or Hasher().hash_config(config.to_dict()),
        model_config=asdict(backbone),
        parameters=model.state_dict(),
        optimizer_state={"model": full_optimizer.state_dict()},
        rng_state={"torch": torch.get_rng_state()},
        metrics={"test_dsc": test_dsc},
    )
    path = save_checkpoint(checkpoint, root / f"{STAGE}{CHECKPOINT_SUFFIX}") if root else None
    return FinetuneResult(
        checkpoint=checkpoint, records=records, test_dsc=test_dsc, checkpoint_path=path
    )
