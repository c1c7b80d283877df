"""Checkpoint persistence and stage-order checks."""

import logging
from dataclasses import asdict, fields
from pathlib import Path
from typing import Union

import torch

from src.errors import ConfigurationError
from src.models.records import Checkpoint
from src.models.training_config import CHECKPOINT_STAGES

logger = logging.getLogger(__name__)

CHECKPOINT_SUFFIX = ".pt"
DIVERGED_NAME = "diverged.pt"

# Stages whose checkpoints may initialize (or resume) each command.
STAGE_INPUTS: dict[str, tuple[str, ...]] = {
    "ld": ("pretrain", "ld"),
    "prior": ("ld", "prior"),
    "finetune": ("pretrain", "ld", "prior"),
    "eval": ("ld", "prior", "finetune"),
}
PIPELINE_ORDER = "pretrain -> ld -> prior -> finetune"


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> Path:
    """Write ``checkpoint`` with ``torch.save``.

    Raises:
        OSError: If the file cannot be written.
    """
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_suffix(target.suffix + ".tmp")
        torch.save(asdict(checkpoint), tmp)
        tmp.replace(target)
    except OSError as e:
        raise OSError(f"Failed to write checkpoint {target}: {e}") from e
    logger.debug("Saved %s checkpoint (epoch %d) to %s", checkpoint.stage, checkpoint.epoch, target)
    return target


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        ConfigurationError: If the file is not a checkpoint of a known stage.
    """
    source = Path(path)
    if not source.is_file():
        raise FileNotFoundError(f"Checkpoint not found: {source}")
    try:
        payload = torch.load(source, map_location="cpu", weights_only=True)
    except OSError as e:
        raise OSError(f"Failed to read checkpoint {source}: {e}") from e
    except Exception as e:  # noqa: BLE001
        raise ConfigurationError(f"Not a checkpoint file: {source}: {e}") from e
    names = {f.name for f in fields(Checkpoint)}
    if not isinstance(payload, dict) or not {"stage", "parameters"} <= payload.keys():
        raise ConfigurationError(f"Not a checkpoint file: {source}")
    checkpoint = Checkpoint(**{k: v for k, v in payload.items() if k in names})
    if checkpoint.stage not in CHECKPOINT_STAGES:
        raise ConfigurationError(f"Unknown checkpoint stage: {checkpoint.stage}")
    return checkpoint


def require_stage(checkpoint: Checkpoint, command: str) -> None:
    """Check that ``checkpoint`` may feed ``command``.

    Raises:
        ConfigurationError: Naming the expected pipeline order.
    """
    allowed = STAGE_INPUTS[command]
    if checkpoint.stage not in allowed:
        raise ConfigurationError(
            f"{command} needs a checkpoint from {' or '.join(allowed)}, got "
            f"{checkpoint.stage} (pipeline order: {PIPELINE_ORDER})"
        )
