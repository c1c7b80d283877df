"""Servicesパッケージ"""

from .checkpoint import load_checkpoint, save_checkpoint
from .deleter import DeleteResult, Deleter
from .evaluation import evaluate_checkpoint, write_overlays, write_report
from .finetune import FinetuneResult, run_finetune
from .hasher import Hasher
from .trainer import (
    StageResult,
    run_local_discrimination,
    run_patch_pretrain,
    run_prior_guided,
)

__all__ = [
    "DeleteResult",
    "Deleter",
    "FinetuneResult",
    "Hasher",
    "StageResult",
    "evaluate_checkpoint",
    "load_checkpoint",
    "run_finetune",
    "run_local_discrimination",
    "run_patch_pretrain",
    "run_prior_guided",
    "save_checkpoint",
    "write_overlays",
    "write_report",
]
