"""Command-line entry point: ``python -m src.main <command> ...``."""

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional, Sequence

from src.errors import ConfigurationError, DivergenceError, NonFiniteError
from src.models.records import Checkpoint, RunManifest
from src.models.run_config import RunConfig, load_run_config
from src.models.samples import REFERENCE_KINDS
from src.services.checkpoint import load_checkpoint, require_stage
from src.services.datasets import list_structures, load_image_dataset
from src.services.deleter import Deleter
from src.services.evaluation import evaluate_checkpoint, write_overlays, write_report
from src.services.finetune import run_finetune
from src.services.hasher import Hasher
from src.services.references import (
    STROKE_STRUCTURE,
    build_reference_set,
    load_reference_masks,
    normalize_kind,
    write_reference_set,
)
from src.services.scenes import generate_synthetic_dataset, write_dataset
from src.services.trainer import (
    run_local_discrimination,
    run_patch_pretrain,
    run_prior_guided,
)

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
BACKGROUND = "background"
EXIT_OK, EXIT_USER_ERROR, EXIT_RUNTIME_ERROR = 0, 1, 2
PACKAGE_ROOT = Path(__file__).resolve().parent
CLI_KINDS: tuple[str, ...] = ("real", "similar", "simulated")


def _log_progress(message: str, current: int, total: int) -> None:
    logger.debug("%s: %d/%d", message, current, total)


def _structures(value: Optional[str]) -> Optional[list[str]]:
    if value is None:
        return None
    names = [name.strip() for name in value.split(",") if name.strip()]
    if not names:
        raise ConfigurationError("--structures must name at least one structure")
    return names


class RunContext:
    """Validated config plus output directory and provenance of one command."""

    def __init__(self, args: argparse.Namespace) -> None:
        self.args = args
        self.config_path: Optional[str] = getattr(args, "config", None)
        self.config: RunConfig = load_run_config(self.config_path)
        if getattr(args, "seed", None) is not None:
            self.config = _with_seed(self.config, args.seed)
        self.hasher = Hasher()
        self.config_hash = self.hasher.hash_config(self.config.to_dict())

    def prepare_output(self) -> Path:
        """Empty output directory with the run manifest written into it."""
        out = Deleter().prepare_output(self.args.out, force=self.args.force)
        manifest = RunManifest(
            command=self.args.command,
            config_path=self.config_path,
            config_hash=self.config_hash,
            seed=self.config.seed,
            output_dir=str(out),
            code_hash=self.hasher.hash_tree(PACKAGE_ROOT),
            created_at=datetime.now(timezone.utc).isoformat(),
        )
        try:
            (out / MANIFEST_NAME).write_text(
                json.dumps(asdict(manifest), indent=2), encoding="utf-8"
            )
        except OSError as e:
            raise OSError(f"Failed to write manifest {out}: {e}") from e
        return out


def _with_seed(config: RunConfig, seed: int) -> RunConfig:
    stages = {name: replace(stage, seed=seed) for name, stage in config.stages.items()}
    return replace(
        config,
        seed=seed,
        stages=stages,
        synthetic=replace(config.synthetic, seed=seed),
        finetune=replace(config.finetune, seed=seed),
    )


def _load_init(
    args: argparse.Namespace, command: str, required: bool = True
) -> Optional[Checkpoint]:
    if args.init is None:
        if required:
            raise ConfigurationError(
                f"{args.command} requires --init with a checkpoint of the previous "
                "stage (pipeline order: pretrain -> ld -> prior -> finetune)"
            )
        return None
    checkpoint = load_checkpoint(args.init)
    require_stage(checkpoint, command)
    return checkpoint


def cmd_synth_data(args: argparse.Namespace) -> None:
    """Generate a synthetic scene dataset with ground-truth masks."""
    context = RunContext(args)
    if args.count < 1:
        raise ConfigurationError("--count must be positive")
    out = context.prepare_output()
    dataset = generate_synthetic_dataset(context.config.synthetic, args.count, _log_progress)
    write_dataset(dataset, out)


def cmd_references(args: argparse.Namespace) -> None:
    """Build reference masks (real, similar-structure or simulated) from a dataset."""
    context = RunContext(args)
    kind = normalize_kind(args.kind)
    structures = _structures(args.structures) or list(context.config.prior.structure_names)
    needed = structures if kind == "real" else sorted({*structures, STROKE_STRUCTURE})
    dataset = load_image_dataset(args.data, context.config.image_size, needed)
    synthetic = context.config.synthetic
    out = context.prepare_output()
    references = build_reference_set(
        kind,
        dataset,
        structures,
        context.config.references,
        args.count or len(dataset),
        seed=context.config.seed,
        offset_range=synthetic.blob_offset if kind == "simulated" else None,
    )
    write_reference_set(references, out)


def cmd_pretrain(args: argparse.Namespace) -> None:
    """Stage 1: patch discrimination pretraining."""
    context = RunContext(args)
    init = None
    if args.init is not None:
        init = load_checkpoint(args.init)
    dataset = load_image_dataset(args.data, context.config.image_size, [])
    out = context.prepare_output()
    run_patch_pretrain(
        context.config, dataset, out, init, _log_progress, context.config_hash
    )


def cmd_train_ld(args: argparse.Namespace) -> None:
    """Stage 2: local discrimination from a pretrained backbone."""
    context = RunContext(args)
    init = _load_init(args, "ld")
    dataset = load_image_dataset(args.data, context.config.image_size, [])
    out = context.prepare_output()
    run_local_discrimination(
        context.config, dataset, init, out, _log_progress, context.config_hash
    )


def cmd_train_prior(args: argparse.Namespace) -> None:
    """Stage 3: prior-guided adversarial clustering."""
    context = RunContext(args)
    prior = context.config.prior
    init = _load_init(args, "prior")
    reference_dir = args.references or prior.reference_dir
    if reference_dir is None:
        raise ConfigurationError("train-prior needs --references or [prior] reference_dir")
    references = load_reference_masks(
        reference_dir,
        list(prior.structure_names),
        context.config.image_size,
        prior.reference_kind,
    )
    dataset = load_image_dataset(args.data, context.config.image_size, [])
    out = context.prepare_output()
    run_prior_guided(
        context.config, dataset, references, init, out, _log_progress, context.config_hash
    )


def cmd_finetune(args: argparse.Namespace) -> None:
    """Downstream transfer on labeled data."""
    context = RunContext(args)
    init = _load_init(args, "finetune", required=not args.random_init)
    if init is not None and args.random_init:
        raise ConfigurationError("--init and --random-init are mutually exclusive")
    structure = context.config.finetune.structure
    dataset = load_image_dataset(args.data, context.config.image_size, [structure])
    out = context.prepare_output()
    result = run_finetune(
        context.config, dataset, init, out, _log_progress, context.config_hash
    )
    logger.info("Test DSC: %.4f", result.test_dsc)


def cmd_eval(args: argparse.Namespace) -> None:
    """Score a checkpoint against dataset masks; write report and overlays."""
    context = RunContext(args)
    checkpoint = load_checkpoint(args.checkpoint)
    require_stage(checkpoint, "eval")
    structures = _structures(args.structures)
    if structures is None:
        if checkpoint.stage == "finetune":
            structures = [context.config.finetune.structure]
        else:
            structures = [s for s in list_structures(args.data) if s != BACKGROUND]
    dataset = load_image_dataset(args.data, context.config.image_size, structures)
    out = context.prepare_output()
    report, predicted = evaluate_checkpoint(checkpoint, dataset, structures, args.threshold)
    write_report(report, out)
    write_overlays(dataset.images, predicted, out, dataset.file_names)
    logger.info("Evaluation of %s checkpoint:\n%s", checkpoint.stage, report.to_table())


COMMANDS: dict[str, Callable[[argparse.Namespace], None]] = {
    "synth-data": cmd_synth_data,
    "references": cmd_references,
    "pretrain": cmd_pretrain,
    "train-ld": cmd_train_ld,
    "train-prior": cmd_train_prior,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per pipeline step."""
    parser = argparse.ArgumentParser(
        prog="localdisc",
        description="Unsupervised local discrimination for medical image segmentation.",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", "--spec", dest="config", help="INI run configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--force", action="store_true", help="trash existing outputs")
        return p

    p = command("synth-data", "generate a synthetic dataset")
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--seed", type=int)

    p = command("references", "build reference masks for prior guidance")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=CLI_KINDS + tuple(REFERENCE_KINDS), default="simulated")
    p.add_argument("--structures", help="comma-separated structure names")
    p.add_argument("--count", type=int, help="number of masks (default: one per image)")
    p.add_argument("--seed", type=int)

    for name, help_text in (
        ("pretrain", "stage 1: patch discrimination"),
        ("train-ld", "stage 2: local discrimination"),
        ("train-prior", "stage 3: prior-guided clustering"),
        ("finetune", "downstream transfer"),
    ):
        p = command(name, help_text)
        p.add_argument("--data", required=True)
        p.add_argument("--init", help="checkpoint of the previous stage")
        p.add_argument("--seed", type=int)
        if name == "train-prior":
            p.add_argument("--references", help="reference mask directory")
        if name == "finetune":
            p.add_argument("--random-init", action="store_true")

    p = command("eval", "evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--structures", help="comma-separated structure names")
    p.add_argument("--threshold", type=float, default=0.5)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; returns the process exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s - %(levelname)s - %(message)s",
    )
    try:
        COMMANDS[args.command](args)
    except DivergenceError as e:
        logger.error("%s (diagnostic checkpoint: %s)", e, e.checkpoint_path)
        return EXIT_RUNTIME_ERROR
    except (ConfigurationError, ValueError, FileNotFoundError, FileExistsError) as e:
        logger.error("%s", e)
        return EXIT_USER_ERROR
    except (RuntimeError, OSError, NonFiniteError) as e:
        logger.error("%s", e)
        return EXIT_RUNTIME_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
