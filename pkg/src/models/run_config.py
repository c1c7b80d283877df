"""Sectioned run configuration and its INI loader."""

import configparser
import os
from collections.abc import Iterable
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional, Union

from src.errors import ConfigurationError
from src.models.data_config import AugmentConfig, EllipsePrior, SyntheticSceneSpec
from src.models.network_config import BackboneConfig
from src.models.training_config import (
    SUPPORTED_STAGES,
    FinetuneConfig,
    LossWeights,
    PriorSpec,
    StageConfig,
)

NUM_WORKERS_ENV = "LOCALDISC_NUM_WORKERS"
KNOWN_SECTIONS: tuple[str, ...] = (
    "run",
    "backbone",
    "augment",
    *SUPPORTED_STAGES,
    "finetune",
    "synthetic",
    "references",
)
PRIOR_SPEC_KEYS: tuple[str, ...] = tuple(f.name for f in fields(PriorSpec))
WEIGHT_KEYS: tuple[str, ...] = tuple(f.name for f in fields(LossWeights))


@dataclass
class ReferenceConfig:
    """How the ``references`` command builds prior masks.

    Attributes:
        disk: Ellipse prior placed at the disk anchor.
        blob: Ellipse prior placed at the blob anchor.
        similar_thickness: Dilation radius of similar-structure stroke masks.
    """

    disk: EllipsePrior = field(default_factory=lambda: EllipsePrior(axes=(8.5, 8.5)))
    blob: EllipsePrior = field(
        default_factory=lambda: EllipsePrior(axes=(5.0, 5.0), angle_jitter=0.0)
    )
    similar_thickness: int = 1

    def __post_init__(self) -> None:
        """Validate configuration values after initialization."""
        if self.similar_thickness < 1:
            raise ConfigurationError("similar_thickness must be at least 1")


@dataclass
class RunConfig:
    """Fully resolved configuration of a run."""

    seed: int = 0
    image_size: int = 64
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    stages: dict[str, StageConfig] = field(
        default_factory=lambda: {s: StageConfig.for_stage(s) for s in SUPPORTED_STAGES}
    )
    prior: PriorSpec = field(default_factory=PriorSpec)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    synthetic: SyntheticSceneSpec = field(default_factory=SyntheticSceneSpec)
    references: ReferenceConfig = field(default_factory=ReferenceConfig)

    def __post_init__(self) -> None:
        """Cross-section consistency checks."""
        if self.image_size % 32 != 0:
            raise ConfigurationError("image_size must be divisible by 32")
        self.prior.validate(self.backbone.cluster_count)

    def stage(self, name: str) -> StageConfig:
        """Stage config by name."""
        if name not in self.stages:
            raise ConfigurationError(f"unknown stage: {name}")
        return self.stages[name]

    def to_dict(self) -> dict[str, Any]:
        """Canonical dict used for hashing and manifests."""
        return asdict(self)


def _parse_value(raw: str, default: Any, key: str) -> Any:
    text = raw.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int) or (default is None and key.endswith("patience")):
            if text.lower() == "none":
                return None
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, (tuple, list)):
            items = [item.strip() for item in text.split(",") if item.strip()]
            sample = default[0] if default else ""
            converted = [_parse_value(item, sample, key) for item in items]
            return tuple(converted) if isinstance(default, tuple) else converted
        if default is None:
            return None if text.lower() == "none" else text
        return text
    except ValueError as e:
        raise ConfigurationError(f"invalid value for {key}: {raw!r}") from e


def _overrides(
    section_name: str, items: Iterable[tuple[str, str]], template: Any
) -> dict[str, Any]:
    """Convert raw keys to field values typed like ``template``'s defaults."""
    names = {f.name for f in fields(template) if f.init}
    values: dict[str, Any] = {}
    for key, raw in items:
        if key not in names:
            raise ConfigurationError(f"unknown key [{section_name}] {key}")
        values[key] = _parse_value(raw, getattr(template, key), key)
    return values


def _stage_from_section(
    name: str, items: dict[str, str], seed: int, workers: int
) -> StageConfig:
    base = StageConfig.for_stage(name, seed=seed, num_workers=workers)
    stage_items = [
        (k, v) for k, v in items.items() if k not in WEIGHT_KEYS + PRIOR_SPEC_KEYS
    ]
    weight_items = [(k, v) for k, v in items.items() if k in WEIGHT_KEYS]
    values = _overrides(name, stage_items, base)
    values.pop("stage", None)
    weights = LossWeights(**_overrides(name, weight_items, LossWeights()))
    return replace(base, **values, weights=weights)


def _prior_from(items: dict[str, str]) -> PriorSpec:
    """PriorSpec keys live in the ``[prior]`` section next to stage keys."""
    picked = [(k, v) for k, v in items.items() if k in PRIOR_SPEC_KEYS]
    return replace(PriorSpec(), **_overrides("prior", picked, PriorSpec()))


def _ellipse_from(values: dict[str, str], prefix: str, base: EllipsePrior) -> EllipsePrior:
    picked: dict[str, Any] = {}
    for f in fields(EllipsePrior):
        key = prefix + f.name
        if key in values:
            picked[f.name] = _parse_value(values.pop(key), getattr(base, f.name), key)
    return replace(base, **picked)


def _references_from(items: dict[str, str]) -> ReferenceConfig:
    values = dict(items)
    base = ReferenceConfig()
    thickness = _parse_value(
        values.pop("similar_thickness", str(base.similar_thickness)),
        base.similar_thickness,
        "similar_thickness",
    )
    config = ReferenceConfig(
        disk=_ellipse_from(values, "disk_", base.disk),
        blob=_ellipse_from(values, "blob_", base.blob),
        similar_thickness=thickness,
    )
    if values:
        raise ConfigurationError(
            f"unknown keys [references] {', '.join(sorted(values))}"
        )
    return config


def load_run_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Read a sectioned INI file into a validated RunConfig.

    Missing sections and keys keep their defaults. The environment variable
    ``LOCALDISC_NUM_WORKERS`` overrides every stage's worker count.

    Args:
        path: INI file; ``None`` gives the default configuration.

    Returns:
        Validated RunConfig.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        ConfigurationError: On unknown sections/keys or invalid values.
    """
    parser = configparser.ConfigParser()
    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise FileNotFoundError(f"Config not found: {config_path}")
        parser.read(config_path, encoding="utf-8")
    unknown = [s for s in parser.sections() if s not in KNOWN_SECTIONS]
    if unknown:
        raise ConfigurationError(f"unknown config sections: {', '.join(unknown)}")

    def items(name: str) -> dict[str, str]:
        return dict(parser[name].items()) if parser.has_section(name) else {}

    run_defaults: dict[str, int] = {"seed": 0, "image_size": 64, "num_workers": 0}
    run_values = dict(run_defaults)
    for key, raw in items("run").items():
        if key not in run_defaults:
            raise ConfigurationError(f"unknown key [run] {key}")
        run_values[key] = _parse_value(raw, run_defaults[key], key)
    seed, image_size = run_values["seed"], run_values["image_size"]
    workers = run_values["num_workers"]
    env_workers = os.environ.get(NUM_WORKERS_ENV)

    def build(name: str, template: Any) -> Any:
        return replace(template, **_overrides(name, items(name).items(), template))

    stages = {
        name: _stage_from_section(name, items(name), seed, workers)
        for name in SUPPORTED_STAGES
    }
    if env_workers is not None:
        env_value = _parse_value(env_workers, 0, NUM_WORKERS_ENV)
        stages = {k: replace(v, num_workers=env_value) for k, v in stages.items()}

    return RunConfig(
        seed=seed,
        image_size=image_size,
        backbone=build("backbone", BackboneConfig()),
        augment=build("augment", AugmentConfig(output_size=image_size)),
        stages=stages,
        prior=_prior_from(items("prior")),
        finetune=build("finetune", FinetuneConfig(seed=seed)),
        # default geometry only fits 64px scenes
        synthetic=SyntheticSceneSpec(
            **{
                "image_size": image_size,
                "seed": seed,
                **_overrides("synthetic", items("synthetic").items(), SyntheticSceneSpec()),
            }
        ),
        references=_references_from(items("references")),
    )
