"""Paired-view augmentation, mixup synthesis and the unlabeled view dataset."""

import math
from collections.abc import Sequence
from typing import Callable

import numpy as np
import torch
from torch.utils.data import Dataset
from torchvision.transforms.v2 import functional as TF

from src.models.data_config import AugmentConfig
from src.models.samples import MixupSample, SampleGroup
from src.services.core_math import derive_seed

CROP_ATTEMPTS = 10


def _uniform(generator: torch.Generator, low: float, high: float) -> float:
    return low + (high - low) * float(torch.rand(1, generator=generator))


def _sample_crop(
    height: int, width: int, config: AugmentConfig, generator: torch.Generator
) -> tuple[int, int, int, int]:
    """Random resized crop box ``(top, left, h, w)``, falling back to centre."""
    area = height * width
    log_ratio = (math.log(config.crop_ratio[0]), math.log(config.crop_ratio[1]))
    for _ in range(CROP_ATTEMPTS):
        target_area = area * _uniform(generator, *config.crop_scale)
        ratio = math.exp(_uniform(generator, *log_ratio))
        w = int(round(math.sqrt(target_area * ratio)))
        h = int(round(math.sqrt(target_area / ratio)))
        if 0 < w <= width and 0 < h <= height:
            top = int(torch.randint(0, height - h + 1, (1,), generator=generator))
            left = int(torch.randint(0, width - w + 1, (1,), generator=generator))
            return top, left, h, w
    side = min(height, width)
    return (height - side) // 2, (width - side) // 2, side, side


def _color_jitter(
    x: torch.Tensor, config: AugmentConfig, generator: torch.Generator
) -> torch.Tensor:
    ops: list[tuple[float, Callable[[torch.Tensor, float], torch.Tensor], bool]] = [
        (config.brightness, TF.adjust_brightness, False),
        (config.contrast, TF.adjust_contrast, False),
        (config.saturation, TF.adjust_saturation, False),
        (config.hue, TF.adjust_hue, True),
    ]
    for index in torch.randperm(len(ops), generator=generator).tolist():
        amplitude, op, centred = ops[index]
        if amplitude <= 0:
            continue
        if centred:
            factor = _uniform(generator, -amplitude, amplitude)
        else:
            factor = _uniform(generator, max(0.0, 1 - amplitude), 1 + amplitude)
        x = op(x, factor)
    return x


def augment_view(
    image: torch.Tensor, config: AugmentConfig, generator: torch.Generator
) -> torch.Tensor:
    """One random view: crop, colour jitter, grayscale, flip, 90 degree rotation."""
    height, width = image.shape[-2:]
    size = [config.output_size, config.output_size]
    x = image
    if config.crop:
        top, left, h, w = _sample_crop(height, width, config, generator)
        x = TF.resized_crop(x, top, left, h, w, size, antialias=True)
    elif (height, width) != tuple(size):
        x = TF.resize(x, size, antialias=True)
    x = _color_jitter(x, config, generator)
    if float(torch.rand(1, generator=generator)) < config.grayscale_p:
        x = TF.rgb_to_grayscale(x, num_output_channels=3)
    if float(torch.rand(1, generator=generator)) < config.flip_p:
        x = TF.horizontal_flip(x)
    if config.rotate90:
        k = int(torch.randint(0, 4, (1,), generator=generator))
        x = torch.rot90(x, k, dims=(-2, -1))
    return x.clamp(0.0, 1.0)


def augment_pair(
    image: torch.Tensor, seed: int, config: AugmentConfig, source_id: int = 0
) -> SampleGroup:
    """Two independent augmentations of ``image``, deterministic given ``seed``.

    Args:
        image: ``(3, H, W)`` tensor in [0, 1] (grayscale replicated).
        seed: Seed of both views.
        config: Augmentation parameters.
        source_id: Identifier of the source image.

    Returns:
        SampleGroup with ``view_a`` and ``view_b``.
    """
    if image.dim() != 3 or image.shape[0] != 3:
        raise ValueError("augment_pair expects a (3, H, W) image")
    generator = torch.Generator().manual_seed(seed)
    view_a = augment_view(image, config, generator)
    view_b = augment_view(image, config, generator)
    return SampleGroup(view_a=view_a, view_b=view_b, source_id=source_id)


def mix_images(x_a: torch.Tensor, x_b: torch.Tensor, lam: float) -> torch.Tensor:
    """Pixelwise convex combination ``lam * x_a + (1 - lam) * x_b``."""
    return lam * x_a + (1.0 - lam) * x_b


def make_mixup(
    groups: Sequence[SampleGroup], count: int, rng: np.random.Generator
) -> list[MixupSample]:
    """Mix ``count`` virtual samples from pairs of the groups' ``view_a``.

    Parents of each sample are distinct groups; ``lam ~ U(0, 1)`` with the
    endpoints excluded.

    Raises:
        ValueError: If fewer than 2 groups are given.
    """
    if len(groups) < 2:
        raise ValueError("make_mixup needs at least 2 groups")
    samples = []
    for _ in range(count):
        a, b = (int(i) for i in rng.choice(len(groups), size=2, replace=False))
        lam = float(rng.uniform(0.0, 1.0))
        while lam <= 0.0:
            lam = float(rng.uniform(0.0, 1.0))
        samples.append(
            MixupSample(
                image=mix_images(groups[a].view_a, groups[b].view_a, lam),
                lam=lam,
                parent_ids=(groups[a].source_id, groups[b].source_id),
                parent_indices=(a, b),
            )
        )
    return samples


class PairedViewDataset(Dataset):
    """Unlabeled images served as augmented view pairs.

    Sample ``index`` in epoch ``e`` uses ``derive_seed(seed, index, e)`` so
    results do not depend on worker count or scheduling.
    """

    def __init__(
        self,
        images: torch.Tensor,
        config: AugmentConfig,
        seed: int,
        indices: Sequence[int] | None = None,
    ) -> None:
        self.images = images
        self.config = config
        self.seed = seed
        self.indices = list(range(len(images))) if indices is None else list(indices)
        self.epoch = 0

    def __len__(self) -> int:
        return len(self.indices)

    def __getitem__(self, item: int) -> tuple[torch.Tensor, torch.Tensor, int]:
        index = self.indices[item]
        group = augment_pair(
            self.images[index],
            derive_seed(self.seed, index, self.epoch),
            self.config,
            source_id=index,
        )
        return group.view_a, group.view_b, index
