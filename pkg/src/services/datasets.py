"""Reading image datasets laid out as ``images/*.png`` + ``masks/<structure>/*.png``."""

import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch
from PIL import Image

from src.models.samples import ImageDataset
from src.services.references import MASK_SUFFIXES, load_reference_masks
from src.services.scenes import IMAGE_DIR, MASK_DIR

logger = logging.getLogger(__name__)


def _read_image(path: Path, size: Optional[int]) -> np.ndarray:
    """RGB float image ``(3, H, W)``; grayscale files are replicated."""
    try:
        with Image.open(path) as image:
            rgb = image.convert("RGB")
            if size is not None and rgb.size != (size, size):
                rgb = rgb.resize((size, size), Image.Resampling.BILINEAR)
            array = np.asarray(rgb, dtype=np.float32) / 255.0
    except OSError as e:
        raise OSError(f"Failed to read image {path}: {e}") from e
    return array.transpose(2, 0, 1)


def list_structures(root: Union[str, Path]) -> list[str]:
    """Structure names with a mask directory under ``root``."""
    mask_root = Path(root) / MASK_DIR
    if not mask_root.is_dir():
        return []
    return sorted(p.name for p in mask_root.iterdir() if p.is_dir())


def load_image_dataset(
    root: Union[str, Path],
    size: Optional[int] = None,
    structures: Optional[list[str]] = None,
) -> ImageDataset:
    """Load a dataset directory.

    Args:
        root: Directory holding ``images/`` and optionally ``masks/``.
        size: Training resolution; ``None`` keeps the file size.
        structures: Mask structures to load; ``None`` loads every mask
            directory present, ``[]`` loads images only.

    Returns:
        ImageDataset with masks matched to images by file name.

    Raises:
        FileNotFoundError: If ``images/`` or a requested mask directory is missing.
        ValueError: If there are no images or a mask file is missing.
    """
    base = Path(root)
    image_dir = base / IMAGE_DIR
    if not image_dir.is_dir():
        raise FileNotFoundError(f"Image directory not found: {image_dir}")
    names = sorted(p.name for p in image_dir.iterdir() if p.suffix.lower() in MASK_SUFFIXES)
    if not names:
        raise ValueError(f"No images found in {image_dir}")
    images = np.stack([_read_image(image_dir / name, size) for name in names])
    height, width = images.shape[-2:]

    names_to_load = list_structures(base) if structures is None else list(structures)
    if names_to_load:
        references = load_reference_masks(base / MASK_DIR, names_to_load, size)
        by_name = dict(zip(references.file_names, references.masks))
        missing = [name for name in names if name not in by_name]
        if missing:
            raise ValueError(f"Masks missing for {len(missing)} images, e.g. {missing[0]}")
        masks = torch.stack([by_name[name] for name in names]).to(torch.uint8)
    else:
        masks = torch.zeros((len(names), 0, height, width), dtype=torch.uint8)

    logger.info("Loaded %d images from %s (structures: %s)", len(names), base, names_to_load)
    return ImageDataset(
        images=torch.from_numpy(images),
        masks=masks,
        structure_names=names_to_load,
        file_names=names,
    )
