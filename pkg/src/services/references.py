"""Reference masks for prior guidance: simulated, similar-structure and real."""

import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch
from PIL import Image
from scipy import ndimage

from src.errors import ConfigurationError
from src.models.data_config import EllipsePrior
from src.models.run_config import ReferenceConfig
from src.models.samples import ImageDataset, ReferenceMaskSet
from src.services.scenes import mask_to_png, rasterize_ellipse

logger = logging.getLogger(__name__)

ELLIPSE_STRUCTURES: tuple[str, ...] = ("disk", "blob")
STROKE_STRUCTURE = "strokes"
MASK_SUFFIXES: tuple[str, ...] = (".png", ".bmp", ".gif", ".tif", ".tiff")
KIND_ALIASES = {"similar": "similar_structure"}


def generate_ellipse_reference(
    anchor: tuple[float, float],
    structure: str,
    prior: EllipsePrior,
    image_size: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Filled ellipse at a jittered anchor.

    Args:
        anchor: Approximate ``(row, col)`` centre of the structure.
        structure: Elliptical structure name (``disk`` or ``blob``).
        prior: Axes and jitter ranges.
        image_size: Side of the square mask.
        rng: Source of the jitter.

    Returns:
        Uint8 mask ``(image_size, image_size)`` with values in {0, 1}.

    Raises:
        ConfigurationError: If ``structure`` is not elliptical.
        ValueError: If the anchor lies outside the image.
    """
    if structure not in ELLIPSE_STRUCTURES:
        raise ConfigurationError(f"no ellipse prior for structure: {structure}")
    row, col = anchor
    if not (0 <= row < image_size and 0 <= col < image_size):
        raise ValueError(f"anchor {anchor} lies outside the {image_size}px image")
    jitter = prior.center_jitter
    center = (row + rng.uniform(-jitter, jitter), col + rng.uniform(-jitter, jitter))
    axes = (
        prior.axes[0] * (1 + rng.uniform(-prior.axis_jitter, prior.axis_jitter)),
        prior.axes[1] * (1 + rng.uniform(-prior.axis_jitter, prior.axis_jitter)),
    )
    angle = rng.uniform(-prior.angle_jitter, prior.angle_jitter)
    return rasterize_ellipse(center, axes, angle, image_size).astype(np.uint8)


def locate_anchor(
    vessel_mask: np.ndarray,
    structure: str,
    window: Optional[int] = None,
    offset_range: Optional[tuple[float, float]] = None,
) -> tuple[float, float]:
    """Estimate a landmark centre from a stroke (vessel) mask.

    The disk sits where strokes are densest. The blob is the least dense
    point inside an annulus ``offset_range`` around the disk.

    Args:
        vessel_mask: Binary ``(H, W)`` stroke mask.
        structure: ``disk`` or ``blob``.
        window: Side of the density window; defaults to a quarter of the image.
        offset_range: Blob distance range from the disk; defaults to
            ``(0.3, 0.45)`` of the image side.

    Returns:
        ``(row, col)`` anchor.
    """
    if structure not in ELLIPSE_STRUCTURES:
        raise ConfigurationError(f"no anchor rule for structure: {structure}")
    mask = np.asarray(vessel_mask, dtype=np.float64)
    size = mask.shape[0]
    density = ndimage.uniform_filter(mask, size=window or max(3, size // 4), mode="constant")
    disk = np.unravel_index(int(np.argmax(density)), density.shape)
    if structure == "disk":
        return float(disk[0]), float(disk[1])

    low, high = offset_range or (0.3 * size, 0.45 * size)
    rows, cols = np.mgrid[0 : mask.shape[0], 0 : mask.shape[1]]
    distance = np.hypot(rows - disk[0], cols - disk[1])
    candidates = (distance >= low) & (distance <= high)
    if not candidates.any():
        raise ValueError("no blob candidates inside the image for the offset range")
    masked = np.where(candidates, density, np.inf)
    blob = np.unravel_index(int(np.argmin(masked)), masked.shape)
    return float(blob[0]), float(blob[1])


def generate_similar_structure_reference(
    stroke_mask: np.ndarray, thickness: int = 1
) -> np.ndarray:
    """Thicken a stroke mask, imitating annotations from another modality."""
    if thickness < 1:
        raise ConfigurationError("thickness must be at least 1")
    dilated = ndimage.binary_dilation(np.asarray(stroke_mask, dtype=bool), iterations=thickness)
    return dilated.astype(np.uint8)


def normalize_kind(kind: str) -> str:
    """Map CLI spellings to reference source kinds."""
    return KIND_ALIASES.get(kind, kind)


def build_reference_set(
    kind: str,
    dataset: ImageDataset,
    structure_names: list[str],
    config: ReferenceConfig,
    count: int,
    seed: int = 0,
    offset_range: Optional[tuple[float, float]] = None,
) -> ReferenceMaskSet:
    """Build ``count`` reference masks of one source kind from a dataset.

    ``real`` copies ground-truth masks, ``similar_structure`` dilates stroke
    masks and ``simulated`` places prior ellipses at anchors found on the
    stroke masks. Images are used cyclically when ``count`` exceeds the
    dataset size.

    Raises:
        ConfigurationError: If a structure has no rule for ``kind``.
        ValueError: If the dataset lacks the masks the kind needs.
    """
    kind = normalize_kind(kind)
    if count < 1:
        raise ValueError("count must be positive")
    size = int(dataset.images.shape[-1])
    rng = np.random.default_rng(seed)
    priors = {"disk": config.disk, "blob": config.blob}
    masks = np.zeros((count, len(structure_names), size, size), dtype=np.uint8)
    file_names = []
    for k in range(count):
        index = k % len(dataset)
        file_names.append(dataset.file_names[index])
        for channel, structure in enumerate(structure_names):
            if kind == "real":
                masks[k, channel] = dataset.mask(structure)[index].numpy()
            elif kind == "similar_structure":
                if structure != STROKE_STRUCTURE:
                    raise ConfigurationError(
                        f"similar-structure references exist only for {STROKE_STRUCTURE}"
                    )
                masks[k, channel] = generate_similar_structure_reference(
                    dataset.mask(structure)[index].numpy(), config.similar_thickness
                )
            elif kind == "simulated":
                vessels = dataset.mask(STROKE_STRUCTURE)[index].numpy()
                anchor = locate_anchor(vessels, structure, offset_range=offset_range)
                masks[k, channel] = generate_ellipse_reference(
                    anchor, structure, priors.get(structure, config.disk), size, rng
                )
            else:
                raise ConfigurationError(f"unknown reference kind: {kind}")
    return ReferenceMaskSet(
        masks=torch.from_numpy(masks).float(),
        source_kind=kind,  # type: ignore[arg-type]
        structure_names=list(structure_names),
        file_names=file_names,
    )


def write_reference_set(references: ReferenceMaskSet, out_dir: Union[str, Path]) -> Path:
    """Write masks as ``<out_dir>/<structure>/<name>.png`` with foreground 255."""
    root = Path(out_dir)
    names = references.file_names or [f"{i:04d}.png" for i in range(len(references))]
    # cyclic reuse of a source image gets a counter suffix
    unique = [
        name if names.count(name) == 1 else f"{Path(name).stem}_{i:04d}.png"
        for i, name in enumerate(names)
    ]
    try:
        for channel, structure in enumerate(references.structure_names):
            directory = root / structure
            directory.mkdir(parents=True, exist_ok=True)
            for index, name in enumerate(unique):
                mask = references.masks[index, channel].to(torch.uint8).numpy()
                mask_to_png(mask).save(directory / name)
    except OSError as e:
        raise OSError(f"Failed to write references {root}: {e}") from e
    logger.info("Wrote %d %s reference masks to %s", len(references), references.source_kind, root)
    return root


def _read_mask(path: Path, size: Optional[int]) -> np.ndarray:
    try:
        with Image.open(path) as image:
            gray = image.convert("L")
            if size is not None and gray.size != (size, size):
                gray = gray.resize((size, size), Image.Resampling.NEAREST)
            values = np.asarray(gray, dtype=np.float64) / 255.0
    except OSError as e:
        raise OSError(f"Failed to read mask {path}: {e}") from e
    if not np.isin(values, (0.0, 1.0)).all():
        logger.warning("Non-binary mask %s thresholded at 0.5", path)
    return (values > 0.5).astype(np.uint8)


def load_reference_masks(
    directory: Union[str, Path],
    structure_names: list[str],
    size: Optional[int] = None,
    source_kind: str = "real",
) -> ReferenceMaskSet:
    """Load binary masks from ``<directory>/<structure>/*``.

    Files are matched by name across structures; only names present for
    every structure are used. Masks are resized with nearest neighbour and
    binarized at 0.5.

    Args:
        directory: Root of the per-structure mask directories.
        structure_names: Channel order of the result.
        size: Training resolution; ``None`` keeps the file size.
        source_kind: Recorded source kind.

    Returns:
        ReferenceMaskSet with one channel per structure.

    Raises:
        FileNotFoundError: If a structure directory is missing.
        ValueError: If no mask files are found.
    """
    root = Path(directory)
    per_structure = []
    for structure in structure_names:
        structure_dir = root / structure
        if not structure_dir.is_dir():
            raise FileNotFoundError(f"Reference directory not found: {structure_dir}")
        per_structure.append(
            {p.name for p in structure_dir.iterdir() if p.suffix.lower() in MASK_SUFFIXES}
        )
    names = sorted(set.intersection(*per_structure)) if per_structure else []
    if not names:
        raise ValueError(f"No reference masks found in {root}")

    stacked = []
    for name in names:
        channels = [_read_mask(root / s / name, size) for s in structure_names]
        if len({c.shape for c in channels}) != 1:
            raise ValueError(f"Reference masks for {name} differ in size")
        stacked.append(np.stack(channels))
    logger.info("Loaded %d reference masks from %s", len(names), root)
    return ReferenceMaskSet(
        masks=torch.from_numpy(np.stack(stacked)).float(),
        source_kind=normalize_kind(source_kind),  # type: ignore[arg-type]
        structure_names=list(structure_names),
        file_names=names,
    )


def mean_reference(references: ReferenceMaskSet) -> torch.Tensor:
    """Per-pixel mean of each reference channel, ``(K, H, W)``."""
    return references.masks.float().mean(dim=0)

