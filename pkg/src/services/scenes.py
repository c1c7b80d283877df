"""Synthetic fundus-like scenes with ground-truth structure masks."""

import logging
import math
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import torch
from PIL import Image, ImageDraw
from scipy import ndimage

from src.errors import ConfigurationError
from src.models.data_config import MIN_STRUCTURE_FRACTION, SyntheticSceneSpec
from src.models.samples import ImageDataset, SceneLayout
from src.services.core_math import derive_seed

logger = logging.getLogger(__name__)

MAX_SCENE_ATTEMPTS = 20
MAX_PLACEMENT_DRAWS = 1000
BEZIER_STEPS = 24
TEXTURE_CONTRAST = 0.15
IMAGE_DIR = "images"
MASK_DIR = "masks"

# Label priority: later entries overwrite earlier ones.
_LABELS = {"background": 0, "strokes": 2, "disk": 1, "blob": 3}


def rasterize_ellipse(
    center: tuple[float, float],
    axes: tuple[float, float],
    angle: float,
    size: int,
) -> np.ndarray:
    """Filled ellipse sampled at pixel centres.

    Args:
        center: ``(row, col)`` of the centre.
        axes: Semi-axes ``(a, b)``; ``a`` lies along ``angle``.
        angle: Orientation in degrees, counter-clockwise from the column axis.
        size: Side of the square output.

    Returns:
        Boolean array ``(size, size)``.
    """
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = rows - center[0], cols - center[1]
    theta = math.radians(angle)
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    return (u / axes[0]) ** 2 + (v / axes[1]) ** 2 <= 1.0


def _place_disk_and_blob(
    spec: SyntheticSceneSpec, rng: np.random.Generator
) -> tuple[tuple[float, float], tuple[float, float], float, float]:
    """Disk centre, blob centre, disk extent and blob radius that fit the image."""
    size = spec.image_size
    disk_axes = (
        float(rng.uniform(*spec.disk_radius)),
        float(rng.uniform(*spec.disk_radius)),
    )
    blob_radius = float(rng.uniform(*spec.blob_radius))
    offset = float(rng.uniform(*spec.blob_offset))
    disk_extent = max(disk_axes)
    for _ in range(MAX_PLACEMENT_DRAWS):
        phi = rng.uniform(0.0, 2.0 * math.pi)
        step = (offset * math.sin(phi), offset * math.cos(phi))
        bounds = []
        for delta in step:
            low = max(disk_extent, blob_radius - delta)
            high = min(size - 1 - disk_extent, size - 1 - blob_radius - delta)
            bounds.append((low, high))
        if all(low <= high for low, high in bounds):
            break
    else:
        raise ConfigurationError("disk and blob geometry does not fit the image")
    disk_center = (
        float(rng.uniform(*bounds[0])),
        float(rng.uniform(*bounds[1])),
    )
    blob_center = (disk_center[0] + step[0], disk_center[1] + step[1])
    return disk_center, blob_center, disk_axes, blob_radius


def _draw_strokes(
    spec: SyntheticSceneSpec,
    center: tuple[float, float],
    count: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Quadratic Bezier strokes radiating from ``center``."""
    size = spec.image_size
    canvas = Image.new("L", (size, size), 0)
    draw = ImageDraw.Draw(canvas)
    base = rng.uniform(0.0, 2.0 * math.pi)
    t = np.linspace(0.0, 1.0, BEZIER_STEPS)[:, None]
    for k in range(count):
        theta = base + 2.0 * math.pi * k / count + rng.uniform(-0.3, 0.3)
        length = rng.uniform(0.6, 1.2) * size
        direction = np.array([math.cos(theta), math.sin(theta)])
        normal = np.array([-direction[1], direction[0]])
        p0 = np.array([center[1], center[0]])
        p2 = p0 + length * direction
        p1 = p0 + 0.5 * length * direction + rng.uniform(-0.25, 0.25) * length * normal
        curve = (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t**2 * p2
        draw.line(
            [tuple(point) for point in curve.tolist()],
            fill=255,
            width=spec.stroke_width,
            joint="curve",
        )
    return np.asarray(canvas) > 0


def _render(
    spec: SyntheticSceneSpec,
    labels: np.ndarray,
    disk: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    size = spec.image_size
    texture = ndimage.gaussian_filter(rng.standard_normal((size, size)), spec.texture_sigma)
    texture /= max(float(texture.std()), 1e-8)
    shading = 1.0 + TEXTURE_CONTRAST * texture
    image = np.empty((3, size, size), dtype=np.float64)
    colors = {
        0: spec.background_rgb,
        1: spec.disk_rgb,
        2: spec.stroke_rgb,
        3: spec.blob_rgb,
    }
    for label, rgb in colors.items():
        region = labels == label
        for channel in range(3):
            image[channel][region] = rgb[channel]
    image *= shading[None]
    # soft rim around the disk
    halo = ndimage.gaussian_filter(disk.astype(np.float64), 1.5)
    image += 0.1 * halo[None]
    image += rng.normal(0.0, spec.noise_std, size=image.shape)
    return np.clip(image, 0.0, 1.0)


def generate_scene(
    spec: SyntheticSceneSpec, index: int
) -> tuple[np.ndarray, np.ndarray, SceneLayout]:
    """Render scene ``index`` of the dataset defined by ``spec``.

    Returns:
        ``(image, labels, layout)``: float image ``(3, S, S)``, integer label
        map ``(S, S)`` indexed like ``spec.structures`` and the geometry used.

    Raises:
        RuntimeError: If no draw satisfies the minimum structure area.
    """
    size = spec.image_size
    rng = np.random.default_rng(derive_seed(spec.seed, index))
    min_pixels = MIN_STRUCTURE_FRACTION * size * size
    for attempt in range(MAX_SCENE_ATTEMPTS):
        disk_center, blob_center, disk_axes, blob_radius = _place_disk_and_blob(spec, rng)
        disk_angle = float(rng.uniform(0.0, 180.0))
        count = int(rng.integers(spec.stroke_count[0], spec.stroke_count[1] + 1))
        strokes = _draw_strokes(spec, disk_center, count, rng)
        disk = rasterize_ellipse(disk_center, disk_axes, disk_angle, size)
        blob = rasterize_ellipse(blob_center, (blob_radius, blob_radius), 0.0, size)

        labels = np.zeros((size, size), dtype=np.int64)
        labels[strokes] = _LABELS["strokes"]
        labels[disk] = _LABELS["disk"]
        labels[blob] = _LABELS["blob"]
        areas = np.bincount(labels.ravel(), minlength=len(spec.structures))
        if (areas >= min_pixels).all():
            layout = SceneLayout(
                disk_center=disk_center,
                disk_axes=disk_axes,
                disk_angle=disk_angle,
                blob_center=blob_center,
                blob_radius=blob_radius,
                stroke_count=count,
            )
            return _render(spec, labels, disk, rng), labels, layout
        logger.debug("Scene %d attempt %d below area floor: %s", index, attempt, areas)
    raise RuntimeError(f"could not draw scene {index} within {MAX_SCENE_ATTEMPTS} attempts")


def generate_synthetic_dataset(
    spec: SyntheticSceneSpec,
    n_images: int,
    progress_callback: Optional[Callable[[str, int, int], None]] = None,
) -> ImageDataset:
    """Generate ``n_images`` scenes with one mask channel per structure.

    Masks partition every image; channel order is ``spec.structures``.
    """
    if n_images < 1:
        raise ValueError("n_images must be positive")
    images, masks, layouts = [], [], []
    structure_ids = np.arange(len(spec.structures))[:, None, None]
    for index in range(n_images):
        image, labels, layout = generate_scene(spec, index)
        images.append(image)
        masks.append(labels[None] == structure_ids)
        layouts.append(layout)
        if progress_callback:
            progress_callback("Generating scenes", index + 1, n_images)
    return ImageDataset(
        images=torch.from_numpy(np.stack(images)).float(),
        masks=torch.from_numpy(np.stack(masks).astype(np.uint8)),
        structure_names=list(spec.structures),
        file_names=[f"{i:04d}.png" for i in range(n_images)],
        layouts=layouts,
    )


def image_to_png(image: torch.Tensor) -> Image.Image:
    """``(3, H, W)`` float tensor in [0, 1] to an 8-bit RGB image."""
    array = (image.clamp(0, 1) * 255).round().to(torch.uint8).permute(1, 2, 0)
    return Image.fromarray(array.numpy())


def mask_to_png(mask: Union[torch.Tensor, np.ndarray]) -> Image.Image:
    """Binary mask to an 8-bit image with foreground 255."""
    array = np.asarray(mask, dtype=np.uint8) * 255
    return Image.fromarray(array)


def write_dataset(dataset: ImageDataset, out_dir: Union[str, Path]) -> Path:
    """Write ``images/*.png`` and ``masks/<structure>/*.png`` under ``out_dir``."""
    root = Path(out_dir)
    try:
        image_dir = root / IMAGE_DIR
        image_dir.mkdir(parents=True, exist_ok=True)
        for name in dataset.structure_names:
            (root / MASK_DIR / name).mkdir(parents=True, exist_ok=True)
        for index, file_name in enumerate(dataset.file_names):
            image_to_png(dataset.images[index]).save(image_dir / file_name)
            for channel, name in enumerate(dataset.structure_names):
                mask = dataset.masks[index, channel].numpy()
                mask_to_png(mask).save(root / MASK_DIR / name / file_name)
    except OSError as e:
        raise OSError(f"Failed to write dataset {root}: {e}") from e
    logger.info("Wrote %d images to %s", len(dataset), root)
    return root
