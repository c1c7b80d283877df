"""Sample and reference-mask data models."""

from dataclasses import dataclass, field
from typing import Literal

import torch

ReferenceKind = Literal["real", "similar_structure", "simulated"]
REFERENCE_KINDS: tuple[str, ...] = ("real", "similar_structure", "simulated")


@dataclass
class SampleGroup:
    """Two augmentations of one source image."""

    view_a: torch.Tensor
    view_b: torch.Tensor
    source_id: int

    def __post_init__(self) -> None:
        """Ensure both views share one shape."""
        if self.view_a.shape != self.view_b.shape:
            raise ValueError("view_a and view_b must share shape")


@dataclass
class MixupSample:
    """Virtual sample ``lam * x_a + (1 - lam) * x_b`` of two groups' view_a.

    ``parent_indices`` index the groups of the batch the sample was mixed
    from; ``parent_ids`` are the corresponding source ids.
    """

    image: torch.Tensor
    lam: float
    parent_ids: tuple[int, int]
    parent_indices: tuple[int, int]

    def __post_init__(self) -> None:
        """Validate the mixing coefficient."""
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"lam must lie strictly inside (0, 1), got {self.lam}")


@dataclass
class ReferenceMaskSet:
    """Binary prior masks fed to the discriminator.

    Attributes:
        masks: Tensor ``(count, K, H, W)`` with entries in {0, 1}; channel k
            holds ``structure_names[k]``.
        source_kind: Where the masks come from.
        structure_names: Channel order of ``masks``.
        file_names: Source file per mask, when loaded from disk.
    """

    masks: torch.Tensor
    source_kind: ReferenceKind
    structure_names: list[str]
    file_names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        """Validate binary content and channel bookkeeping."""
        if self.masks.dim() != 4:
            raise ValueError("masks must have shape (count, K, H, W)")
        if self.masks.shape[1] != len(self.structure_names):
            raise ValueError("mask channels must match structure_names")
        if not bool(((self.masks == 0) | (self.masks == 1)).all()):
            raise ValueError("reference masks must be binary")
        if self.source_kind not in REFERENCE_KINDS:
            raise ValueError(f"unknown reference kind: {self.source_kind}")

    def __len__(self) -> int:
        return int(self.masks.shape[0])


@dataclass
class SceneLayout:
    """Geometry a synthetic scene was drawn from, in ``(row, col)`` pixels."""

    disk_center: tuple[float, float]
    disk_axes: tuple[float, float]
    disk_angle: float
    blob_center: tuple[float, float]
    blob_radius: float
    stroke_count: int


@dataclass
class ImageDataset:
    """Images with optional per-structure ground-truth masks.

    Attributes:
        images: Float tensor ``(n, 3, H, W)`` in [0, 1].
        masks: Uint8 tensor ``(n, K, H, W)`` in {0, 1}; ``K`` may be 0.
        structure_names: Channel order of ``masks``.
        file_names: Source file name per image.
        layouts: Scene geometry, only for generated scenes.
    """

    images: torch.Tensor
    masks: torch.Tensor
    structure_names: list[str]
    file_names: list[str] = field(default_factory=list)
    layouts: list[SceneLayout] = field(default_factory=list)

    def __post_init__(self) -> None:
        """Check that images and masks line up."""
        if self.images.dim() != 4 or self.images.shape[1] != 3:
            raise ValueError("images must have shape (n, 3, H, W)")
        if self.masks.shape[0] != self.images.shape[0]:
            raise ValueError("masks and images must have the same count")
        if self.masks.shape[1] != len(self.structure_names):
            raise ValueError("mask channels must match structure_names")
        if self.masks.shape[1] and self.masks.shape[2:] != self.images.shape[2:]:
            raise ValueError("masks and images must share spatial size")
        if not self.file_names:
            self.file_names = [f"{i:04d}.png" for i in range(len(self))]

    def __len__(self) -> int:
        return int(self.images.shape[0])

    def mask(self, structure: str) -> torch.Tensor:
        """Masks of one structure, shape ``(n, H, W)``."""
        if structure not in self.structure_names:
            raise ValueError(f"dataset has no masks for structure: {structure}")
        return self.masks[:, self.structure_names.index(structure)]

    def subset(self, indices: list[int]) -> "ImageDataset":
        """Dataset restricted to ``indices``, in that order."""
        index = torch.as_tensor(indices, dtype=torch.long)
        return ImageDataset(
            images=self.images[index],
            masks=self.masks[index],
            structure_names=list(self.structure_names),
            file_names=[self.file_names[i] for i in indices],
            layouts=[self.layouts[i] for i in indices] if self.layouts else [],
        )
