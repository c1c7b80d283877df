"""Data pipeline configuration data models."""

from dataclasses import dataclass, field

from src.errors import ConfigurationError

SCENE_STRUCTURES: tuple[str, ...] = ("background", "disk", "strokes", "blob")
FOREGROUND_STRUCTURES: tuple[str, ...] = ("disk", "strokes", "blob")
MIN_STRUCTURE_FRACTION = 0.01


def _check_range(name: str, bounds: tuple[float, float], low: float = 0.0) -> None:
    if len(bounds) != 2 or bounds[0] > bounds[1] or bounds[0] < low:
        raise ConfigurationError(f"{name} must be an ordered pair >= {low}")


@dataclass
class AugmentConfig:
    """Parameters of the paired-view augmentation.

    Attributes:
        output_size: Side of the augmented views.
        crop: Enable random resized crop.
        crop_scale: Area fraction range of the crop.
        crop_ratio: Aspect ratio range of the crop.
        grayscale_p: Probability of grayscale conversion.
        brightness: Brightness jitter amplitude.
        contrast: Contrast jitter amplitude.
        saturation: Saturation jitter amplitude.
        hue: Hue jitter amplitude (at most 0.5).
        flip_p: Probability of a horizontal flip.
        rotate90: Enable random multiples of 90 degree rotation.
    """

    output_size: int = 64
    crop: bool = True
    crop_scale: tuple[float, float] = (0.6, 1.0)
    crop_ratio: tuple[float, float] = (3.0 / 4.0, 4.0 / 3.0)
    grayscale_p: float = 0.2
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.1
    flip_p: float = 0.5
    rotate90: bool = True

    def __post_init__(self) -> None:
        """Validate configuration values after initialization."""
        self.crop_scale = tuple(self.crop_scale)  # type: ignore[assignment]
        self.crop_ratio = tuple(self.crop_ratio)  # type: ignore[assignment]
        if self.output_size < 1:
            raise ConfigurationError("output_size must be positive")
        _check_range("crop_scale", self.crop_scale)
        _check_range("crop_ratio", self.crop_ratio)
        if self.crop_scale[1] > 1.0 or self.crop_scale[0] <= 0.0:
            raise ConfigurationError("crop_scale must lie in (0, 1]")
        for name in ("grayscale_p", "flip_p"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must be a probability")
        for name in ("brightness", "contrast", "saturation"):
            if getattr(self, name) < 0.0:
                raise ConfigurationError(f"{name} must be nonnegative")
        if not 0.0 <= self.hue <= 0.5:
            raise ConfigurationError("hue must be between 0 and 0.5")

    @classmethod
    def identity(cls, output_size: int = 64) -> "AugmentConfig":
        """Configuration whose views equal the input image."""
        return cls(
            output_size=output_size,
            crop=False,
            grayscale_p=0.0,
            brightness=0.0,
            contrast=0.0,
            saturation=0.0,
            hue=0.0,
            flip_p=0.0,
            rotate90=False,
        )


@dataclass
class SyntheticSceneSpec:
    """Desk-scale stand-in for fundus-like anatomy.

    Each scene has a textured background, a bright elliptical disk, dark
    curvilinear strokes radiating from the disk centre and a small dark blob
    at a fixed-range distance from the disk.

    Attributes:
        image_size: Side of the square images.
        disk_radius: Range of the disk semi-axes in pixels.
        stroke_count: Inclusive range of stroke counts.
        stroke_width: Stroke width in pixels.
        blob_radius: Range of the blob radius in pixels.
        blob_offset: Range of the blob centre distance from the disk centre.
        texture_sigma: Smoothing of the background texture noise.
        noise_std: Additive pixel noise.
        seed: Global seed; image ``k`` uses ``seed XOR k``.
    """

    image_size: int = 64
    disk_radius: tuple[float, float] = (7.0, 10.0)
    stroke_count: tuple[int, int] = (4, 6)
    stroke_width: int = 2
    blob_radius: tuple[float, float] = (4.0, 6.0)
    blob_offset: tuple[float, float] = (20.0, 28.0)
    texture_sigma: float = 3.0
    noise_std: float = 0.02
    background_rgb: tuple[float, float, float] = (0.75, 0.35, 0.2)
    disk_rgb: tuple[float, float, float] = (0.98, 0.9, 0.6)
    stroke_rgb: tuple[float, float, float] = (0.45, 0.1, 0.08)
    blob_rgb: tuple[float, float, float] = (0.35, 0.15, 0.1)
    seed: int = 0
    structures: tuple[str, ...] = field(default=SCENE_STRUCTURES, init=False)

    def __post_init__(self) -> None:
        """Validate configuration values after initialization."""
        self.disk_radius = tuple(self.disk_radius)  # type: ignore[assignment]
        self.stroke_count = tuple(self.stroke_count)  # type: ignore[assignment]
        self.blob_radius = tuple(self.blob_radius)  # type: ignore[assignment]
        self.blob_offset = tuple(self.blob_offset)  # type: ignore[assignment]
        if self.image_size < 32:
            raise ConfigurationError("image_size must be at least 32")
        _check_range("disk_radius", self.disk_radius, low=1.0)
        _check_range("stroke_count", self.stroke_count, low=1)
        _check_range("blob_radius", self.blob_radius, low=1.0)
        _check_range("blob_offset", self.blob_offset)
        if self.stroke_width < 1:
            raise ConfigurationError("stroke_width must be positive")
        min_area = MIN_STRUCTURE_FRACTION * self.image_size**2
        if 3.14159 * self.blob_radius[0] ** 2 < min_area:
            raise ConfigurationError("blob_radius too small for the 1% area floor")
        if self.blob_offset[0] < self.disk_radius[1] + self.blob_radius[1]:
            raise ConfigurationError("blob_offset must keep the blob off the disk")
        if self.disk_radius[1] + self.blob_offset[1] + self.blob_radius[1] > (
            self.image_size
        ):
            raise ConfigurationError("disk and blob do not fit in the image")


@dataclass
class EllipsePrior:
    """Geometry prior of a simulated elliptical reference mask.

    Attributes:
        axes: Semi-axes ``(a, b)`` in pixels.
        axis_jitter: Relative uniform jitter applied to each semi-axis.
        angle_jitter: Uniform orientation jitter in degrees.
        center_jitter: Uniform centre jitter in pixels.
    """

    axes: tuple[float, float] = (8.5, 8.5)
    axis_jitter: float = 0.15
    angle_jitter: float = 90.0
    center_jitter: float = 1.5

    def __post_init__(self) -> None:
        """Validate configuration values after initialization."""
        self.axes = tuple(self.axes)  # type: ignore[assignment]
        if len(self.axes) != 2 or min(self.axes) <= 0:
            raise ConfigurationError("axes must be two positive semi-axes")
        if not 0.0 <= self.axis_jitter < 1.0:
            raise ConfigurationError("axis_jitter must lie in [0, 1)")
        if self.angle_jitter < 0 or self.center_jitter < 0:
            raise ConfigurationError("jitter values must be nonnegative")

    @classmethod
    def fixed(cls, axes: tuple[float, float]) -> "EllipsePrior":
        """Prior without any jitter."""
        return cls(axes=axes, axis_jitter=0.0, angle_jitter=0.0, center_jitter=0.0)
