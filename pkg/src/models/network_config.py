"""Network configuration data models."""

from dataclasses import dataclass, field
from fractions import Fraction

from src.errors import ConfigurationError

# Constants for validation
MIN_EMBEDDING_DIM = 2
MIN_CLUSTER_COUNT = 2
DOWNSAMPLE_FACTOR = 32
VGG16_WIDTHS: tuple[tuple[int, ...], ...] = (
    (64, 64),
    (128, 128),
    (256, 256, 256),
    (512, 512, 512),
    (512, 512, 512),
)


@dataclass
class BackboneConfig:
    """Configuration of the U-Net backbone and its two heads.

    Attributes:
        input_channels: Image channels fed to the encoder.
        width_scale: Fraction of the VGG-16 channel widths (1/4 gives 16..128).
        decoder_blocks: Number of U-Net decoder blocks (one per encoder scale).
        embedding_dim: Dimension D of the per-pixel hypersphere embedding.
        cluster_count: Number M of clusters of the clustering head.
        batch_norm: Whether conv layers are followed by batch normalization.
    """

    input_channels: int = 3
    width_scale: float = 0.25
    decoder_blocks: int = 4
    embedding_dim: int = 32
    cluster_count: int = 8
    batch_norm: bool = True

    def __post_init__(self) -> None:
        """Validate configuration values after initialization."""
        if self.input_channels < 1:
            raise ConfigurationError("input_channels must be at least 1")
        if self.embedding_dim < MIN_EMBEDDING_DIM:
            raise ConfigurationError(
                f"embedding_dim must be at least {MIN_EMBEDDING_DIM}"
            )
        if self.cluster_count < MIN_CLUSTER_COUNT:
            raise ConfigurationError(
                f"cluster_count must be at least {MIN_CLUSTER_COUNT}"
            )
        if not 1 <= self.decoder_blocks <= len(VGG16_WIDTHS) - 1:
            raise ConfigurationError(
                f"decoder_blocks must be between 1 and {len(VGG16_WIDTHS) - 1}"
            )
        self._validate_width_scale(self.width_scale)

    @staticmethod
    def _validate_width_scale(value: float) -> None:
        """Validate that every scaled VGG-16 width is an integer >= 1."""
        scale = Fraction(value).limit_denominator(1024)
        for block in VGG16_WIDTHS:
            for width in block:
                scaled = width * scale
                if scaled.denominator != 1 or scaled < 1:
                    raise ConfigurationError(
                        f"width_scale {value} gives non-integer width for {width}"
                    )

    @property
    def encoder_widths(self) -> tuple[tuple[int, ...], ...]:
        """Scaled VGG-16 channel widths per encoder block."""
        scale = Fraction(self.width_scale).limit_denominator(1024)
        return tuple(
            tuple(int(width * scale) for width in block) for block in VGG16_WIDTHS
        )


@dataclass
class DiscriminatorConfig:
    """Configuration of the mask discriminator.

    Attributes:
        input_channels: Number of concatenated mask channels K.
        image_size: Spatial side of the masks; fixes the first FC width.
        conv_channels: Output channels of the 7 conv layers.
        fc_channels: Output widths of the 2 fully connected layers.
        pooled_layers: Number of leading conv layers followed by 2x max-pooling.
    """

    input_channels: int = 1
    image_size: int = 64
    conv_channels: tuple[int, ...] = field(
        default_factory=lambda: (16, 32, 32, 32, 32, 64, 64)
    )
    fc_channels: tuple[int, ...] = field(default_factory=lambda: (32, 1))
    pooled_layers: int = 5

    def __post_init__(self) -> None:
        """Validate configuration values after initialization."""
        self.conv_channels = tuple(self.conv_channels)
        self.fc_channels = tuple(self.fc_channels)
        if self.input_channels < 1:
            raise ConfigurationError("input_channels must be at least 1")
        if self.image_size % (2**self.pooled_layers) != 0:
            raise ConfigurationError(
                f"image_size must be divisible by {2**self.pooled_layers}"
            )
        if not 0 <= self.pooled_layers <= len(self.conv_channels):
            raise ConfigurationError("pooled_layers exceeds conv layer count")
        if not self.fc_channels or self.fc_channels[-1] != 1:
            raise ConfigurationError("the final FC layer must output one value")
        if any(c < 1 for c in self.conv_channels + self.fc_channels):
            raise ConfigurationError("channel counts must be positive")
