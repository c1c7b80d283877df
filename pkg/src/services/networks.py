"""Backbone, heads, downstream decoder and mask discriminator."""

from dataclasses import dataclass
from typing import Any, Mapping

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.errors import ConfigurationError
from src.models.network_config import (
    DOWNSAMPLE_FACTOR,
    BackboneConfig,
    DiscriminatorConfig,
)
from src.services.core_math import l1_normalize, l2_normalize

ENCODER_PREFIX = "encoder."


@dataclass
class NetworkOutput:
    """Per-pixel embedding and cluster probabilities at input resolution."""

    embedding: torch.Tensor
    clustering: torch.Tensor


def conv_layer(in_channels: int, out_channels: int, batch_norm: bool) -> list[nn.Module]:
    """3x3 conv, optional batch norm, ReLU."""
    layers: list[nn.Module] = [
        nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1)
    ]
    if batch_norm:
        layers.append(nn.BatchNorm2d(out_channels))
    layers.append(nn.ReLU(inplace=True))
    return layers


def conv_block(widths: tuple[int, ...], in_channels: int, batch_norm: bool) -> nn.Sequential:
    """Stack of conv layers with the given output widths."""
    layers: list[nn.Module] = []
    for width in widths:
        layers.extend(conv_layer(in_channels, width, batch_norm))
        in_channels = width
    return nn.Sequential(*layers)


class UpPool(nn.Sequential):
    """Bilinear upsampling followed by a conv layer."""

    def __init__(
        self, in_channels: int, out_channels: int, batch_norm: bool, scale: int = 2
    ) -> None:
        super().__init__(
            nn.Upsample(scale_factor=scale, mode="bilinear", align_corners=False),
            *conv_layer(in_channels, out_channels, batch_norm),
        )


class VGGEncoder(nn.Module):
    """VGG-16 style encoder without FC layers, widths scaled by config."""

    def __init__(self, config: BackboneConfig) -> None:
        super().__init__()
        self.widths = config.encoder_widths
        blocks = []
        in_channels = config.input_channels
        for block in self.widths:
            blocks.append(conv_block(block, in_channels, config.batch_norm))
            in_channels = block[-1]
        self.blocks = nn.ModuleList(blocks)
        self.pool = nn.MaxPool2d(kernel_size=2, stride=2)

    @property
    def out_channels(self) -> list[int]:
        """Channels of each block output."""
        return [block[-1] for block in self.widths]

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Return the five block outputs followed by the final pooled map."""
        height, width = x.shape[-2:]
        if height % DOWNSAMPLE_FACTOR or width % DOWNSAMPLE_FACTOR:
            raise ConfigurationError(
                f"input size {height}x{width} must be divisible by {DOWNSAMPLE_FACTOR}"
            )
        features = []
        for index, block in enumerate(self.blocks):
            x = block(x if index == 0 else self.pool(x))
            features.append(x)
        features.append(self.pool(x))
        return features


class UNetDecoder(nn.Module):
    """U-Net decoder with skips at every scale and a full-resolution skip.

    The final features are the upsampled decoder output concatenated with
    the first encoder block's features.
    """

    def __init__(self, config: BackboneConfig, encoder_channels: list[int]) -> None:
        super().__init__()
        self.blocks_count = config.decoder_blocks
        skips = encoder_channels[::-1][: self.blocks_count]
        ups, blocks = [], []
        in_channels = encoder_channels[-1]
        for skip in skips:
            ups.append(UpPool(in_channels, skip, config.batch_norm))
            blocks.append(conv_block((skip, skip), 2 * skip, config.batch_norm))
            in_channels = skip
        self.ups = nn.ModuleList(ups)
        self.blocks = nn.ModuleList(blocks)
        first = encoder_channels[0]
        remaining = len(encoder_channels) - self.blocks_count
        self.final_up = UpPool(in_channels, first, config.batch_norm, scale=2**remaining)
        self.out_channels = 2 * first

    def forward(self, features: list[torch.Tensor]) -> torch.Tensor:
        *skips, x = features
        for up, block, skip in zip(self.ups, self.blocks, reversed(skips)):
            x = block(torch.cat([up(x), skip], dim=1))
        return torch.cat([self.final_up(x), skips[0]], dim=1)


class EmbeddingHead(nn.Module):
    """Two conv layers projecting each pixel onto the D-dim unit sphere."""

    def __init__(self, in_channels: int, dim: int, batch_norm: bool) -> None:
        super().__init__()
        self.hidden = nn.Sequential(*conv_layer(in_channels, dim, batch_norm))
        self.project = nn.Conv2d(dim, dim, kernel_size=3, padding=1)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return l2_normalize(self.project(self.hidden(features)), dim=1)


class ClusteringHead(nn.Module):
    """Two conv layers, softplus, then per-pixel L1 normalization."""

    def __init__(self, in_channels: int, clusters: int, batch_norm: bool) -> None:
        super().__init__()
        self.hidden = nn.Sequential(*conv_layer(in_channels, clusters, batch_norm))
        self.logits = nn.Conv2d(clusters, clusters, kernel_size=3, padding=1)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return l1_normalize(F.softplus(self.logits(self.hidden(features))), dim=1)


class LocalDiscriminationNet(nn.Module):
    """Backbone with the embedding and clustering branches."""

    def __init__(self, config: BackboneConfig) -> None:
        super().__init__()
        self.config = config
        self.encoder = VGGEncoder(config)
        self.decoder = UNetDecoder(config, self.encoder.out_channels)
        self.embedding = EmbeddingHead(
            self.decoder.out_channels, config.embedding_dim, config.batch_norm
        )
        self.clustering = ClusteringHead(
            self.decoder.out_channels, config.cluster_count, config.batch_norm
        )

    def backbone_forward(self, x: torch.Tensor) -> torch.Tensor:
        """Shared feature map at input resolution."""
        return self.decoder(self.encoder(x))

    def embedding_head(self, features: torch.Tensor) -> torch.Tensor:
        return self.embedding(features)

    def clustering_head(self, features: torch.Tensor) -> torch.Tensor:
        return self.clustering(features)

    def forward(self, x: torch.Tensor) -> NetworkOutput:
        features = self.backbone_forward(x)
        return NetworkOutput(
            embedding=self.embedding_head(features),
            clustering=self.clustering_head(features),
        )


class DownstreamDecoder(nn.Module):
    """Five (2 conv + up-pooling) blocks mapping encoder features to a mask."""

    def __init__(self, config: BackboneConfig, encoder_channels: list[int]) -> None:
        super().__init__()
        widths = encoder_channels[::-1]
        in_channels = encoder_channels[-1]
        blocks, ups = [], []
        for width in widths:
            blocks.append(conv_block((width, width), in_channels, config.batch_norm))
            ups.append(UpPool(width, width, config.batch_norm))
            in_channels = 2 * width
        self.blocks = nn.ModuleList(blocks)
        self.ups = nn.ModuleList(ups)
        self.head = nn.Conv2d(in_channels, 1, kernel_size=1)

    def forward(self, features: list[torch.Tensor]) -> torch.Tensor:
        *skips, x = features
        for block, up, skip in zip(self.blocks, self.ups, reversed(skips)):
            x = torch.cat([up(block(x)), skip], dim=1)
        return torch.sigmoid(self.head(x))


class SegmentationNet(nn.Module):
    """Pretrained-encoder transfer model producing ``(N, 1, H, W)`` probabilities."""

    def __init__(self, config: BackboneConfig) -> None:
        super().__init__()
        self.encoder = VGGEncoder(config)
        self.decoder = DownstreamDecoder(config, self.encoder.out_channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encoder(x))


class MaskDiscriminator(nn.Module):
    """Conv classifier telling reference masks from pseudo segmentations."""

    def __init__(self, config: DiscriminatorConfig) -> None:
        super().__init__()
        self.config = config
        layers: list[nn.Module] = []
        in_channels = config.input_channels
        for index, width in enumerate(config.conv_channels):
            layers.append(nn.Conv2d(in_channels, width, kernel_size=3, padding=1))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            if index < config.pooled_layers:
                layers.append(nn.MaxPool2d(kernel_size=2, stride=2))
            in_channels = width
        self.features = nn.Sequential(*layers)
        side = config.image_size // (2**config.pooled_layers)
        fc: list[nn.Module] = [nn.Flatten()]
        in_features = in_channels * side * side
        for index, width in enumerate(config.fc_channels):
            fc.append(nn.Linear(in_features, width))
            if index < len(config.fc_channels) - 1:
                fc.append(nn.LeakyReLU(0.2, inplace=True))
            in_features = width
        self.classifier = nn.Sequential(*fc)

    def forward(self, masks: torch.Tensor) -> torch.Tensor:
        """Probability that each mask is a reference, shape ``(N,)``."""
        if masks.shape[1] != self.config.input_channels:
            raise ConfigurationError(
                f"discriminator expects {self.config.input_channels} channels, "
                f"got {masks.shape[1]}"
            )
        size = self.config.image_size
        if tuple(masks.shape[-2:]) != (size, size):
            raise ConfigurationError(
                f"discriminator expects {size}x{size} masks, got "
                f"{masks.shape[-2]}x{masks.shape[-1]}"
            )
        return torch.sigmoid(self.classifier(self.features(masks))).squeeze(1)


def load_encoder_state(model: nn.Module, parameters: Mapping[str, Any]) -> int:
    """Copy ``encoder.*`` tensors from a checkpoint into ``model.encoder``.

    Returns:
        Number of tensors copied.

    Raises:
        ConfigurationError: If the checkpoint holds no encoder tensors.
    """
    encoder_state = {
        key[len(ENCODER_PREFIX):]: value
        for key, value in parameters.items()
        if key.startswith(ENCODER_PREFIX)
    }
    if not encoder_state:
        raise ConfigurationError("checkpoint contains no encoder parameters")
    model.encoder.load_state_dict(encoder_state)  # type: ignore[union-attr]
    return len(encoder_state)
