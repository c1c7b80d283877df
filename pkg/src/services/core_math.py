"""Normalization, similarity and pooling primitives.

All functions are differentiable and operate along the channel axis
(``dim=1`` for ``(N, C, H, W)`` fields, ``dim=0`` for plain vectors).
"""

from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from src.errors import ConfigurationError, NonFiniteError

DEFAULT_EPS = 1e-12


def _channel_dim(x: torch.Tensor, dim: Optional[int]) -> int:
    if dim is not None:
        return dim
    return 0 if x.dim() == 1 else 1


def _check_finite(x: torch.Tensor, name: str) -> None:
    if not bool(torch.isfinite(x).all()):
        raise NonFiniteError(f"{name} received non-finite values")


def l2_normalize(
    x: torch.Tensor, eps: float = DEFAULT_EPS, dim: Optional[int] = None
) -> torch.Tensor:
    """Project vectors onto the unit hypersphere.

    Computes ``x / max(||x||_2, eps)``, so an all-zero vector maps to zero.

    Args:
        x: Vector or per-pixel vector field.
        eps: Lower bound of the norm.
        dim: Channel axis; defaults to 0 for vectors and 1 otherwise.

    Returns:
        Tensor of the same shape with unit-norm channel vectors.

    Raises:
        NonFiniteError: If ``x`` contains NaN or Inf.
    """
    _check_finite(x, "l2_normalize")
    return F.normalize(x, p=2.0, dim=_channel_dim(x, dim), eps=eps)


def l1_normalize(
    x: torch.Tensor, eps: float = DEFAULT_EPS, dim: Optional[int] = None
) -> torch.Tensor:
    """Turn a nonnegative field into per-pixel probability vectors.

    Raises:
        NonFiniteError: If ``x`` contains NaN or Inf.
        ValueError: If ``x`` has negative entries.
    """
    _check_finite(x, "l1_normalize")
    if bool((x < 0).any()):
        raise ValueError("l1_normalize expects nonnegative input")
    return F.normalize(x, p=1.0, dim=_channel_dim(x, dim), eps=eps)


def cosine_similarity(
    c: torch.Tensor, v: torch.Tensor, dim: Optional[int] = None
) -> torch.Tensor:
    """Inner product of unit vectors, i.e. their cosine similarity."""
    _check_finite(c, "cosine_similarity")
    _check_finite(v, "cosine_similarity")
    return (c * v).sum(dim=_channel_dim(v, dim))


def adaptive_average_pool(v: torch.Tensor, grid: int) -> torch.Tensor:
    """Pool an embedding map into a ``grid x grid`` set of patch embeddings.

    Cell ``k`` spans ``[floor(k*H/G), ceil((k+1)*H/G))``; each cell mean is
    renormalized to unit length.

    Args:
        v: EmbeddingMap of shape ``(N, D, H, W)``.
        grid: Pooling grid side ``G``.

    Returns:
        PatchEmbeddingSet of shape ``(N, D, G, G)``.

    Raises:
        ConfigurationError: If ``grid`` is not positive or exceeds H or W.
    """
    if grid < 1:
        raise ConfigurationError(f"grid must be positive, got {grid}")
    height, width = v.shape[-2:]
    if grid > height or grid > width:
        raise ConfigurationError(
            f"grid {grid} exceeds embedding map size {height}x{width}"
        )
    return l2_normalize(F.adaptive_avg_pool2d(v, grid), dim=1)


def flatten_patches(s: torch.Tensor) -> torch.Tensor:
    """Flatten ``(N, D, G, G)`` patches to ``(N*G*G, D)`` with row ``i*G*G + j``."""
    n, d = s.shape[:2]
    return s.reshape(n, d, -1).permute(0, 2, 1).reshape(-1, d)


def derive_seed(global_seed: int, index: int, epoch: int = 0) -> int:
    """Per-sample seed ``global_seed XOR index``, mixed with the epoch."""
    base = (global_seed ^ index) & 0xFFFFFFFF
    if epoch == 0:
        return base
    return int(np.random.SeedSequence([base, epoch]).generate_state(1)[0])
