"""Differentiable objectives of the three training stages and transfer.

Shapes: ``r`` is a ClusterProbMap ``(N, M, H, W)``, ``v`` an EmbeddingMap
``(N, D, H, W)``, patch sets are ``(N, D, G, G)``.
"""

import logging
import math
from collections.abc import Mapping
from typing import Union

import torch
import torch.nn.functional as F

from src.errors import ConfigurationError
from src.models.training_config import SUPPORTED_STAGES, LossWeights
from src.services.core_math import flatten_patches, l2_normalize

logger = logging.getLogger(__name__)

PROB_EPS = 1e-7
DICE_SMOOTH = 1.0

# component name -> scalar loss, in STAGE_COMPONENTS order
LossComponents = dict[str, torch.Tensor]

STAGE_COMPONENTS: dict[str, tuple[tuple[str, str], ...]] = {
    "pretrain": (("pd", "w_pd"), ("mixup", "w_mixup")),
    "ld": (
        ("pd", "w_pd"),
        ("mixup", "w_mixup"),
        ("ld", "w_ld"),
        ("entropy", "w_entropy"),
        ("area", "w_area"),
    ),
    "prior": (
        ("pd", "w_pd"),
        ("mixup", "w_mixup"),
        ("ld", "w_ld"),
        ("entropy", "w_entropy"),
        ("area", "w_area"),
        ("adv", "w_adv"),
    ),
}


def compute_cluster_centers(r: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Soft-assignment-weighted mean embedding per cluster, on the unit sphere.

    ``t_m = sum r_m * v`` over batch and pixels; ``c_m = t_m / ||t_m||``.
    Empty clusters give an all-zero row.
    """
    if r.shape[0] != v.shape[0] or r.shape[2:] != v.shape[2:]:
        raise ConfigurationError("r and v must agree on (N, H, W)")
    t = torch.einsum("nmhw,ndhw->md", r, v)
    return l2_normalize(t, dim=1)


def loss_ld(r: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Pull pixels toward their cluster centre, push centres apart."""
    n, m, h, w = r.shape
    if m < 2:
        raise ConfigurationError("loss_ld needs at least 2 clusters")
    c = compute_cluster_centers(r, v)
    similarity = torch.einsum("md,ndhw->nmhw", c, v)
    attract = -(r * similarity).sum() / (m * n * h * w)
    gram = c @ c.t()
    repel = (gram.sum() - gram.diagonal().sum()) / (m * m - m)
    return attract + repel


def loss_entropy(r: torch.Tensor) -> torch.Tensor:
    """Mean base-2 entropy term, ``0 * log 0 := 0``."""
    n, m, h, w = r.shape
    plogp = r * torch.log2(r.clamp_min(PROB_EPS))
    return -plogp.sum() / (m * n * h * w)


def loss_area(r: torch.Tensor) -> torch.Tensor:
    """Hinge on each cluster's soft area below ``HW / (4M)``."""
    n, m, h, w = r.shape
    area = r.sum(dim=(2, 3))
    return F.relu(h * w / (4 * m) - area).sum() / (n * m)


def patch_prob(s: torch.Tensor, s_hat_ij: torch.Tensor, tau: float) -> torch.Tensor:
    """Probability of a query patch being recognized as each first-view patch.

    Args:
        s: First-view patch embeddings, ``(N, D, G, G)`` or flattened ``(K, D)``.
        s_hat_ij: Query unit vector ``(D,)``.
        tau: Temperature.

    Returns:
        Probabilities over all K first-view patches.
    """
    keys = flatten_patches(s) if s.dim() == 4 else s
    return torch.softmax(keys @ s_hat_ij / tau, dim=0)


def _discrimination_loss(
    keys: torch.Tensor, queries: torch.Tensor, tau: float, symmetric: bool
) -> torch.Tensor:
    """Sum over patches q of ``-log P(q|q) - sum_{k != q} log(1 - P(q|k))``.

    Row k of the softmax holds ``P(. | query k)`` over the keys.
    """
    count = keys.shape[0]
    logits = queries @ keys.t() / tau
    if symmetric:
        extra = queries @ queries.t() / tau
        self_mask = torch.eye(count, dtype=torch.bool, device=keys.device)
        extra = extra.masked_fill(self_mask, float("-inf"))
        log_prob = torch.log_softmax(torch.cat([logits, extra], dim=1), dim=1)[:, :count]
    else:
        log_prob = torch.log_softmax(logits, dim=1)
    positive = -log_prob.diagonal().sum()
    prob = log_prob.exp().clamp(max=1.0 - PROB_EPS)
    off_diagonal = ~torch.eye(count, dtype=torch.bool, device=keys.device)
    negative = -torch.log1p(-prob[off_diagonal]).sum()
    return positive + negative


def loss_pd(
    s: torch.Tensor,
    s_hat: torch.Tensor,
    tau: float = 0.1,
    symmetric_denominator: bool = False,
) -> torch.Tensor:
    """Patch discrimination: each augmented patch recognizes its own first view."""
    if s.shape != s_hat.shape:
        raise ConfigurationError("s and s_hat must be aligned patch sets")
    return _discrimination_loss(
        flatten_patches(s), flatten_patches(s_hat), tau, symmetric_denominator
    )


def mixup_target(
    s_a: torch.Tensor, s_b: torch.Tensor, lam: Union[float, torch.Tensor]
) -> torch.Tensor:
    """Normalized interpolation of the parents' patch embeddings.

    ``lam`` is a scalar or a per-sample tensor of shape ``(N,)``. Antipodal
    parents at ``lam = 0.5`` give the zero vector.
    """
    if isinstance(lam, torch.Tensor) and lam.dim() == 1:
        lam = lam.view(-1, *([1] * (s_a.dim() - 1)))
    return l2_normalize(lam * s_a + (1 - lam) * s_b, dim=1 if s_a.dim() > 1 else 0)


def loss_mixup(
    z: torch.Tensor,
    s_tilde: torch.Tensor,
    tau: float = 0.1,
    symmetric_denominator: bool = False,
) -> torch.Tensor:
    """Mixed-image patches recognize their interpolated targets.

    Patches whose target degenerated to zero are skipped.
    """
    if z.shape != s_tilde.shape:
        raise ConfigurationError("z and s_tilde must be aligned patch sets")
    keys, queries = flatten_patches(z), flatten_patches(s_tilde)
    valid = keys.norm(dim=1) > 0.5
    if not bool(valid.all()):
        logger.debug("Skipping %d degenerate mixup patches", int((~valid).sum()))
        keys, queries = keys[valid], queries[valid]
    if keys.shape[0] == 0:
        return z.sum() * 0.0
    return _discrimination_loss(keys, queries, tau, symmetric_denominator)


def loss_bce(y_hat: torch.Tensor, y: Union[float, torch.Tensor]) -> torch.Tensor:
    """Mean binary cross-entropy with predictions clamped to ``[eps, 1 - eps]``."""
    y_hat = y_hat.clamp(PROB_EPS, 1.0 - PROB_EPS)
    target = torch.as_tensor(y, dtype=y_hat.dtype, device=y_hat.device).expand_as(y_hat)
    return -(target * torch.log(y_hat) + (1 - target) * torch.log(1 - y_hat)).mean()


def loss_discriminator(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """Discriminator objective: references are 1, pseudo segmentations 0."""
    return loss_bce(d_real, 1.0) + loss_bce(d_fake, 0.0)


def loss_adversarial(d_fake: torch.Tensor) -> torch.Tensor:
    """Generator objective: pseudo segmentations should pass as references."""
    return loss_bce(d_fake, 1.0)


def loss_dice(
    p: torch.Tensor, g: torch.Tensor, smooth: float = DICE_SMOOTH
) -> torch.Tensor:
    """``1 - soft Dice`` with additive smoothing, over the whole batch."""
    if p.shape != g.shape:
        raise ConfigurationError(f"shape mismatch: {tuple(p.shape)} vs {tuple(g.shape)}")
    intersection = (p * g).sum()
    return 1 - (2 * intersection + smooth) / (p.sum() + g.sum() + smooth)


def stage_total(
    losses: Mapping[str, torch.Tensor], weights: LossWeights, stage: str
) -> torch.Tensor:
    """Weighted sum of a stage's loss components.

    Raises:
        ConfigurationError: On an unknown stage or a missing component.
    """
    if stage not in STAGE_COMPONENTS:
        supported = ", ".join(SUPPORTED_STAGES)
        raise ConfigurationError(f"stage must be one of: {supported}")
    missing = [name for name, _ in STAGE_COMPONENTS[stage] if name not in losses]
    if missing:
        raise ConfigurationError(
            f"stage {stage} is missing loss components: {', '.join(missing)}"
        )
    total: Union[float, torch.Tensor] = 0.0
    for name, attr in STAGE_COMPONENTS[stage]:
        total = total + getattr(weights, attr) * losses[name]
    return torch.as_tensor(total)


def entropy_upper_bound(cluster_count: int) -> float:
    """Value of loss_entropy for uniform assignments, ``log2(M) / M``."""
    return math.log2(cluster_count) / cluster_count
