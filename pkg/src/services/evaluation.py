"""Segmentation metrics, cluster matching, reports and overlays."""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch
from PIL import Image
from scipy.optimize import linear_sum_assignment

from src.errors import ConfigurationError
from src.models.network_config import BackboneConfig
from src.models.records import Checkpoint
from src.models.report import SegmentationReport
from src.models.samples import ImageDataset
from src.services.checkpoint import require_stage
from src.services.networks import LocalDiscriminationNet, SegmentationNet
from src.services.scenes import image_to_png

logger = logging.getLogger(__name__)

CENTER_STRUCTURES: tuple[str, ...] = ("blob",)
EVAL_BATCH_SIZE = 16
OVERLAY_ALPHA = 0.5
OVERLAY_DIR = "overlays"
REPORT_JSON = "report.json"
REPORT_TXT = "report.txt"
OVERLAY_COLORS: tuple[tuple[int, int, int], ...] = (
    (0, 200, 255),
    (255, 220, 0),
    (0, 255, 120),
    (255, 0, 200),
    (120, 120, 255),
    (255, 120, 0),
)


@dataclass
class ClusterMatch:
    """One-to-one structure-to-cluster assignment with its mean DSC."""

    structure_names: list[str]
    channels: list[int]
    dsc: list[float]

    def as_dict(self) -> dict[str, int]:
        return dict(zip(self.structure_names, self.channels))


def dsc(pred: torch.Tensor, gt: torch.Tensor) -> float:
    """Dice-Sørensen coefficient of two binary masks; 1 when both are empty.

    Raises:
        ValueError: On a shape mismatch.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    p, g = pred.bool(), gt.bool()
    denominator = int(p.sum()) + int(g.sum())
    if denominator == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denominator


def binarize(prob: torch.Tensor, threshold: float = 0.5) -> torch.Tensor:
    """Entries ``>= threshold`` become 1."""
    return (prob >= threshold).to(torch.uint8)


def cluster_masks(r: torch.Tensor) -> torch.Tensor:
    """One-hot argmax masks ``(N, M, H, W)`` of a ClusterProbMap."""
    labels = r.argmax(dim=1)
    return torch.nn.functional.one_hot(labels, r.shape[1]).permute(0, 3, 1, 2).bool()


def dsc_matrix(masks: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean per-image DSC of every ``(structure, cluster)`` pair, ``(K, M)``."""
    p = masks.double()
    g = gt.double()
    intersection = torch.einsum("nmhw,nkhw->nkm", p, g)
    sizes = p.sum(dim=(2, 3))[:, None, :] + g.sum(dim=(2, 3))[:, :, None]
    scores = torch.where(sizes > 0, 2 * intersection / sizes.clamp_min(1), torch.ones_like(sizes))
    return scores.mean(dim=0)


def match_clusters_to_structures(
    r: torch.Tensor,
    gt: torch.Tensor,
    structure_names: Optional[Sequence[str]] = None,
) -> ClusterMatch:
    """Optimal one-to-one assignment of clusters to structures by total DSC.

    Args:
        r: ClusterProbMap ``(N, M, H, W)`` or ``(M, H, W)``.
        gt: Binary masks ``(N, K, H, W)`` or ``(K, H, W)``.
        structure_names: Names of the K structures.

    Returns:
        ClusterMatch with the channel and mean DSC per structure.

    Raises:
        ConfigurationError: If there are more structures than clusters.
    """
    if r.dim() == 3:
        r, gt = r.unsqueeze(0), gt.unsqueeze(0)
    if r.shape[0] != gt.shape[0] or r.shape[2:] != gt.shape[2:]:
        raise ValueError("cluster maps and masks must agree on (N, H, W)")
    k, m = gt.shape[1], r.shape[1]
    if k > m:
        raise ConfigurationError(f"{k} structures cannot be matched to {m} clusters")
    scores = dsc_matrix(cluster_masks(r), gt).cpu().numpy()
    rows, cols = linear_sum_assignment(scores, maximize=True)
    names = list(structure_names) if structure_names else [str(i) for i in range(k)]
    channels = [0] * k
    values = [0.0] * k
    for row, col in zip(rows, cols):
        channels[row] = int(col)
        values[row] = float(scores[row, col])
    return ClusterMatch(structure_names=names, channels=channels, dsc=values)


def centroid(mask: torch.Tensor) -> Optional[tuple[float, float]]:
    """``(row, col)`` mean of the foreground pixels; None when empty."""
    coords = torch.nonzero(mask.bool()).double()
    if coords.shape[0] == 0:
        return None
    center = coords.mean(dim=0)
    return float(center[0]), float(center[1])


def fovea_center_distance(
    pred: torch.Tensor, gt_center: tuple[float, float]
) -> Optional[float]:
    """Euclidean distance between the prediction centroid and ``gt_center``.

    Returns:
        Distance in pixels, or None for an empty prediction.
    """
    center = centroid(pred)
    if center is None:
        return None
    return math.hypot(center[0] - gt_center[0], center[1] - gt_center[1])


def _center_distances(
    pred: torch.Tensor, gt: torch.Tensor
) -> tuple[Optional[float], int]:
    distances, missing = [], 0
    for p, g in zip(pred, gt):
        gt_center = centroid(g)
        if gt_center is None:
            continue
        distance = fovea_center_distance(p, gt_center)
        if distance is None:
            missing += 1
        else:
            distances.append(distance)
    if missing:
        logger.warning("%d empty predictions excluded from center distance", missing)
    return (float(np.mean(distances)) if distances else None), missing


def evaluate_cluster_maps(
    r: torch.Tensor,
    gt: torch.Tensor,
    structure_names: Sequence[str],
    stage: str = "ld",
    assigned: Optional[dict[str, int]] = None,
    center_structures: Sequence[str] = CENTER_STRUCTURES,
) -> tuple[SegmentationReport, torch.Tensor]:
    """Score cluster maps against ground truth.

    Each structure is scored with its matched cluster's argmax mask; prior
    structures are also scored on their assigned channel.

    Returns:
        The report and the predicted masks ``(N, K, H, W)`` of the matched
        channels.
    """
    names = list(structure_names)
    match = match_clusters_to_structures(r, gt, names)
    masks = cluster_masks(r)
    scores = dsc_matrix(masks, gt)
    predicted = masks[:, match.channels]

    assigned_dsc: dict[str, float] = {}
    for name, channel in (assigned or {}).items():
        if name in names:
            assigned_dsc[name] = float(scores[names.index(name), channel])

    distances: dict[str, float] = {}
    missing: dict[str, int] = {}
    for name in center_structures:
        if name not in names:
            continue
        k = names.index(name)
        distance, missing[name] = _center_distances(predicted[:, k], gt[:, k])
        if distance is not None:
            distances[name] = distance

    report = SegmentationReport(
        stage=stage,
        dsc=dict(zip(names, match.dsc)),
        matched_clusters=match.as_dict(),
        assigned_dsc=assigned_dsc,
        center_distances=distances,
        missing_centers=missing,
        image_count=int(r.shape[0]),
    )
    return report, predicted


def evaluate_probability_maps(
    prob: torch.Tensor,
    gt: torch.Tensor,
    structure: str,
    threshold: float = 0.5,
    stage: str = "finetune",
) -> tuple[SegmentationReport, torch.Tensor]:
    """Mean per-image DSC of thresholded ``(N, 1, H, W)`` probabilities."""
    predicted = binarize(prob[:, 0], threshold)
    values = [dsc(p, g) for p, g in zip(predicted, gt)]
    report = SegmentationReport(
        stage=stage,
        dsc={structure: float(np.mean(values))},
        threshold=threshold,
        image_count=int(prob.shape[0]),
    )
    return report, predicted[:, None].bool()


def predict(
    model: torch.nn.Module,
    images: torch.Tensor,
    batch_size: int = EVAL_BATCH_SIZE,
    device: Union[str, torch.device] = "cpu",
) -> torch.Tensor:
    """Batched inference; cluster maps for LD models, masks for segmenters."""
    model.eval()
    outputs = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            batch = images[start : start + batch_size].to(device)
            output = model(batch)
            outputs.append(getattr(output, "clustering", output).cpu())
    return torch.cat(outputs)


def evaluate_checkpoint(
    checkpoint: Checkpoint,
    dataset: ImageDataset,
    structures: Sequence[str],
    threshold: float = 0.5,
    device: Union[str, torch.device] = "cpu",
) -> tuple[SegmentationReport, torch.Tensor]:
    """Evaluate an ld, prior or finetune checkpoint on a labeled dataset.

    Raises:
        ConfigurationError: If the stage cannot be evaluated or a structure has
            no ground truth in ``dataset``.
    """
    require_stage(checkpoint, "eval")
    names = list(structures)
    absent = [s for s in names if s not in dataset.structure_names]
    if absent:
        raise ConfigurationError(f"dataset has no masks for: {', '.join(absent)}")
    gt = torch.stack([dataset.mask(s) for s in names], dim=1)
    backbone = BackboneConfig(**checkpoint.model_config)

    if checkpoint.stage == "finetune":
        if len(names) != 1:
            raise ConfigurationError("a finetune checkpoint segments one structure")
        model: torch.nn.Module = SegmentationNet(backbone)
        model.load_state_dict(checkpoint.parameters)
        prob = predict(model.to(device), dataset.images, device=device)
        return evaluate_probability_maps(prob, gt[:, 0], names[0], threshold)

    model = LocalDiscriminationNet(backbone)
    model.load_state_dict(checkpoint.parameters)
    r = predict(model.to(device), dataset.images, device=device)
    assigned = None
    if checkpoint.prior is not None:
        assigned = dict(
            zip(checkpoint.prior["structure_names"], checkpoint.prior["cluster_channels"])
        )
    report, predicted = evaluate_cluster_maps(r, gt, names, checkpoint.stage, assigned)
    report.threshold = threshold
    return report, predicted


def write_report(report: SegmentationReport, out_dir: Union[str, Path]) -> tuple[Path, Path]:
    """Write ``report.json`` and the ``report.txt`` table."""
    root = Path(out_dir)
    json_path, text_path = root / REPORT_JSON, root / REPORT_TXT
    try:
        root.mkdir(parents=True, exist_ok=True)
        json_path.write_text(json.dumps(report.to_json_dict(), indent=2), encoding="utf-8")
        text_path.write_text(report.to_table() + "\n", encoding="utf-8")
    except OSError as e:
        raise OSError(f"Failed to write report {root}: {e}") from e
    return json_path, text_path


def overlay(image: torch.Tensor, masks: torch.Tensor, alpha: float = OVERLAY_ALPHA) -> Image.Image:
    """Alpha-blend each mask channel in its own colour onto ``image``."""
    base = image_to_png(image).convert("RGBA")
    for channel in range(masks.shape[0]):
        color = OVERLAY_COLORS[channel % len(OVERLAY_COLORS)]
        mask = masks[channel].bool().numpy()
        layer = np.zeros((*mask.shape, 4), dtype=np.uint8)
        layer[mask] = (*color, int(round(alpha * 255)))
        base = Image.alpha_composite(base, Image.fromarray(layer))
    return base.convert("RGB")


def write_overlays(
    images: torch.Tensor,
    masks: torch.Tensor,
    out_dir: Union[str, Path],
    file_names: Optional[Sequence[str]] = None,
    alpha: float = OVERLAY_ALPHA,
) -> list[Path]:
    """One overlay PNG per image under ``out_dir/overlays``."""
    root = Path(out_dir) / OVERLAY_DIR
    names = list(file_names) if file_names else [f"{i:04d}.png" for i in range(len(images))]
    paths = []
    try:
        root.mkdir(parents=True, exist_ok=True)
        for image, mask, name in zip(images, masks, names):
            path = root / f"{Path(name).stem}.png"
            overlay(image, mask, alpha).save(path)
            paths.append(path)
    except OSError as e:
        raise OSError(f"Failed to write overlays {root}: {e}") from e
    return paths
