"""Segmentation report data model."""

from dataclasses import dataclass, field
from typing import Any, Optional


@dataclass
class SegmentationReport:
    """Per-structure evaluation of a checkpoint on a labeled split.

    Attributes:
        stage: Stage of the evaluated checkpoint.
        dsc: Mean DSC per structure.
        matched_clusters: Cluster index matched to each structure.
        assigned_dsc: DSC of the prior-assigned channel per structure.
        center_distances: Mean centroid distance in pixels per structure.
        missing_centers: Images with an empty prediction per structure.
        threshold: Binarization threshold used for probability maps.
        image_count: Number of evaluated images.
    """

    stage: str
    dsc: dict[str, float]
    matched_clusters: dict[str, int] = field(default_factory=dict)
    assigned_dsc: dict[str, float] = field(default_factory=dict)
    center_distances: dict[str, float] = field(default_factory=dict)
    missing_centers: dict[str, int] = field(default_factory=dict)
    threshold: float = 0.5
    image_count: int = 0

    def __post_init__(self) -> None:
        """DSC values are ratios in [0, 1]."""
        for name, value in {**self.dsc, **self.assigned_dsc}.items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"DSC of {name} out of range: {value}")

    @property
    def mean_dsc(self) -> Optional[float]:
        """Mean DSC over all reported structures."""
        if not self.dsc:
            return None
        return sum(self.dsc.values()) / len(self.dsc)

    def to_table(self) -> str:
        """Human-readable aligned table."""
        header = f"{'structure':<12} {'cluster':>7} {'DSC':>7} {'assigned':>9} {'dist(px)':>9}"
        lines = [header, "-" * len(header)]
        for name in self.dsc:
            cluster = self.matched_clusters.get(name)
            assigned = self.assigned_dsc.get(name)
            distance = self.center_distances.get(name)
            lines.append(
                f"{name:<12} {'' if cluster is None else cluster:>7} "
                f"{self.dsc[name]:>7.4f} "
                f"{'' if assigned is None else f'{assigned:.4f}':>9} "
                f"{'' if distance is None else f'{distance:.2f}':>9}"
            )
        mean = self.mean_dsc
        if mean is not None:
            lines.append(f"{'mean':<12} {'':>7} {mean:>7.4f}")
        lines.append(f"images: {self.image_count}  threshold: {self.threshold}")
        return "\n".join(lines)

    def to_json_dict(self) -> dict[str, Any]:
        """JSON-serializable view including the mean."""
        return {
            "stage": self.stage,
            "dsc": self.dsc,
            "mean_dsc": self.mean_dsc,
            "matched_clusters": self.matched_clusters,
            "assigned_dsc": self.assigned_dsc,
            "center_distances": self.center_distances,
            "missing_centers": self.missing_centers,
            "threshold": self.threshold,
            "image_count": self.image_count,
        }
