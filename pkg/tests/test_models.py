"""Tests for data models."""

import json

import pytest
import torch

from src.errors import ConfigurationError
from src.models.data_config import AugmentConfig, EllipsePrior, SyntheticSceneSpec
from src.models.records import EpochRecord
from src.models.report import SegmentationReport
from src.models.samples import ImageDataset, MixupSample, ReferenceMaskSet, SampleGroup
from src.models.training_config import (
    FinetuneConfig,
    LossWeights,
    PriorSpec,
    StageConfig,
)


class TestSampleModels:
    """Test SampleGroup and MixupSample dataclasses."""

    def test_sample_group_views_share_shape(self) -> None:
        """Test that mismatched views are rejected."""
        with pytest.raises(ValueError, match="shape"):
            SampleGroup(torch.zeros(3, 8, 8), torch.zeros(3, 4, 4), source_id=0)

    @pytest.mark.parametrize("lam", [0.0, 1.0, 1.5])
    def test_mixup_lambda_strictly_inside(self, lam: float) -> None:
        """Test that lam must lie in the open interval (0, 1)."""
        with pytest.raises(ValueError, match="lam"):
            MixupSample(torch.zeros(3, 4, 4), lam, parent_ids=(0, 1), parent_indices=(0, 1))


class TestReferenceMaskSet:
    """Test ReferenceMaskSet dataclass."""

    def test_creation(self) -> None:
        """Test a valid binary set reports its length."""
        # Given
        masks = torch.zeros(5, 2, 8, 8)
        masks[:, 0, 2:4, 2:4] = 1

        # When
        refs = ReferenceMaskSet(masks, "simulated", ["disk", "blob"])

        # Then
        assert len(refs) == 5
        assert refs.file_names == []

    def test_non_binary_rejected(self) -> None:
        """Test that fractional mask values are rejected."""
        with pytest.raises(ValueError, match="binary"):
            ReferenceMaskSet(torch.full((1, 1, 4, 4), 0.5), "real", ["disk"])

    def test_channel_count_must_match_names(self) -> None:
        """Test that channel order is documented by structure_names."""
        with pytest.raises(ValueError, match="structure_names"):
            ReferenceMaskSet(torch.zeros(1, 2, 4, 4), "real", ["disk"])

    def test_unknown_kind_rejected(self) -> None:
        """Test that the source kind is validated."""
        with pytest.raises(ValueError, match="kind"):
            ReferenceMaskSet(torch.zeros(1, 1, 4, 4), "drawn", ["disk"])  # type: ignore[arg-type]


class TestImageDataset:
    """Test ImageDataset dataclass."""

    def _dataset(self) -> ImageDataset:
        masks = torch.zeros(3, 2, 4, 4, dtype=torch.uint8)
        masks[1, 1] = 1
        return ImageDataset(torch.rand(3, 3, 4, 4), masks, ["disk", "blob"])

    def test_default_file_names(self) -> None:
        """Test that file names default to zero-padded indices."""
        assert self._dataset().file_names == ["0000.png", "0001.png", "0002.png"]

    def test_mask_by_structure(self) -> None:
        """Test per-structure mask lookup."""
        dataset = self._dataset()
        assert dataset.mask("blob").shape == (3, 4, 4)
        assert int(dataset.mask("blob")[1].sum()) == 16

    def test_missing_structure_raises(self) -> None:
        """Test that asking for an absent structure is an error."""
        with pytest.raises(ValueError, match="strokes"):
            self._dataset().mask("strokes")

    def test_subset_keeps_order(self) -> None:
        """Test that subset reorders images, masks and names together."""
        dataset = self._dataset()
        sub = dataset.subset([2, 1])

        assert len(sub) == 2
        assert sub.file_names == ["0002.png", "0001.png"]
        assert torch.equal(sub.images[1], dataset.images[1])
        assert int(sub.mask("blob")[1].sum()) == 16

    def test_images_only(self) -> None:
        """Test a dataset without any masks."""
        dataset = ImageDataset(torch.rand(2, 3, 4, 4), torch.zeros(2, 0, 4, 4), [])
        assert len(dataset) == 2

    def test_grayscale_images_rejected(self) -> None:
        """Test that images must have three channels."""
        with pytest.raises(ValueError, match="images"):
            ImageDataset(torch.rand(2, 1, 4, 4), torch.zeros(2, 0, 4, 4), [])


class TestDataConfigs:
    """Test augmentation, scene and ellipse configuration."""

    def test_augment_defaults(self) -> None:
        """Test the documented jitter ranges."""
        config = AugmentConfig()
        assert config.crop_scale == (0.6, 1.0)
        assert (config.brightness, config.contrast, config.saturation, config.hue) == (
            0.4,
            0.4,
            0.4,
            0.1,
        )
        assert config.grayscale_p == 0.2

    def test_identity_disables_everything(self) -> None:
        """Test that the identity config turns off every transform."""
        config = AugmentConfig.identity(32)
        assert config.output_size == 32
        assert not config.crop and not config.rotate90
        assert config.flip_p == 0.0 and config.grayscale_p == 0.0

    def test_invalid_crop_scale(self) -> None:
        """Test that crop_scale must lie in (0, 1]."""
        with pytest.raises(ConfigurationError):
            AugmentConfig(crop_scale=(0.5, 1.2))

    def test_hue_limit(self) -> None:
        """Test that hue jitter is at most 0.5."""
        with pytest.raises(ConfigurationError, match="hue"):
            AugmentConfig(hue=0.6)

    def test_scene_structures(self) -> None:
        """Test the fixed structure set of synthetic scenes."""
        assert SyntheticSceneSpec().structures == ("background", "disk", "strokes", "blob")

    def test_scene_blob_must_clear_disk(self) -> None:
        """Test that the blob offset keeps the blob off the disk."""
        with pytest.raises(ConfigurationError, match="blob_offset"):
            SyntheticSceneSpec(blob_offset=(10.0, 28.0))

    def test_scene_blob_area_floor(self) -> None:
        """Test that the blob must cover at least 1% of the image."""
        with pytest.raises(ConfigurationError, match="1%"):
            SyntheticSceneSpec(blob_radius=(1.0, 6.0))

    def test_scene_minimum_size(self) -> None:
        """Test that scenes are at least 32 pixels wide."""
        with pytest.raises(ConfigurationError, match="32"):
            SyntheticSceneSpec(image_size=16)

    def test_ellipse_fixed(self) -> None:
        """Test that a fixed prior has no jitter."""
        prior = EllipsePrior.fixed((10.0, 8.0))
        assert prior.axes == (10.0, 8.0)
        assert prior.axis_jitter == prior.angle_jitter == prior.center_jitter == 0.0

    def test_ellipse_axes_positive(self) -> None:
        """Test that semi-axes must be positive."""
        with pytest.raises(ConfigurationError, match="axes"):
            EllipsePrior(axes=(0.0, 3.0))


class TestTrainingConfigs:
    """Test stage, prior and finetune configuration."""

    def test_loss_weights_defaults(self) -> None:
        """Test the published stage-total weights."""
        weights = LossWeights()
        assert (weights.w_pd, weights.w_mixup, weights.w_ld) == (1.0, 1.0, 10.0)
        assert (weights.w_entropy, weights.w_area, weights.w_adv) == (1.0, 5.0, 2.0)

    def test_negative_weight_rejected(self) -> None:
        """Test that weights are nonnegative."""
        with pytest.raises(ConfigurationError, match="w_area"):
            LossWeights(w_area=-1.0)

    def test_stage_defaults(self) -> None:
        """Test per-stage batch composition and schedule."""
        pretrain = StageConfig.for_stage("pretrain")
        ld = StageConfig.for_stage("ld", max_epochs=3)

        assert (pretrain.groups_per_batch, pretrain.mixups_per_batch) == (16, 8)
        assert pretrain.plateau_patience == 3
        assert (ld.groups_per_batch, ld.mixups_per_batch) == (6, 3)
        assert ld.max_epochs == 3
        assert ld.plateau_patience is None

    def test_unknown_stage_rejected(self) -> None:
        """Test that only the three unsupervised stages exist."""
        with pytest.raises(ConfigurationError, match="stage"):
            StageConfig.for_stage("finetune")

    def test_prior_channels_must_be_distinct(self) -> None:
        """Test that two structures cannot share a cluster channel."""
        prior = PriorSpec(structure_names=["disk", "blob"], cluster_channels=[1, 1])
        with pytest.raises(ConfigurationError, match="distinct"):
            prior.validate(8)

    def test_prior_channel_out_of_range(self) -> None:
        """Test that channels must index the clustering head."""
        with pytest.raises(ConfigurationError, match=r"\[0, 3\]"):
            PriorSpec(cluster_channels=[4]).validate(4)

    def test_finetune_defaults(self) -> None:
        """Test the transfer protocol defaults."""
        config = FinetuneConfig()
        assert (config.frozen_epochs, config.finetune_epochs) == (100, 100)
        assert (config.frozen_lr, config.finetune_lr) == (1e-3, 1e-4)
        assert (config.batch_size, config.train_count) == (4, 20)

    @pytest.mark.parametrize("changes", [{"batch_size": 1}, {"train_count": 1}])
    def test_finetune_needs_two_images_per_batch(self, changes) -> None:
        """Test that single-image batches are rejected."""
        with pytest.raises(ConfigurationError, match="at least 2"):
            FinetuneConfig(**changes)


class TestRecords:
    """Test EpochRecord and SegmentationReport."""

    def test_epoch_record_json_layout(self) -> None:
        """Test the flattened metrics-line layout."""
        record = EpochRecord(
            stage="ld",
            epoch=2,
            components={"pd": 1.5, "ld": -0.2},
            total=-0.5,
            lr=1e-3,
            wall_time=0.1,
            extra={"loss_d": 1.3},
        )

        line = record.to_json_dict()

        assert line["stage"] == "ld" and line["epoch"] == 2
        assert line["pd"] == 1.5 and line["loss_d"] == 1.3
        assert "val_loss" not in line
        json.dumps(line)

    def test_report_mean_and_table(self) -> None:
        """Test mean DSC and the human-readable table."""
        report = SegmentationReport(
            stage="prior",
            dsc={"disk": 0.8, "blob": 0.4},
            matched_clusters={"disk": 2, "blob": 5},
            center_distances={"blob": 1.25},
            image_count=10,
        )

        assert report.mean_dsc == pytest.approx(0.6)
        table = report.to_table()
        assert "disk" in table and "0.8000" in table and "1.25" in table
        assert report.to_json_dict()["mean_dsc"] == pytest.approx(0.6)

    def test_report_rejects_out_of_range_dsc(self) -> None:
        """Test that DSC values are ratios."""
        with pytest.raises(ValueError, match="disk"):
            SegmentationReport(stage="ld", dsc={"disk": 1.5})

    def test_empty_report_has_no_mean(self) -> None:
        """Test that a report without structures has no mean."""
        assert SegmentationReport(stage="ld", dsc={}).mean_dsc is None
