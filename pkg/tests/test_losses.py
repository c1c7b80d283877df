"""Tests for the training objectives."""

import logging
import math

import pytest
import torch

from src.errors import ConfigurationError
from src.models.training_config import LossWeights
from src.services.core_math import l1_normalize, l2_normalize
from src.services.losses import (
    PROB_EPS,
    compute_cluster_centers,
    entropy_upper_bound,
    loss_adversarial,
    loss_area,
    loss_bce,
    loss_dice,
    loss_discriminator,
    loss_entropy,
    loss_ld,
    loss_mixup,
    loss_pd,
    mixup_target,
    patch_prob,
    stage_total,
)

# 2-patch orthogonal case: 4 * log(1 + 1/e)
ORTHOGONAL_PAIR_LOSS = 4 * math.log1p(math.exp(-1.0))


def _one_hot(labels: torch.Tensor, m: int) -> torch.Tensor:
    return torch.nn.functional.one_hot(labels, m).permute(0, 3, 1, 2).float()


def _orthogonal_patches() -> torch.Tensor:
    # two samples with one patch each, G = 1
    return torch.eye(2).view(2, 2, 1, 1)


def _random_r(n: int, m: int, h: int, w: int, seed: int = 0) -> torch.Tensor:
    generator = torch.Generator().manual_seed(seed)
    return l1_normalize(torch.rand(n, m, h, w, generator=generator) + 0.01)


def _random_v(n: int, d: int, h: int, w: int, seed: int = 0) -> torch.Tensor:
    generator = torch.Generator().manual_seed(seed)
    return l2_normalize(torch.randn(n, d, h, w, generator=generator))


class TestClusterCenters:
    """compute_cluster_centers のテスト"""

    def test_constant_embedding(self) -> None:
        u = l2_normalize(torch.tensor([1.0, -2.0, 0.5]))
        v = u.view(1, 3, 1, 1).expand(2, 3, 4, 4)
        c = compute_cluster_centers(_random_r(2, 3, 4, 4), v)

        assert torch.allclose(c, u.expand(3, 3), atol=1e-6)

    def test_empty_cluster_is_zero_row(self) -> None:
        u = torch.tensor([0.0, 1.0])
        r = torch.tensor([1.0, 0.0]).view(1, 2, 1, 1)
        c = compute_cluster_centers(r, u.view(1, 2, 1, 1))

        assert torch.equal(c[0], u)
        assert torch.equal(c[1], torch.zeros(2))

    def test_half_assignment(self) -> None:
        a = torch.tensor([0.6, 0.8])
        r = torch.tensor([0.5, 0.5]).view(1, 2, 1, 1)
        c = compute_cluster_centers(r, a.view(1, 2, 1, 1))

        assert torch.allclose(c, a.expand(2, 2), atol=1e-6)

    def test_permutation_equivariance(self) -> None:
        r, v = _random_r(2, 4, 3, 3, seed=1), _random_v(2, 5, 3, 3, seed=2)
        perm = torch.tensor([2, 0, 3, 1])

        assert torch.allclose(
            compute_cluster_centers(r[:, perm], v),
            compute_cluster_centers(r, v)[perm],
            atol=1e-6,
        )

    def test_shape_mismatch_raises(self) -> None:
        with pytest.raises(ConfigurationError):
            compute_cluster_centers(torch.ones(1, 2, 3, 3), torch.ones(1, 4, 2, 2))


class TestLocalDiscriminationLoss:
    """loss_ld のテスト"""

    def test_single_pixel_one_hot(self) -> None:
        r = torch.tensor([1.0, 0.0]).view(1, 2, 1, 1)
        v = torch.tensor([1.0, 0.0]).view(1, 2, 1, 1)
        assert loss_ld(r, v).item() == pytest.approx(-0.5)

    def test_two_orthogonal_pixels_in_different_clusters(self) -> None:
        r = _one_hot(torch.tensor([[[0, 1]]]), 2)
        v = torch.eye(2).view(1, 2, 1, 2)
        assert loss_ld(r, v).item() == pytest.approx(-0.5)

    def test_value_bounds(self) -> None:
        m = 3
        value = loss_ld(_random_r(2, m, 4, 4), _random_v(2, 6, 4, 4)).item()
        assert -1 - 1 / m <= value <= 1 + 1 / m

    def test_single_cluster_raises(self) -> None:
        with pytest.raises(ConfigurationError):
            loss_ld(torch.ones(1, 1, 2, 2), _random_v(1, 3, 2, 2))


class TestEntropyLoss:
    """loss_entropy のテスト"""

    def test_one_hot_is_zero(self) -> None:
        r = _one_hot(torch.randint(0, 4, (2, 3, 3)), 4)
        assert loss_entropy(r).item() == pytest.approx(0.0, abs=1e-6)

    def test_uniform_eight_clusters(self) -> None:
        r = torch.full((1, 8, 2, 2), 1 / 8)
        assert loss_entropy(r).item() == pytest.approx(0.375)
        assert entropy_upper_bound(8) == pytest.approx(0.375)

    def test_single_pixel_half_half(self) -> None:
        r = torch.full((1, 2, 1, 1), 0.5)
        assert loss_entropy(r).item() == pytest.approx(0.5)

    def test_within_bounds(self) -> None:
        value = loss_entropy(_random_r(2, 5, 4, 4)).item()
        assert 0.0 <= value <= entropy_upper_bound(5) + 1e-6


class TestAreaLoss:
    """loss_area のテスト"""

    def test_uniform_is_zero(self) -> None:
        assert loss_area(torch.full((2, 4, 4, 4), 0.25)).item() == 0.0

    def test_one_cluster_everywhere(self) -> None:
        r = _one_hot(torch.zeros(1, 4, 4, dtype=torch.long), 2)
        assert loss_area(r).item() == pytest.approx(1.0)

    def test_strictly_below_upper_bound(self) -> None:
        r = _one_hot(torch.zeros(1, 4, 4, dtype=torch.long), 4)
        assert loss_area(r).item() < 4 * 4 / (4 * 4)


class TestPatchDiscrimination:
    """patch_prob / loss_pd のテスト"""

    def test_single_patch_probability_is_one(self) -> None:
        s = torch.tensor([[1.0, 0.0]])
        assert patch_prob(s, s[0], tau=0.1).tolist() == [1.0]

    def test_two_patch_softmax(self) -> None:
        prob = patch_prob(_orthogonal_patches(), torch.tensor([1.0, 0.0]), tau=1.0)
        assert prob.tolist() == pytest.approx([0.7311, 0.2689], abs=1e-4)

    def test_probabilities_sum_to_one(self) -> None:
        s = _random_v(2, 4, 3, 3)
        prob = patch_prob(s, s[0, :, 0, 0], tau=0.1)
        assert prob.sum().item() == pytest.approx(1.0, abs=1e-6)

    def test_single_aligned_patch_is_zero(self) -> None:
        s = torch.tensor([1.0, 0.0]).view(1, 2, 1, 1)
        assert loss_pd(s, s, tau=0.1).item() == pytest.approx(0.0, abs=1e-6)

    def test_two_orthogonal_patches(self) -> None:
        s = _orthogonal_patches()
        assert loss_pd(s, s, tau=1.0).item() == pytest.approx(1.2530, abs=1e-4)
        assert loss_pd(s, s, tau=1.0).item() == pytest.approx(ORTHOGONAL_PAIR_LOSS)

    def test_nonnegative(self) -> None:
        s, s_hat = _random_v(2, 4, 2, 2, seed=3), _random_v(2, 4, 2, 2, seed=4)
        assert loss_pd(s, s_hat).item() >= 0.0
        assert loss_pd(s, s_hat, symmetric_denominator=True).item() >= 0.0

    def test_rotation_invariance(self) -> None:
        # Given: a common orthogonal rotation of every embedding
        s, s_hat = _random_v(2, 4, 2, 2, seed=5), _random_v(2, 4, 2, 2, seed=6)
        q, _ = torch.linalg.qr(torch.randn(4, 4, generator=torch.Generator().manual_seed(7)))

        def rotate(x: torch.Tensor) -> torch.Tensor:
            return torch.einsum("ij,njhw->nihw", q, x)

        # Then: the loss only depends on inner products
        assert loss_pd(rotate(s), rotate(s_hat)).item() == pytest.approx(
            loss_pd(s, s_hat).item(), rel=1e-4
        )

    def test_misaligned_sets_raise(self) -> None:
        with pytest.raises(ConfigurationError):
            loss_pd(torch.ones(1, 2, 2, 2), torch.ones(1, 2, 1, 1))


class TestMixup:
    """mixup_target / loss_mixup のテスト"""

    def test_identical_parents(self) -> None:
        u = l2_normalize(torch.tensor([1.0, 1.0, 0.0]))
        assert torch.allclose(mixup_target(u, u, 0.3), u, atol=1e-6)

    def test_orthogonal_parents_halfway(self) -> None:
        a, b = torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0])
        expected = torch.tensor([1.0, 1.0]) / math.sqrt(2.0)
        assert torch.allclose(mixup_target(a, b, 0.5), expected, atol=1e-6)

    def test_lambda_near_one_gives_first_parent(self) -> None:
        a, b = torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0])
        assert torch.allclose(mixup_target(a, b, 1.0 - 1e-6), a, atol=1e-5)

    def test_antipodal_parents_give_zero(self) -> None:
        a = torch.tensor([1.0, 0.0])
        assert torch.equal(mixup_target(a, -a, 0.5), torch.zeros(2))

    def test_per_sample_lambda(self) -> None:
        s_a, s_b = _orthogonal_patches(), _orthogonal_patches().flip(0)
        z = mixup_target(s_a, s_b, torch.tensor([1.0, 0.0]))
        assert torch.allclose(z, torch.cat([s_a[:1], s_b[1:]]))

    def test_single_patch_match_is_zero(self) -> None:
        z = torch.tensor([0.0, 1.0]).view(1, 2, 1, 1)
        assert loss_mixup(z, z).item() == pytest.approx(0.0, abs=1e-6)

    def test_two_orthogonal_patches(self) -> None:
        z = _orthogonal_patches()
        assert loss_mixup(z, z, tau=1.0).item() == pytest.approx(1.2530, abs=1e-4)

    def test_degenerate_targets_are_skipped(self) -> None:
        # Given: the second target degenerated to the zero vector
        z = torch.cat([_orthogonal_patches(), torch.zeros(1, 2, 1, 1)])
        s_tilde = torch.cat([_orthogonal_patches(), torch.tensor([1.0, 0.0]).view(1, 2, 1, 1)])

        # Then: only the two valid patches contribute
        assert loss_mixup(z, s_tilde, tau=1.0).item() == pytest.approx(ORTHOGONAL_PAIR_LOSS)

    def test_skipped_patches_log_at_debug(self, caplog) -> None:
        z = torch.cat([_orthogonal_patches(), torch.zeros(1, 2, 1, 1)])
        s_tilde = torch.cat([_orthogonal_patches(), torch.tensor([1.0, 0.0]).view(1, 2, 1, 1)])

        with caplog.at_level(logging.DEBUG, logger="src.services.losses"):
            loss_mixup(z, s_tilde)

        skipped = [r for r in caplog.records if "degenerate" in r.getMessage()]
        assert [r.levelno for r in skipped] == [logging.DEBUG]

    def test_all_degenerate_is_zero(self) -> None:
        z = torch.zeros(1, 2, 1, 1)
        assert loss_mixup(z, torch.tensor([1.0, 0.0]).view(1, 2, 1, 1)).item() == 0.0


class TestAdversarialLosses:
    """loss_bce / loss_discriminator / loss_adversarial のテスト"""

    def test_perfect_prediction(self) -> None:
        assert loss_bce(torch.tensor([1.0]), 1.0).item() == pytest.approx(0.0, abs=1e-6)

    def test_half_probability(self) -> None:
        assert loss_bce(torch.tensor([0.5]), 1.0).item() == pytest.approx(0.6931, abs=1e-4)

    def test_clamp_floor(self) -> None:
        value = loss_bce(torch.tensor([0.0], dtype=torch.float64), 1.0).item()
        assert value == pytest.approx(-math.log(PROB_EPS), rel=1e-6)
        assert value == pytest.approx(16.118, abs=1e-3)

    def test_perfect_discriminator(self) -> None:
        value = loss_discriminator(torch.tensor([1.0, 1.0]), torch.tensor([0.0, 0.0]))
        assert value.item() == pytest.approx(0.0, abs=1e-6)

    def test_fooled_discriminator(self) -> None:
        assert loss_adversarial(torch.tensor([1.0])).item() == pytest.approx(0.0, abs=1e-6)
        assert loss_adversarial(torch.tensor([0.5])).item() == pytest.approx(0.6931, abs=1e-4)


class TestDiceLoss:
    """loss_dice のテスト"""

    def test_perfect_prediction(self) -> None:
        g = torch.zeros(1, 1, 4, 4)
        g[..., 1:3, 1:3] = 1
        assert loss_dice(g.clone(), g).item() == pytest.approx(0.0, abs=1e-7)

    @pytest.mark.parametrize("k", [1, 4, 9])
    def test_empty_prediction(self, k: int) -> None:
        g = torch.zeros(1, 1, 3, 3)
        g.view(-1)[:k] = 1
        assert loss_dice(torch.zeros_like(g), g).item() == pytest.approx(1 - 1 / (k + 1))

    def test_range(self) -> None:
        p = torch.rand(2, 1, 5, 5, generator=torch.Generator().manual_seed(0))
        g = (torch.rand(2, 1, 5, 5, generator=torch.Generator().manual_seed(1)) > 0.5).float()
        assert 0.0 <= loss_dice(p, g).item() < 1.0

    def test_shape_mismatch_raises(self) -> None:
        with pytest.raises(ConfigurationError):
            loss_dice(torch.zeros(1, 1, 2, 2), torch.zeros(1, 1, 3, 3))


class TestStageTotal:
    """stage_total のテスト"""

    def _ones(self, *names: str) -> dict[str, torch.Tensor]:
        return {name: torch.tensor(1.0) for name in names}

    def test_pretrain(self) -> None:
        losses = {"pd": torch.tensor(1.0), "mixup": torch.tensor(2.0)}
        assert stage_total(losses, LossWeights(), "pretrain").item() == pytest.approx(3.0)

    def test_local_discrimination(self) -> None:
        losses = self._ones("pd", "mixup", "ld", "entropy", "area")
        assert stage_total(losses, LossWeights(), "ld").item() == pytest.approx(18.0)

    def test_prior(self) -> None:
        losses = self._ones("pd", "mixup", "ld", "entropy", "area", "adv")
        assert stage_total(losses, LossWeights(), "prior").item() == pytest.approx(20.0)

    def test_extra_components_are_ignored(self) -> None:
        losses = self._ones("pd", "mixup", "ld")
        assert stage_total(losses, LossWeights(), "pretrain").item() == pytest.approx(2.0)

    def test_missing_component_raises(self) -> None:
        with pytest.raises(ConfigurationError, match="adv"):
            stage_total(self._ones("pd", "mixup", "ld", "entropy", "area"), LossWeights(), "prior")

    def test_unknown_stage_raises(self) -> None:
        with pytest.raises(ConfigurationError):
            stage_total(self._ones("pd"), LossWeights(), "finetune")
