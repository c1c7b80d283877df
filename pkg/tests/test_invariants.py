"""Invariants of embeddings, cluster maps, centres and patch sets over random draws."""

import pytest
import torch

from src.models.network_config import BackboneConfig
from src.services.core_math import adaptive_average_pool, flatten_patches
from src.services.losses import compute_cluster_centers, patch_prob
from src.services.networks import LocalDiscriminationNet

DRAWS = 100
TOLERANCE = 1e-5
TINY = BackboneConfig(width_scale=0.0625, embedding_dim=8, cluster_count=4)


@pytest.fixture(scope="module")
def draws() -> list[tuple[torch.Tensor, torch.Tensor]]:
    """Outputs of freshly initialized networks on random inputs."""
    torch.set_num_threads(1)
    outputs = []
    for seed in range(DRAWS):
        torch.manual_seed(seed)
        model = LocalDiscriminationNet(TINY)
        with torch.no_grad():
            out = model(torch.rand(2, 3, 32, 32))
        outputs.append((out.embedding, out.clustering))
    return outputs


class TestRandomDrawInvariants:
    """ランダムな重みと入力に対する不変条件のテスト"""

    def test_embeddings_are_unit_vectors(self, draws) -> None:
        for v, _ in draws:
            norms = v.norm(dim=1)
            assert float((norms - 1).abs().max()) < TOLERANCE

    def test_cluster_maps_are_distributions(self, draws) -> None:
        for _, r in draws:
            assert float(r.min()) >= 0.0
            assert float((r.sum(dim=1) - 1).abs().max()) < TOLERANCE

    def test_centres_are_unit_vectors(self, draws) -> None:
        for v, r in draws:
            c = compute_cluster_centers(r, v)
            assert c.shape == (4, 8)
            assert float((c.norm(dim=1) - 1).abs().max()) < TOLERANCE

    def test_patch_sets_are_unit_vectors(self, draws) -> None:
        for v, _ in draws:
            s = adaptive_average_pool(v, 4)
            assert s.shape == (2, 8, 4, 4)
            assert float((s.norm(dim=1) - 1).abs().max()) < TOLERANCE

    def test_patch_probabilities_sum_to_one(self, draws) -> None:
        for v, _ in draws[:20]:
            keys = flatten_patches(adaptive_average_pool(v, 4))
            for query in keys[:4]:
                p = patch_prob(keys, query, tau=0.1)
                assert abs(float(p.sum()) - 1.0) < 1e-6
