"""
合成データ生成とクライアント分割のテスト
"""

import json
from collections import Counter

import numpy as np
import pytest

from src.data.datagen import (
    DomainSpec,
    PartitionMode,
    SampleSet,
    dump_datasets,
    generate,
    leave_one_out,
    min_shard_size,
    partition,
    train_test_counts,
)

SPEC = DomainSpec(n_domains=4, n_classes=5, feature_dim=16, shift=1.5, noise=0.4, samples_per_pair=60)


@pytest.fixture(scope="module")
def data():
    return generate(SPEC, seed=0)


def _sorted_rows(features: np.ndarray) -> np.ndarray:
    return features[np.lexsort(features.T[::-1])]


class TestGenerate:
    def test_same_seed_is_identical(self, data):
        again = generate(SPEC, seed=0)
        for a, b in zip(data.domains, again.domains):
            np.testing.assert_array_equal(a.train.features, b.train.features)
            np.testing.assert_array_equal(a.test.labels, b.test.labels)

    def test_split_sizes_per_pair(self, data):
        for domain in data.domains:
            train_counts = Counter(domain.train.labels.tolist())
            test_counts = Counter(domain.test.labels.tolist())
            assert all(train_counts[j] == 48 for j in range(SPEC.n_classes))
            assert all(test_counts[j] == 12 for j in range(SPEC.n_classes))
            assert np.all(domain.train.domains == domain.domain_id)

    def test_zero_noise_collapses_to_means(self):
        spec = DomainSpec(n_domains=2, n_classes=2, feature_dim=4, noise=0.0, samples_per_pair=5)
        generated = generate(spec, seed=1)
        for domain in generated.domains:
            for x, y in zip(domain.train.features, domain.train.labels):
                np.testing.assert_allclose(x, generated.pair_mean(int(y), domain.domain_id), atol=1e-15)

    def test_zero_shift_makes_domains_match(self):
        spec = DomainSpec(n_domains=2, n_classes=3, feature_dim=8, shift=0.0, noise=0.4, samples_per_pair=60)
        generated = generate(spec, seed=2)
        n_train = 48
        bound = 5.0 * spec.noise * np.sqrt(2.0 / n_train)
        a, b = generated.domains
        for j in range(spec.n_classes):
            mean_a = a.train.features[a.train.labels == j].mean(axis=0)
            mean_b = b.train.features[b.train.labels == j].mean(axis=0)
            assert np.max(np.abs(mean_a - mean_b)) < bound

    def test_prototypes_are_unit_norm(self, data):
        np.testing.assert_allclose(np.linalg.norm(data.prototypes, axis=1), 1.0, atol=1e-14)
        np.testing.assert_allclose(np.linalg.norm(data.shifts, axis=1), 1.0, atol=1e-14)

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            generate(DomainSpec(samples_per_pair=1), seed=0)
        with pytest.raises(ValueError):
            generate(DomainSpec(noise=-0.1), seed=0)


class TestLeaveOneOut:
    def test_sources_exclude_target(self, data):
        sources, target_test = leave_one_out(data.domains, 2)
        assert [d.domain_id for d in sources] == [0, 1, 3]
        assert np.all(target_test.domains == 2)
        assert len(target_test) == 12 * SPEC.n_classes

    def test_unknown_target(self, data):
        with pytest.raises(ValueError):
            leave_one_out(data.domains, 9)

    def test_needs_two_domains(self, data):
        with pytest.raises(ValueError):
            leave_one_out(data.domains[:1], 0)


class TestPartition:
    def test_one_domain_counts_and_coverage(self, data):
        sources, _ = leave_one_out(data.domains, 3)
        shards = partition(sources, 20, PartitionMode.ONE_DOMAIN, seed=0)
        per_domain = Counter(shard.source_domains[0] for shard in shards)
        assert sorted(per_domain.values()) == [6, 7, 7]
        assert all(len(shard.source_domains) == 1 for shard in shards)

        union = SampleSet.concat([shard.samples for shard in shards])
        pooled = SampleSet.concat([src.train for src in sources])
        np.testing.assert_array_equal(_sorted_rows(union.features), _sorted_rows(pooled.features))

    def test_one_domain_shards_are_class_balanced(self, data):
        sources, _ = leave_one_out(data.domains, 0)
        shards = partition(sources, 6, PartitionMode.ONE_DOMAIN, seed=0)
        for shard in shards:
            counts = Counter(shard.samples.labels.tolist())
            assert set(counts.values()) == {24}

    def test_mixed_mode_pools_sources(self, data):
        sources, _ = leave_one_out(data.domains, 0)
        shards = partition(sources, 4, PartitionMode.MIXED, seed=0)
        sizes = [len(shard) for shard in shards]
        assert sum(sizes) == sum(len(src.train) for src in sources)
        assert max(sizes) - min(sizes) <= SPEC.n_classes
        assert any(len(shard.source_domains) > 1 for shard in shards)

    def test_too_few_clients(self, data):
        sources, _ = leave_one_out(data.domains, 0)
        with pytest.raises(ValueError):
            partition(sources, 2, PartitionMode.ONE_DOMAIN, seed=0)

    def test_partition_is_deterministic(self, data):
        sources, _ = leave_one_out(data.domains, 1)
        a = partition(sources, 5, PartitionMode.ONE_DOMAIN, seed=4)
        b = partition(sources, 5, PartitionMode.ONE_DOMAIN, seed=4)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.samples.features, y.samples.features)

    @pytest.mark.parametrize(
        "samples_per_pair, n_clients, mode",
        [
            (3, 20, PartitionMode.ONE_DOMAIN),
            (10, 20, PartitionMode.ONE_DOMAIN),
            (2, 9, PartitionMode.MIXED),
            (10, 9, PartitionMode.MIXED),
        ],
    )
    def test_min_shard_size_matches_partition(self, samples_per_pair, n_clients, mode):
        spec = DomainSpec(n_domains=4, n_classes=2, feature_dim=3, samples_per_pair=samples_per_pair)
        sources, _ = leave_one_out(generate(spec, seed=1).domains, 0)
        shards = partition(sources, n_clients, mode, seed=0)
        smallest = min(len(shard) for shard in shards)
        assert smallest == spec.n_classes * min_shard_size(samples_per_pair, 3, n_clients, mode)


class TestSampleSet:
    def test_empty_set(self):
        empty = SampleSet.empty(5)
        assert len(empty) == 0
        assert empty.features.shape == (0, 5)
        assert len(empty.subset([])) == 0

    def test_flat_features_are_reshaped(self):
        samples = SampleSet(np.arange(6.0), [0, 1, 2], [0, 0, 0])
        assert samples.features.shape == (3, 2)
        assert SampleSet(np.array([]), [], []).features.shape == (0, 0)

    def test_train_test_counts(self):
        assert train_test_counts(60) == (48, 12)
        assert train_test_counts(3) == (2, 1)
        assert train_test_counts(2) == (1, 1)


def test_dump_datasets(data, tmp_path):
    path = tmp_path / "datasets.json"
    dump_datasets(path, data)
    payload = json.loads(path.read_text(encoding="utf-8"))
    assert payload["spec"]["n_domains"] == 4
    assert len(payload["domains"]) == 4
    assert len(payload["domains"][0]["test"]["y"]) == 60
