"""
協調アンサンブル推論と評価のテスト
"""

import numpy as np
import pytest

from src.data.datagen import SampleSet
from src.inference.ensemble import (
    EnsembleCache,
    PredictionMode,
    ensemble_predict,
    ensemble_weights,
    evaluate,
    evaluate_modes,
    predict_ablation,
)
from src.prompting.objectives import class_probs
from tests.conftest import TINY_CLASSES, TINY_DIMS, make_bank, make_batch


@pytest.fixture
def cache(tiny_bank, tiny_encoders):
    return EnsembleCache.build(tiny_bank, tiny_encoders)


def _manual_cache(encoders, global_embeddings, domain_embeddings):
    domain_embeddings = np.asarray(domain_embeddings, dtype=np.float64)
    return EnsembleCache(
        encoders,
        np.asarray(global_embeddings, dtype=np.float64),
        domain_embeddings,
        tuple(range(domain_embeddings.shape[0])),
    )


class TestEnsembleWeights:
    def test_weights_form_a_distribution(self, cache):
        rng = np.random.default_rng(0)
        for _ in range(50):
            weights = ensemble_weights(rng.normal(size=TINY_DIMS.embed_dim), cache)
            assert weights.domain.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(weights.domain >= 0.0)
            assert weights.global_weight == 1.0

    def test_single_domain_gets_full_weight(self, tiny_encoders):
        bank = make_bank(tiny_encoders, domain_ids=(1,))
        single = EnsembleCache.build(bank, tiny_encoders)
        weights = ensemble_weights(np.ones(TINY_DIMS.embed_dim), single)
        np.testing.assert_array_equal(weights.domain, [1.0])

    def test_equal_scores_split_evenly(self, tiny_encoders):
        rng = np.random.default_rng(1)
        texts = rng.normal(size=(TINY_CLASSES, TINY_DIMS.embed_dim))
        manual = _manual_cache(tiny_encoders, texts, [texts, texts])
        weights = ensemble_weights(rng.normal(size=TINY_DIMS.embed_dim), manual)
        np.testing.assert_allclose(weights.domain, [0.5, 0.5], atol=1e-15)

    def test_opposite_embeddings_fall_back_to_uniform(self, tiny_encoders):
        image = np.zeros(TINY_DIMS.embed_dim)
        image[0] = 1.0
        opposite = np.tile(-2.0 * image, (TINY_CLASSES, 1))
        manual = _manual_cache(tiny_encoders, opposite, [opposite, opposite, opposite])
        weights = ensemble_weights(image, manual)
        assert weights.degenerate and weights.shifted
        np.testing.assert_allclose(weights.domain, np.full(3, 1.0 / 3.0), atol=1e-15)

    def test_scores_are_shifted_when_non_positive(self, tiny_encoders):
        image = np.zeros(TINY_DIMS.embed_dim)
        image[0] = 1.0
        positive = np.tile(image, (TINY_CLASSES, 1))
        negative = -positive
        manual = _manual_cache(tiny_encoders, positive, [positive, negative])
        weights = ensemble_weights(image, manual)
        assert weights.shifted and not weights.degenerate
        np.testing.assert_allclose(weights.domain, [1.0, 0.0], atol=1e-15)
        assert weights.top_domain == 0


class TestPrediction:
    def test_single_domain_combines_domain_and_global(self, tiny_encoders, tiny_batch):
        bank = make_bank(tiny_encoders, domain_ids=(0,))
        single = EnsembleCache.build(bank, tiny_encoders)
        x = tiny_batch.features[0]
        probs, cls = ensemble_predict(x, single)
        image = tiny_encoders.encode_image(x)
        expected = class_probs(image, single.domain_embeddings[0] + single.global_embeddings, tiny_encoders.tau)
        np.testing.assert_allclose(probs, expected, atol=1e-12)
        assert cls == int(np.argmax(expected))

    def test_domain_equal_to_global_matches_g_only(self, tiny_encoders):
        rng = np.random.default_rng(3)
        texts = rng.normal(size=(TINY_CLASSES, TINY_DIMS.embed_dim))
        manual = _manual_cache(tiny_encoders, texts, [texts, texts, texts])
        batch = make_batch(n=30, seed=5)
        for x in batch.features:
            assert ensemble_predict(x, manual)[1] == predict_ablation(x, manual, PredictionMode.G_ONLY)

    def test_prediction_is_invariant_to_feature_scale(self, cache):
        batch = make_batch(n=1000, seed=6)
        for x in batch.features:
            assert ensemble_predict(2.5 * x, cache)[1] == ensemble_predict(x, cache)[1]

    def test_ablation_ensemble_matches_ensemble_predict(self, cache, tiny_batch):
        for x in tiny_batch.features:
            assert predict_ablation(x, cache, PredictionMode.ENSEMBLE) == ensemble_predict(x, cache)[1]

    def test_top_domain_with_single_domain(self, tiny_encoders, tiny_batch):
        bank = make_bank(tiny_encoders, domain_ids=(2,))
        single = EnsembleCache.build(bank, tiny_encoders)
        for x in tiny_batch.features:
            image = tiny_encoders.encode_image(x)
            expected = int(np.argmax(class_probs(image, single.domain_embeddings[0], tiny_encoders.tau)))
            assert predict_ablation(x, single, PredictionMode.TOP_DOMAIN_ONLY) == expected

    def test_g_only_ignores_domain_prompts(self, tiny_encoders, tiny_bank, tiny_batch):
        a = EnsembleCache.build(tiny_bank, tiny_encoders)
        other = make_bank(tiny_encoders, seed=99).with_prompts(g_prompt=tiny_bank.g_prompt)
        b = EnsembleCache.build(other, tiny_encoders)
        for x in tiny_batch.features:
            assert predict_ablation(x, a, PredictionMode.G_ONLY) == predict_ablation(x, b, PredictionMode.G_ONLY)

    def test_cache_is_read_only(self, cache):
        with pytest.raises(ValueError):
            cache.global_embeddings[0, 0] = 1.0


class TestEvaluation:
    def test_oracle_and_constant_predictors(self):
        n = 12
        samples = SampleSet(np.arange(n, dtype=np.float64).reshape(n, 1) % 3, np.arange(n) % 3, np.zeros(n))
        assert evaluate(samples, lambda x: int(x[0])) == 1.0
        assert evaluate(samples, lambda x: 0) == pytest.approx(1.0 / 3.0)

    def test_empty_set(self):
        with pytest.raises(ValueError):
            evaluate(SampleSet.empty(2), lambda x: 0)

    def test_evaluate_modes(self, cache, tiny_batch):
        reports = evaluate_modes(tiny_batch, cache, target_domain=1, primary_mode=PredictionMode.TOP_DOMAIN_ONLY)
        assert [r.mode for r in reports] == ["ensemble", "g_only", "top_domain_only"]
        assert [r.primary for r in reports] == [False, False, True]
        for report in reports:
            assert 0.0 <= report.accuracy <= 1.0
            assert report.n_samples == len(tiny_batch)
            assert sum(report.mean_weights) == pytest.approx(1.0, abs=1e-12)
            assert report.to_dict()["split"] == "target"

        expected = evaluate(tiny_batch, lambda x: ensemble_predict(x, cache)[1])
        assert reports[0].accuracy == expected

    def test_evaluate_selected_modes(self, cache, tiny_batch):
        reports = evaluate_modes(tiny_batch, cache, 0, [PredictionMode.G_ONLY], split="seen")
        assert len(reports) == 1 and reports[0].split == "seen"
