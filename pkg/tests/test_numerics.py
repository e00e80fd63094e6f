"""
数値カーネル・特殊関数・Adam・乱数ストリームのテスト
"""

import math

import numpy as np
import pytest

from src.errors import ConfigError, DegenerateInputError, DomainError, NonFiniteError
from src.numerics import (
    PROBABILITY_FLOOR,
    AdamState,
    ClampCounter,
    Rng,
    adam_step,
    beta_pdf,
    cosine_sim,
    cosine_sim_grad,
    cross_entropy,
    finite_diff_check,
    kl_div,
    log_gamma,
    mse,
    softmax_temp,
)


class TestCosine:
    def test_identical_and_orthogonal(self):
        a = np.array([1.0, 2.0, -0.5])
        assert cosine_sim(a, a) == pytest.approx(1.0, abs=1e-15)
        assert cosine_sim(np.array([1.0, 0.0]), np.array([0.0, 3.0])) == 0.0

    def test_scale_invariant(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=5), rng.normal(size=5)
        assert cosine_sim(3.5 * a, 0.2 * b) == pytest.approx(cosine_sim(a, b), abs=1e-14)

    def test_zero_norm_raises(self):
        with pytest.raises(DegenerateInputError):
            cosine_sim(np.zeros(3), np.ones(3))
        with pytest.raises(DegenerateInputError):
            cosine_sim_grad(np.ones(3), np.zeros(3))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=6), rng.normal(size=6)
        _, grad_a, grad_b = cosine_sim_grad(a, b)
        assert finite_diff_check(lambda p: cosine_sim(p, b), a, grad_a) < 1e-6
        assert finite_diff_check(lambda p: cosine_sim(a, p), b, grad_b) < 1e-6


class TestSoftmaxAndLosses:
    def test_softmax_sums_to_one(self):
        p = softmax_temp(np.array([0.3, -1.2, 2.0, 0.0]), 0.07)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(p >= 0.0)

    def test_softmax_large_scores_are_stable(self):
        p = softmax_temp(np.array([1000.0, 999.0]), 0.01)
        assert np.all(np.isfinite(p))
        assert p[0] > p[1]

    @pytest.mark.parametrize("tau", [0.0, -1.0])
    def test_softmax_rejects_non_positive_tau(self, tau):
        with pytest.raises(ConfigError) as excinfo:
            softmax_temp(np.array([1.0, 2.0]), tau)
        assert excinfo.value.field == "tau"

    def test_softmax_rejects_nan(self):
        with pytest.raises(NonFiniteError):
            softmax_temp(np.array([np.nan, 1.0]), 1.0)

    def test_cross_entropy_clamps_and_counts(self):
        counter = ClampCounter()
        value = cross_entropy(np.array([0.0, 1.0]), 0, counter)
        assert value == pytest.approx(-math.log(PROBABILITY_FLOOR))
        assert counter.count == 1
        assert cross_entropy(np.array([0.25, 0.75]), 1, counter) == pytest.approx(-math.log(0.75))
        assert counter.count == 1

    def test_kl_divergence(self):
        p = np.array([0.2, 0.3, 0.5])
        assert kl_div(p, p) == 0.0
        q = np.array([0.4, 0.4, 0.2])
        expected = float(np.sum(p * np.log(p / q)))
        assert kl_div(p, q) == pytest.approx(expected, abs=1e-14)
        # p の0要素は寄与しない
        assert kl_div(np.array([0.0, 1.0]), np.array([0.5, 0.5])) == pytest.approx(math.log(2.0))

    def test_mse(self):
        assert mse(np.array([1.0, 2.0]), np.array([1.0, 4.0])) == pytest.approx(2.0)


class TestSpecialFunctions:
    @pytest.mark.parametrize("x", [0.05, 0.2, 0.5, 1.0, 1.7, 3.0, 10.5, 60.0])
    def test_log_gamma_matches_math(self, x):
        assert log_gamma(x) == pytest.approx(math.lgamma(x), abs=1e-10)

    def test_log_gamma_domain(self):
        with pytest.raises(DomainError):
            log_gamma(0.0)

    def test_uniform_density_when_beta_is_one(self):
        for x in (0.01, 0.3, 0.5, 0.99):
            assert beta_pdf(x, 1.0) == pytest.approx(1.0, abs=1e-12)

    def test_symmetry(self):
        for x in (0.1, 0.37):
            assert beta_pdf(x, 0.2) == pytest.approx(beta_pdf(1.0 - x, 0.2), rel=1e-12)

    def test_reference_value_at_midpoint(self):
        beta = 0.2
        expected = math.gamma(2 * beta) / math.gamma(beta) ** 2 * 0.25 ** (beta - 1.0)
        assert beta_pdf(0.5, beta) == pytest.approx(expected, rel=1e-10)
        assert beta_pdf(0.5, beta) == pytest.approx(0.31905, abs=1e-4)

    @pytest.mark.parametrize("beta", [1.0, 2.0])
    def test_integrates_to_one(self, beta):
        n = 2000
        xs = (np.arange(n) + 0.5) / n
        total = sum(beta_pdf(float(x), beta) for x in xs) / n
        assert total == pytest.approx(1.0, abs=1e-3)

    def test_integrates_to_one_with_endpoint_singularities(self):
        # x = s^(1/β) で半区間 (0, 1/2) の特異性を除き、対称性で2倍する
        beta = 0.2
        n = 2000
        upper = 0.5**beta
        s = (np.arange(n) + 0.5) / n * upper
        total = 0.0
        for si in s:
            x = float(si) ** (1.0 / beta)
            total += beta_pdf(x, beta) * (1.0 / beta) * float(si) ** (1.0 / beta - 1.0)
        total *= 2.0 * upper / n
        assert total == pytest.approx(1.0, abs=1e-3)

    def test_beta_pdf_domain_errors(self):
        with pytest.raises(DomainError):
            beta_pdf(0.0, 0.2)
        with pytest.raises(DomainError):
            beta_pdf(1.0, 0.2)
        with pytest.raises(ConfigError):
            beta_pdf(0.5, 0.0)


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        params = np.array([0.5, -0.2, 1.0])
        grads = np.array([2.0, -0.7, 0.3])
        state = AdamState.zeros_like(params, lr=1e-2)
        updated = adam_step(state, params, grads)
        np.testing.assert_allclose(updated, params - 1e-2 * np.sign(grads), atol=1e-9)
        assert state.step == 1
        # 入力は変更しない
        np.testing.assert_array_equal(params, [0.5, -0.2, 1.0])

    def test_state_accumulates(self):
        params = np.zeros(2)
        state = AdamState.zeros_like(params)
        for _ in range(3):
            params = adam_step(state, params, np.ones(2))
        assert state.step == 3
        assert np.all(params < 0.0)

    def test_non_finite_gradient_names_block(self):
        state = AdamState.zeros_like(np.zeros(2), name="D/1")
        with pytest.raises(NonFiniteError, match="D/1"):
            adam_step(state, np.zeros(2), np.array([np.inf, 0.0]))


class TestRng:
    def test_same_path_same_draws(self):
        a = Rng(5).child("x").normal(4)
        b = Rng(5).child("x").normal(4)
        np.testing.assert_array_equal(a, b)

    def test_child_ignores_parent_consumption(self):
        parent = Rng(5)
        fresh = parent.child("y").normal(3)
        parent.normal(100)
        np.testing.assert_array_equal(parent.child("y").normal(3), fresh)

    def test_different_labels_differ(self):
        assert not np.array_equal(Rng(5).child("a").normal(3), Rng(5).child("b").normal(3))

    def test_choice_without_replacement(self):
        picked = Rng(1).choice_without_replacement(10, 4)
        assert len(set(picked)) == 4
        assert all(0 <= i < 10 for i in picked)

    def test_unit_vector(self):
        assert np.linalg.norm(Rng(2).unit_vector(7)) == pytest.approx(1.0, abs=1e-14)

    def test_negative_seed_rejected(self):
        with pytest.raises(ValueError):
            Rng(-1)


class TestFiniteDiffCheck:
    def test_exact_gradient_passes(self):
        params = np.array([[0.3, -1.0], [2.0, 0.5]])
        assert finite_diff_check(lambda p: float(np.sum(p**2)), params, 2.0 * params) < 1e-8

    def test_wrong_gradient_fails(self):
        params = np.array([0.3, -1.0])
        assert finite_diff_check(lambda p: float(np.sum(p**2)), params, 2.2 * params) > 1e-2

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            finite_diff_check(lambda p: 0.0, np.zeros(2), np.zeros(3))

    def test_denominator_floor(self):
        params = np.zeros(1)
        assert finite_diff_check(lambda p: 0.0, params, np.full(1, 5e-9)) == pytest.approx(0.5)
        assert finite_diff_check(lambda p: 0.0, params, np.full(1, 2e-8)) == pytest.approx(1.0)
        assert finite_diff_check(lambda p: 0.0, params, np.full(1, 2e-9), scale_floor=1e-6) == pytest.approx(2e-3)
        assert finite_diff_check(lambda p: 0.0, params, np.zeros(1)) == 0.0
