"""
共通フィクスチャ（小さな次元・データ・設定）
"""

from dataclasses import replace

import numpy as np
import pytest

from src.config.experiment import ExperimentConfig
from src.data.datagen import SampleSet
from src.numerics.rng import Rng
from src.prompting.encoders import EncoderDims, FrozenEncoders
from src.prompting.prompts import PromptDims, init_prompt_bank

TINY_DIMS = EncoderDims(embed_dim=8, hidden_dim=12, feature_dim=6, prompt_length=3, tau=0.5)
TINY_CLASSES = 3
TINY_DOMAINS = 3


@pytest.fixture
def tiny_encoders() -> FrozenEncoders:
    return FrozenEncoders.create(TINY_DIMS, TINY_CLASSES, TINY_DOMAINS, seed=7)


def make_bank(encoders: FrozenEncoders, domain_ids=(0, 1, 2), seed: int = 7, scale: float = 0.3):
    """初期化済みバンクの学習可能トークンを大きめの乱数で置き換えたもの"""
    dims = PromptDims(
        encoders.dims.prompt_length, encoders.dims.embed_dim, len(domain_ids), TINY_CLASSES
    )
    bank = init_prompt_bank(dims, list(domain_ids), encoders.vocab, seed)
    rng = Rng(seed).child("test-bank")
    shape = bank.g_prompt.shape
    return bank.with_prompts(
        g_prompt=rng.child("g").normal(shape, scale=scale),
        d_tokens=[rng.child(f"d/{m}").normal(shape, scale=scale) for m in domain_ids],
    )


@pytest.fixture
def tiny_bank(tiny_encoders):
    return make_bank(tiny_encoders)


def make_batch(n: int = 6, seed: int = 3, n_domains: int = TINY_DOMAINS) -> SampleSet:
    rng = Rng(seed).child("test-batch")
    return SampleSet(
        rng.child("x").normal((n, TINY_DIMS.feature_dim)),
        np.arange(n) % TINY_CLASSES,
        rng.child("d").integers(0, n_domains, size=n),
    )


@pytest.fixture
def tiny_batch() -> SampleSet:
    return make_batch()


@pytest.fixture
def tiny_config() -> ExperimentConfig:
    return ExperimentConfig(
        seed=3,
        embed_dim=8,
        hidden_dim=12,
        feature_dim=6,
        prompt_length=2,
        tau=0.5,
        n_domains=3,
        n_classes=3,
        samples_per_pair=10,
        n_clients=4,
        clients_per_round=2,
        rounds=3,
        batch_size=4,
        lr=1e-2,
        target=0,
    )


@pytest.fixture
def tiny_sweep_config(tiny_config) -> ExperimentConfig:
    return replace(tiny_config, target="sweep", rounds=2)
