"""
協調アンサンブル推論
ドメインごとの類似度から重みを求め、D-PromptとG-Promptのテキスト埋め込みを合成して分類します。
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.data.datagen import SampleSet
from src.errors import DegenerateInputError
from src.logger import logger
from src.prompting.encoders import FrozenEncoders
from src.prompting.objectives import class_probs
from src.prompting.prompts import PromptBank, PromptKind, assemble_text_input

GLOBAL_WEIGHT = 1.0


class PredictionMode(str, Enum):
    """推論モード"""

    ENSEMBLE = "ensemble"
    G_ONLY = "g_only"
    TOP_DOMAIN_ONLY = "top_domain_only"


@dataclass(frozen=True)
class EnsembleCache:
    """推論用に事前計算したテキスト埋め込み"""

    encoders: FrozenEncoders
    global_embeddings: np.ndarray  # Z^G (C, d)
    domain_embeddings: np.ndarray  # Z^m (M, C, d)
    domain_ids: Tuple[int, ...]

    @classmethod
    def build(cls, bank: PromptBank, encoders: FrozenEncoders) -> "EnsembleCache":
        """プロンプトバンクからキャッシュを作成（プロンプトが変わったら作り直す）"""
        n_classes = bank.dims.n_classes
        vocab = encoders.vocab
        global_embeddings = np.array(
            [
                encoders.encode_text(assemble_text_input(bank, vocab, PromptKind.GLOBAL, j))
                for j in range(n_classes)
            ]
        )
        domain_embeddings = np.array(
            [
                [
                    encoders.encode_text(assemble_text_input(bank, vocab, PromptKind.DOMAIN, j, m))
                    for j in range(n_classes)
                ]
                for m in range(len(bank.d_prompts))
            ]
        )
        if not (np.all(np.isfinite(global_embeddings)) and np.all(np.isfinite(domain_embeddings))):
            raise ValueError("テキスト埋め込みに有限でない値があります")
        global_embeddings.setflags(write=False)
        domain_embeddings.setflags(write=False)
        return cls(encoders, global_embeddings, domain_embeddings, tuple(bank.domain_ids))

    @property
    def n_domains(self) -> int:
        return int(self.domain_embeddings.shape[0])


@dataclass
class EnsembleWeights:
    """ドメイン重み w_m と G-Prompt重み w_g"""

    domain: np.ndarray
    global_weight: float = GLOBAL_WEIGHT
    shifted: bool = False
    degenerate: bool = False

    @property
    def top_domain(self) -> int:
        return int(np.argmax(self.domain))


def _cosines(image: np.ndarray, texts: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(image)
    text_norms = np.linalg.norm(texts, axis=-1)
    if norm == 0.0 or np.any(text_norms == 0.0):
        raise DegenerateInputError("ノルムがゼロの埋め込みにはコサイン類似度を定義できません")
    return np.clip((texts @ image) / (text_norms * norm), -1.0, 1.0)


def ensemble_weights(image: np.ndarray, cache: EnsembleCache) -> EnsembleWeights:
    """
    w_m = score_m / Σ_i score_i（score_m = max_j sim(I, Z^m_j)）、w_g = 1

    いずれかのスコアが0以下の場合は全スコアに +1 してから正規化します。
    """
    scores = _cosines(np.asarray(image, dtype=np.float64), cache.domain_embeddings).max(axis=1)
    shifted = bool(np.any(scores <= 0.0))
    if shifted:
        scores = scores + 1.0
    total = float(scores.sum())
    if total <= 0.0:
        logger.warning("アンサンブル重みが退化しています。一様重みを使います")
        return EnsembleWeights(
            domain=np.full(cache.n_domains, 1.0 / cache.n_domains), shifted=shifted, degenerate=True
        )
    return EnsembleWeights(domain=scores / total, shifted=shifted)


def _classify(image: np.ndarray, texts: np.ndarray, tau: float) -> Tuple[np.ndarray, int]:
    probs = class_probs(image, texts, tau)
    return probs, int(np.argmax(probs))


def _combined_embeddings(cache: EnsembleCache, weights: EnsembleWeights) -> np.ndarray:
    """Z_j = Σ_m w_m Z^m_j + w_g Z^G_j"""
    combined = np.tensordot(weights.domain, cache.domain_embeddings, axes=1)
    return combined + weights.global_weight * cache.global_embeddings


def _mode_embeddings(
    cache: EnsembleCache, weights: EnsembleWeights, mode: PredictionMode
) -> np.ndarray:
    mode = PredictionMode(mode)
    if mode == PredictionMode.G_ONLY:
        return cache.global_embeddings
    if mode == PredictionMode.TOP_DOMAIN_ONLY:
        return cache.domain_embeddings[weights.top_domain]
    return _combined_embeddings(cache, weights)


def ensemble_predict(
    x: np.ndarray, cache: EnsembleCache, tau: Optional[float] = None
) -> Tuple[np.ndarray, int]:
    """
    協調アンサンブルでクラス確率と予測クラスを返します。

    Args:
        x: 生の特徴ベクトル
        cache: 埋め込みキャッシュ
        tau: 温度（省略時はエンコーダーの τ）
    """
    tau = cache.encoders.tau if tau is None else tau
    image = cache.encoders.encode_image(x)
    weights = ensemble_weights(image, cache)
    return _classify(image, _combined_embeddings(cache, weights), tau)


def predict_ablation(
    x: np.ndarray, cache: EnsembleCache, mode: PredictionMode, tau: Optional[float] = None
) -> int:
    """推論モードを指定して予測クラスを返します"""
    tau = cache.encoders.tau if tau is None else tau
    image = cache.encoders.encode_image(x)
    weights = ensemble_weights(image, cache)
    return _classify(image, _mode_embeddings(cache, weights, mode), tau)[1]


def evaluate(samples: SampleSet, predictor: Callable[[np.ndarray], int]) -> float:
    """
    top-1 正解率

    Args:
        samples: 評価データ
        predictor: 特徴ベクトルからクラスIDを返す関数
    """
    if len(samples) == 0:
        raise ValueError("評価データが空です")
    predictions = np.array([predictor(x) for x in samples.features], dtype=np.int64)
    return float(np.mean(predictions == samples.labels))


@dataclass
class EvaluationReport:
    """評価結果の記録"""

    target_domain: int
    mode: str
    accuracy: float
    n_samples: int
    mean_weights: List[float] = field(default_factory=list)
    split: str = "target"
    primary: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "target_domain": self.target_domain,
            "split": self.split,
            "mode": self.mode,
            "primary": self.primary,
            "accuracy": self.accuracy,
            "n_samples": self.n_samples,
            "mean_weights": self.mean_weights,
        }


def evaluate_modes(
    samples: SampleSet,
    cache: EnsembleCache,
    target_domain: int,
    modes: Optional[Sequence[PredictionMode]] = None,
    split: str = "target",
    primary_mode: PredictionMode = PredictionMode.ENSEMBLE,
    tau: Optional[float] = None,
) -> List[EvaluationReport]:
    """
    各推論モードで評価します（重みはサンプルごとに1回だけ計算）。

    Returns:
        モードごとの評価結果
    """
    if len(samples) == 0:
        raise ValueError("評価データが空です")
    tau = cache.encoders.tau if tau is None else tau
    modes = [PredictionMode(m) for m in (modes or list(PredictionMode))]
    images = cache.encoders.encode_images(samples.features)

    correct = {mode: 0 for mode in modes}
    weight_sum = np.zeros(cache.n_domains)
    for image, label in zip(images, samples.labels):
        weights = ensemble_weights(image, cache)
        weight_sum += weights.domain
        for mode in modes:
            texts = _mode_embeddings(cache, weights, mode)
            correct[mode] += int(_classify(image, texts, tau)[1] == int(label))

    n = len(samples)
    mean_weights = (weight_sum / n).tolist()
    reports = [
        EvaluationReport(
            target_domain=target_domain,
            mode=mode.value,
            accuracy=correct[mode] / n,
            n_samples=n,
            mean_weights=mean_weights,
            split=split,
            primary=mode == PredictionMode(primary_mode),
        )
        for mode in modes
    ]
    for report in reports:
        logger.info(
            f"評価 [{split}] target={target_domain} mode={report.mode}: "
            f"accuracy={report.accuracy:.4f} (n={n})"
        )
    return reports
