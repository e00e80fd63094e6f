"""
数値カーネル
コサイン類似度、温度付きsoftmax、損失関数などの基本演算（すべて64ビット浮動小数点）
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from src.errors import ConfigError, DegenerateInputError, NonFiniteError, ShapeError
from src.logger import logger

# log の前に適用する確率の下限
PROBABILITY_FLOOR = 1e-30


@dataclass
class ClampCounter:
    """確率クランプ発生回数のカウンター"""

    count: int = 0
    warned: bool = False

    def record(self, where: str) -> None:
        """クランプを記録"""
        self.count += 1
        if not self.warned:
            logger.warning(f"確率を下限 {PROBABILITY_FLOOR} にクランプしました: {where}")
            self.warned = True

    def reset(self) -> None:
        self.count = 0
        self.warned = False


# カウンター未指定時の記録先
default_clamp_counter = ClampCounter()


def as_vector(values, name: str = "vector") -> np.ndarray:
    """float64の1次元配列に変換し、有限性を確認"""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} は1次元である必要があります: shape={arr.shape}")
    ensure_finite(arr, name)
    return arr


def ensure_finite(arr: np.ndarray, name: str) -> None:
    """NaN/Infを含む場合は NonFiniteError"""
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} に有限でない値が含まれています")


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: 形状が一致しません {a.shape} != {b.shape}")


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """
    コサイン類似度 a·b / (‖a‖‖b‖)

    Raises:
        DegenerateInputError: どちらかのノルムがゼロの場合
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b, "cosine_sim")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("ノルムがゼロのベクトルにはコサイン類似度を定義できません")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def cosine_sim_grad(
    a: np.ndarray, b: np.ndarray
) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    コサイン類似度とその勾配

    Returns:
        (類似度, a に関する勾配, b に関する勾配)
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b, "cosine_sim_grad")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("ノルムがゼロのベクトルにはコサイン類似度を定義できません")
    sim = float(np.dot(a, b) / (na * nb))
    grad_a = b / (na * nb) - sim * a / (na * na)
    grad_b = a / (na * nb) - sim * b / (nb * nb)
    return sim, grad_a, grad_b


def softmax_temp(scores: np.ndarray, tau: float) -> np.ndarray:
    """
    温度付きsoftmax（最大値を引いて安定化）

    Raises:
        ConfigError: tau <= 0 の場合
    """
    if not tau > 0.0:
        raise ConfigError("tau", f"温度は正である必要があります: {tau}")
    z = np.asarray(scores, dtype=np.float64) / tau
    ensure_finite(z, "scores")
    z = z - np.max(z)
    e = np.exp(z)
    return e / np.sum(e)


def _floored(p: float, counter: Optional[ClampCounter], where: str) -> float:
    if p < PROBABILITY_FLOOR:
        (counter or default_clamp_counter).record(where)
        return PROBABILITY_FLOOR
    return p


def cross_entropy(
    probs: np.ndarray, label: int, counter: Optional[ClampCounter] = None
) -> float:
    """−log probs[label]（下限クランプ付き）"""
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < probs.shape[0]:
        raise ValueError(f"ラベルが範囲外です: {label} (クラス数 {probs.shape[0]})")
    p = _floored(float(probs[label]), counter, "cross_entropy")
    return float(-np.log(p))


def kl_div(
    p: np.ndarray, q: np.ndarray, counter: Optional[ClampCounter] = None
) -> float:
    """KL(p ‖ q) = Σ p log(p/q)、q は下限クランプ"""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    _check_same_shape(p, q, "kl_div")
    total = 0.0
    for pi, qi in zip(p, q):
        if pi <= 0.0:
            continue
        qi = _floored(float(qi), counter, "kl_div")
        total += pi * (np.log(pi) - np.log(qi))
    return float(max(total, 0.0))


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """要素差の二乗平均"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b, "mse")
    diff = a - b
    return float(np.mean(diff * diff))
