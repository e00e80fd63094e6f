"""
ベータモメンタム平均
Beta(β, β) の密度を学習進行軸上の重みとするパラメータの逐次加重平均
"""

from dataclasses import dataclass

import numpy as np

from src.errors import DomainError
from src.numerics.special import beta_pdf

DEFAULT_BETA = 0.2


def slot_weight(slot: int, horizon: int, beta: float) -> float:
    """α_i = Beta(β, β) の密度を (i + 0.5) / (N + 1) で評価した値"""
    return beta_pdf((slot + 0.5) / (horizon + 1), beta)


@dataclass
class MomentumAverager:
    """
    逐次加重平均 V̂ = Σ α_i V^(i) / Σ α_i

    スロット0で初期値を取り込みます。
    """

    value: np.ndarray
    weight_sum: float
    horizon: int
    beta: float = DEFAULT_BETA
    last_slot: int = -1

    @classmethod
    def start(cls, initial: np.ndarray, horizon: int, beta: float = DEFAULT_BETA) -> "MomentumAverager":
        """初期値でスロット0を消費した平均器を作成"""
        if horizon < 0:
            raise DomainError(f"ホライズンは0以上である必要があります: {horizon}")
        averager = cls(
            value=np.zeros_like(np.asarray(initial, dtype=np.float64)),
            weight_sum=0.0,
            horizon=horizon,
            beta=beta,
        )
        return momentum_update(averager, initial, 0)


def momentum_update(avg: MomentumAverager, new_value: np.ndarray, slot: int) -> MomentumAverager:
    """
    V̂ ← (Σα·V̂ + α_i·V) / (Σα + α_i)

    入力と現在の平均が完全一致する場合は平均をそのまま保ちます（重みだけ加算）。

    Args:
        avg: 更新する平均器（その場で更新）
        new_value: 新しい値 V^(i)
        slot: スロット番号 i（0 ≤ i ≤ N）

    Returns:
        更新後の平均器

    Raises:
        DomainError: スロットがホライズンを超える場合
    """
    if not 0 <= slot <= avg.horizon:
        raise DomainError(f"スロット番号が範囲外です: {slot} (ホライズン {avg.horizon})")
    new_value = np.asarray(new_value, dtype=np.float64)
    if new_value.shape != avg.value.shape:
        raise ValueError(f"形状が一致しません: {new_value.shape} != {avg.value.shape}")

    alpha = slot_weight(slot, avg.horizon, avg.beta)
    if avg.weight_sum == 0.0:
        avg.value = new_value.copy()
    elif not np.array_equal(new_value, avg.value):
        total = avg.weight_sum + alpha
        avg.value = (avg.weight_sum * avg.value + alpha * new_value) / total
    avg.weight_sum += alpha
    avg.last_slot = slot
    return avg
