"""
Adamオプティマイザー
パラメータブロックごとに状態を持つ決定的な実装
"""

from dataclasses import dataclass, field

import numpy as np

from src.errors import NonFiniteError, ShapeError

DEFAULT_LR = 5e-4
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_EPS = 1e-8


@dataclass
class AdamState:
    """Adamの状態（1次・2次モーメント、ステップ数、ハイパーパラメータ）"""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = DEFAULT_LR
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    eps: float = DEFAULT_EPS
    name: str = field(default="params")

    @classmethod
    def zeros_like(cls, params: np.ndarray, lr: float = DEFAULT_LR, name: str = "params") -> "AdamState":
        """パラメータと同じ形状のゼロ状態を作成"""
        shape = np.shape(params)
        return cls(
            m=np.zeros(shape, dtype=np.float64),
            v=np.zeros(shape, dtype=np.float64),
            lr=lr,
            name=name,
        )


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """
    バイアス補正付きAdamで1ステップ更新します。

    state はその場で1ステップ進み、更新後のパラメータは新しい配列で返します。

    Args:
        state: パラメータブロックのAdam状態
        params: 現在のパラメータ
        grads: 勾配

    Returns:
        更新後のパラメータ

    Raises:
        NonFiniteError: 勾配にNaN/Infが含まれる場合（ブロック名付き）
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ShapeError(
            f"Adam[{state.name}]: 形状が一致しません params={params.shape}, "
            f"grads={grads.shape}, state={state.m.shape}"
        )
    if not np.all(np.isfinite(grads)):
        raise NonFiniteError(f"Adam[{state.name}]: 勾配に有限でない値が含まれています")

    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
