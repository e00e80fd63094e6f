"""
有限差分による勾配検証
"""

from typing import Callable

import numpy as np

DEFAULT_STEP = 1e-5
# 相対誤差の分母の下限
DEFAULT_SCALE_FLOOR = 1e-8


def finite_diff_check(
    loss_fn: Callable[[np.ndarray], float],
    params: np.ndarray,
    analytic: np.ndarray,
    h: float = DEFAULT_STEP,
    scale_floor: float = DEFAULT_SCALE_FLOOR,
) -> float:
    """
    中心差分と解析勾配の最大相対誤差を返します。

    各座標で (f(p+h·e) − f(p−h·e)) / 2h を計算し、
    |fd − analytic| / max(scale_floor, |fd| + |analytic|) の最大値を返します。

    Args:
        loss_fn: パラメータ（params と同じ形状）からスカラーへの純粋関数
        params: 評価点
        analytic: 解析勾配（params と同じ形状）
        h: 差分ステップ
        scale_floor: 分母の下限

    Returns:
        最大相対誤差
    """
    base = np.array(params, dtype=np.float64, copy=True)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != base.shape:
        raise ValueError(f"解析勾配の形状が一致しません: {analytic.shape} != {base.shape}")

    worst = 0.0
    for index in np.ndindex(base.shape):
        original = base[index]
        base[index] = original + h
        f_plus = float(loss_fn(base.copy()))
        base[index] = original - h
        f_minus = float(loss_fn(base.copy()))
        base[index] = original

        fd = (f_plus - f_minus) / (2.0 * h)
        a = float(analytic[index])
        rel = abs(fd - a) / max(scale_floor, abs(fd) + abs(a))
        worst = max(worst, rel)
    return worst
