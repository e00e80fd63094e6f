"""
特殊関数
Lanczos近似による対数ガンマ関数とベータ分布の確率密度
"""

import math

from src.errors import ConfigError, DomainError

# Lanczos近似の係数 (g = 7, n = 9)
_LANCZOS_G = 7.0
_LANCZOS_COEFFICIENTS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_HALF_LOG_TWO_PI = 0.5 * math.log(2.0 * math.pi)


def log_gamma(x: float) -> float:
    """
    log Γ(x)（x > 0）

    x < 0.5 では反射公式 Γ(x)Γ(1−x) = π / sin(πx) を使います。
    """
    if not x > 0.0:
        raise DomainError(f"log_gamma は正の引数のみ対応しています: {x}")
    if x < 0.5:
        return math.log(math.pi / math.sin(math.pi * x)) - log_gamma(1.0 - x)

    z = x - 1.0
    acc = _LANCZOS_COEFFICIENTS[0]
    for i, coefficient in enumerate(_LANCZOS_COEFFICIENTS[1:], start=1):
        acc += coefficient / (z + i)
    t = z + _LANCZOS_G + 0.5
    return _HALF_LOG_TWO_PI + (z + 0.5) * math.log(t) - t + math.log(acc)


def log_beta_function(a: float, b: float) -> float:
    """log B(a, b) = log Γ(a) + log Γ(b) − log Γ(a + b)"""
    return log_gamma(a) + log_gamma(b) - log_gamma(a + b)


def beta_pdf(x: float, beta: float) -> float:
    """
    対称ベータ分布 Beta(β, β) の確率密度

    Args:
        x: 評価点（0 < x < 1）
        beta: 形状パラメータ（> 0）

    Raises:
        DomainError: x が (0, 1) の外の場合
        ConfigError: beta <= 0 の場合
    """
    if not beta > 0.0:
        raise ConfigError("beta", f"βは正である必要があります: {beta}")
    if not 0.0 < x < 1.0:
        raise DomainError(f"beta_pdf の引数は (0, 1) の範囲である必要があります: {x}")
    log_density = (beta - 1.0) * (math.log(x) + math.log1p(-x)) - log_beta_function(
        beta, beta
    )
    return math.exp(log_density)
