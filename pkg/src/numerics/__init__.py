"""
数値計算モジュール
"""

from .gradcheck import finite_diff_check
from .kernels import (
    PROBABILITY_FLOOR,
    ClampCounter,
    cosine_sim,
    cosine_sim_grad,
    cross_entropy,
    kl_div,
    mse,
    softmax_temp,
)
from .optim import AdamState, adam_step
from .rng import Rng
from .special import beta_pdf, log_gamma

__all__ = [
    "PROBABILITY_FLOOR",
    "AdamState",
    "ClampCounter",
    "Rng",
    "adam_step",
    "beta_pdf",
    "cosine_sim",
    "cosine_sim_grad",
    "cross_entropy",
    "finite_diff_check",
    "kl_div",
    "log_gamma",
    "mse",
    "softmax_temp",
]
