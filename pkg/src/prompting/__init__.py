"""
プロンプトモジュール
"""

from .encoders import EncoderDims, FrozenEncoders, TokenVocab
from .objectives import (
    BatchLossReport,
    class_probs,
    local_objective,
    loss_D_and_grad,
    loss_G_and_grad,
    loss_Q_and_grad,
    loss_Qmatch_and_grad,
    qprompt_match,
    query_domain,
)
from .prompts import PromptBank, PromptDims, PromptKind, init_prompt_bank

__all__ = [
    "BatchLossReport",
    "EncoderDims",
    "FrozenEncoders",
    "PromptBank",
    "PromptDims",
    "PromptKind",
    "TokenVocab",
    "class_probs",
    "init_prompt_bank",
    "local_objective",
    "loss_D_and_grad",
    "loss_G_and_grad",
    "loss_Q_and_grad",
    "loss_Qmatch_and_grad",
    "qprompt_match",
    "query_domain",
]
