"""
推論モジュール
"""

from .ensemble import (
    EnsembleCache,
    EnsembleWeights,
    EvaluationReport,
    PredictionMode,
    ensemble_predict,
    ensemble_weights,
    evaluate,
    evaluate_modes,
    predict_ablation,
)

__all__ = [
    "EnsembleCache",
    "EnsembleWeights",
    "EvaluationReport",
    "PredictionMode",
    "ensemble_predict",
    "ensemble_weights",
    "evaluate",
    "evaluate_modes",
    "predict_ablation",
]
