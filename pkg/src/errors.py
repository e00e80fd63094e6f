"""
例外定義
シミュレーター全体で使用する例外クラス
"""

from typing import Optional


class SimulatorError(Exception):
    """シミュレーターの基底例外"""


class ConfigError(SimulatorError):
    """設定エラー（フィールド名付き）"""

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"設定エラー [{field}]: {message}")


class ShapeError(SimulatorError, ValueError):
    """形状の不一致"""


class DegenerateInputError(SimulatorError, ValueError):
    """ノルムがゼロなどの退化した入力"""


class DomainError(SimulatorError, ValueError):
    """関数の定義域外の引数"""


class NonFiniteError(SimulatorError):
    """NaN/Infの検出"""


class AggregationError(SimulatorError):
    """サーバー集約の失敗"""


class VerificationError(SimulatorError):
    """勾配検証の失敗"""


class TrainingError(SimulatorError):
    """クライアント学習の失敗（ラウンド・クライアント情報付き）"""

    def __init__(
        self,
        message: str,
        client_id: Optional[int] = None,
        iteration: Optional[int] = None,
        round_index: Optional[int] = None,
    ):
        self.client_id = client_id
        self.iteration = iteration
        self.round_index = round_index
        context = []
        if round_index is not None:
            context.append(f"round={round_index}")
        if client_id is not None:
            context.append(f"client={client_id}")
        if iteration is not None:
            context.append(f"iteration={iteration}")
        prefix = f"[{', '.join(context)}] " if context else ""
        super().__init__(f"{prefix}{message}")
