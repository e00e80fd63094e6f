"""
設定管理モジュール
実験設定（JSON）の読み込み・検証・保存を提供
"""

import json
from dataclasses import asdict, fields, is_dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from src.config.experiment import (
    DEFAULT_PRESET,
    SWEEP_TARGET,
    ExperimentConfig,
    get_preset,
)
from src.errors import ConfigError
from src.logger import logger

PRESET_KEY = "preset"


class ConfigEncoder(json.JSONEncoder):
    """カスタムJSONエンコーダー（dataclass / Enum / numpy対応）"""

    def default(self, obj):
        if is_dataclass(obj) and not isinstance(obj, type):
            return asdict(obj)
        if isinstance(obj, Enum):
            return obj.value
        if isinstance(obj, np.integer):
            return int(obj)
        if isinstance(obj, np.floating):
            return float(obj)
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        return super().default(obj)


def _coerce(name: str, value: Any, default: Any) -> Any:
    """デフォルト値の型に合わせて値を検査・変換"""
    if name == "target":
        if value == SWEEP_TARGET or (isinstance(value, int) and not isinstance(value, bool)):
            return value
        raise ConfigError(name, f"整数または \"{SWEEP_TARGET}\" を指定してください: {value!r}")
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(name, f"真偽値を指定してください: {value!r}")
    if isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(name, f"整数を指定してください: {value!r}")
    if isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(name, f"数値を指定してください: {value!r}")
    if isinstance(default, str):
        if isinstance(value, str):
            return value
        raise ConfigError(name, f"文字列を指定してください: {value!r}")
    return value


class SettingsManager:
    """実験設定の管理クラス"""

    def __init__(self, config_dir: Optional[Union[str, Path]] = None):
        """
        Args:
            config_dir: 設定ファイルのディレクトリ（Noneの場合はプロジェクトルートの configs/）
        """
        if config_dir is None:
            self.config_dir = Path(__file__).parent.parent.parent / "configs"
        else:
            self.config_dir = Path(config_dir)

    def resolve(self, path: Union[str, Path]) -> Path:
        """パスが存在しなければ設定ディレクトリからの相対パスとして解決"""
        path = Path(path)
        if not path.exists() and not path.is_absolute() and (self.config_dir / path).exists():
            return self.config_dir / path
        return path

    def from_dict(self, data: Dict[str, Any]) -> ExperimentConfig:
        """
        辞書から設定を作成します。

        Raises:
            ConfigError: 未知のキー、型の不一致、値の不正
        """
        if not isinstance(data, dict):
            raise ConfigError("<root>", "設定はJSONオブジェクトである必要があります")
        data = dict(data)
        preset_name = data.pop(PRESET_KEY, DEFAULT_PRESET)
        if not isinstance(preset_name, str):
            raise ConfigError(PRESET_KEY, f"文字列を指定してください: {preset_name!r}")
        base = get_preset(preset_name)

        known = {f.name for f in fields(ExperimentConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(unknown[0], f"未知の設定キーです (未知のキー: {unknown})")

        values = {name: _coerce(name, value, getattr(base, name)) for name, value in data.items()}
        config = replace(base, **values)
        config.validate()
        return config

    def load(self, path: Union[str, Path]) -> ExperimentConfig:
        """
        設定ファイルを読み込みます。

        Returns:
            検証済みの実験設定

        Raises:
            ConfigError: ファイルが読めない、JSONが不正、または値が不正な場合
        """
        path = self.resolve(path)
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ConfigError("<file>", f"設定ファイルが存在しません: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError("<file>", f"設定ファイルのJSON解析に失敗しました: {path}: {e}") from None
        config = self.from_dict(data)
        logger.info(f"設定を読み込みました: {path}")
        return config

    def save(self, config: ExperimentConfig, path: Union[str, Path]) -> Path:
        """設定を全フィールド付きで保存します（そのまま読み込めば同じ実行を再現できます）"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(config, f, cls=ConfigEncoder, indent=2, ensure_ascii=False)
            f.write("\n")
        logger.info(f"設定を保存しました: {path}")
        return path


# シングルトンインスタンス
_settings_manager = None


def get_settings_manager() -> SettingsManager:
    """設定マネージャーのシングルトンインスタンスを取得"""
    global _settings_manager
    if _settings_manager is None:
        _settings_manager = SettingsManager()
    return _settings_manager
