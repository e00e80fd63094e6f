"""
ロギングシステム
INFOレベルまでのログを出力します。
"""

import logging
import sys
from pathlib import Path
from typing import Optional

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


def setup_logger(
    name: str = "diprompt_sim",
    level: int = logging.INFO,
    log_file: Optional[Path] = None,
) -> logging.Logger:
    """
    ロガーを設定します。

    Args:
        name: ロガー名
        level: ログレベル（デフォルト: INFO）
        log_file: ログファイルのパス（指定しない場合はコンソールのみ）

    Returns:
        設定済みのロガー
    """
    logger = logging.getLogger(name)
    logger.setLevel(level)

    # 既存のハンドラーをクリア
    logger.handlers.clear()

    formatter = logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT)

    # コンソールハンドラー
    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_file:
        attach_file_handler(logger, log_file, level)

    return logger


def attach_file_handler(
    logger: logging.Logger, log_file: Path, level: int = logging.INFO
) -> logging.FileHandler:
    """
    実行ディレクトリ用のファイルハンドラーを追加します。

    呼び出し側は終了時に detach_handler で外してください。
    """
    log_file.parent.mkdir(parents=True, exist_ok=True)

    file_handler = logging.FileHandler(log_file, encoding="utf-8")
    file_handler.setLevel(level)
    file_handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
    logger.addHandler(file_handler)
    return file_handler


def detach_handler(logger: logging.Logger, handler: logging.Handler) -> None:
    """ハンドラーを外して閉じます"""
    logger.removeHandler(handler)
    handler.close()


# デフォルトロガー
logger = setup_logger()
