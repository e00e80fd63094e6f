"""
実行ディレクトリの読み出し
"""

import json
import re
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from src.logger import logger

_TARGET_DIR = re.compile(r"^target_(\d+)$")


def target_dirs(run_dir: Union[str, Path]) -> List[Path]:
    """target_<m> ディレクトリをドメイン番号順に返します"""
    run_dir = Path(run_dir)
    found = []
    for child in run_dir.iterdir() if run_dir.is_dir() else []:
        match = _TARGET_DIR.match(child.name)
        if match and child.is_dir():
            found.append((int(match.group(1)), child))
    return [path for _, path in sorted(found)]


def load_run_records(run_dir: Union[str, Path]) -> List[Dict[str, Any]]:
    """
    実行ディレクトリの評価記録をすべて読み込みます。

    Returns:
        ターゲット順・ファイル内の順に並んだ評価記録（target / seen 両方）

    Raises:
        FileNotFoundError: 実行ディレクトリが存在しない場合
    """
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"実行ディレクトリが存在しません: {run_dir}")

    records: List[Dict[str, Any]] = []
    for path in target_dirs(run_dir):
        evaluation = path / "evaluation.json"
        if not evaluation.exists():
            logger.warning(f"評価結果がありません: {evaluation}")
            continue
        with open(evaluation, "r", encoding="utf-8") as f:
            payload = json.load(f)
        for report in payload.get("reports", []):
            record = dict(report)
            record.setdefault("target_domain", payload.get("target_domain"))
            record["query_accuracy"] = payload.get("query_accuracy")
            records.append(record)
    logger.info(f"評価記録を読み込みました: {run_dir} ({len(records)}件)")
    return records


def load_summary_text(run_dir: Union[str, Path]) -> Optional[str]:
    """スイープ集計のテキスト（なければ None）"""
    path = Path(run_dir) / "summary.txt"
    if not path.exists():
        return None
    return path.read_text(encoding="utf-8")
