"""
評価結果表示モデル
実行ディレクトリの評価記録を表形式で表示
"""

from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional

from PySide6.QtCore import QAbstractTableModel, QModelIndex, QSortFilterProxyModel, Qt
from PySide6.QtGui import QColor

from src.logger import logger


class ColumnKind(str, Enum):
    """列の種類"""

    TEXT = "text"
    NUMBER = "number"
    PERCENT = "percent"
    WEIGHTS = "weights"


@dataclass(frozen=True)
class ResultColumn:
    """表示列の定義"""

    key: str  # 評価記録のキー
    label: str  # ヘッダー表示名
    kind: ColumnKind = ColumnKind.TEXT

    def display(self, value: Any) -> str:
        if value is None:
            return "-"
        if self.kind == ColumnKind.PERCENT:
            return f"{100.0 * float(value):.2f} %"
        if self.kind == ColumnKind.WEIGHTS:
            return ", ".join(f"{float(w):.3f}" for w in value)
        return str(value)


RESULT_COLUMNS = [
    ResultColumn("target_domain", "ターゲット", ColumnKind.NUMBER),
    ResultColumn("split", "評価データ"),
    ResultColumn("mode", "推論モード"),
    ResultColumn("accuracy", "正解率", ColumnKind.PERCENT),
    ResultColumn("n_samples", "サンプル数", ColumnKind.NUMBER),
    ResultColumn("query_accuracy", "問い合わせ精度", ColumnKind.PERCENT),
    ResultColumn("mean_weights", "平均ドメイン重み", ColumnKind.WEIGHTS),
]

# 主評価モードの行の背景色
PRIMARY_ROW_COLOR = QColor(240, 248, 255)


class RunResultTableModel(QAbstractTableModel):
    """評価記録テーブルモデル"""

    def __init__(self, records: Optional[List[Dict[str, Any]]] = None, parent=None):
        super().__init__(parent)
        self.columns = list(RESULT_COLUMNS)
        self.records: List[Dict[str, Any]] = list(records or [])

    def rowCount(self, parent=QModelIndex()) -> int:
        return len(self.records)

    def columnCount(self, parent=QModelIndex()) -> int:
        return len(self.columns)

    def data(self, index: QModelIndex, role: int = Qt.DisplayRole) -> Any:
        """セルのデータを返します"""
        if not index.isValid() or index.row() >= len(self.records):
            return None

        record = self.records[index.row()]
        column = self.columns[index.column()]
        value = record.get(column.key)

        if role == Qt.DisplayRole:
            return column.display(value)
        if role == Qt.UserRole:
            # ソート用の生の値
            return value
        if role == Qt.TextAlignmentRole:
            if column.kind in (ColumnKind.NUMBER, ColumnKind.PERCENT):
                return Qt.AlignRight | Qt.AlignVCenter
            return Qt.AlignLeft | Qt.AlignVCenter
        if role == Qt.BackgroundRole and record.get("primary"):
            return PRIMARY_ROW_COLOR
        if role == Qt.ToolTipRole:
            return f"{column.label}: {value}"
        return None

    def headerData(self, section: int, orientation: Qt.Orientation, role: int = Qt.DisplayRole) -> Any:
        if role != Qt.DisplayRole:
            return None
        if orientation == Qt.Horizontal and 0 <= section < len(self.columns):
            return self.columns[section].label
        if orientation == Qt.Vertical:
            return str(section + 1)
        return None

    def set_records(self, records: List[Dict[str, Any]]) -> None:
        """評価記録を設定します"""
        self.beginResetModel()
        self.records = list(records)
        self.endResetModel()
        logger.info(f"結果モデルに {len(self.records)} 件の評価記録を設定しました")

    def clear_records(self) -> None:
        self.beginResetModel()
        self.records = []
        self.endResetModel()

    def get_item(self, row: int) -> Optional[Dict[str, Any]]:
        if 0 <= row < len(self.records):
            return self.records[row]
        return None

    def get_all_items(self) -> List[Dict[str, Any]]:
        return self.records.copy()


class ResultSortFilterProxyModel(QSortFilterProxyModel):
    """推論モード・評価データでの絞り込みと数値ソート"""

    def __init__(self, parent=None):
        super().__init__(parent)
        self.filter_mode = ""
        self.filter_split = ""

    def filterAcceptsRow(self, source_row: int, _source_parent: QModelIndex) -> bool:
        model = self.sourceModel()
        if not isinstance(model, RunResultTableModel):
            return True
        item = model.get_item(source_row)
        if not item:
            return False
        if self.filter_mode and item.get("mode") != self.filter_mode:
            return False
        if self.filter_split and item.get("split") != self.filter_split:
            return False
        return True

    def set_filter_mode(self, mode: Optional[str]) -> None:
        self.filter_mode = (mode or "").strip()
        self.invalidateFilter()

    def set_filter_split(self, split: Optional[str]) -> None:
        self.filter_split = (split or "").strip()
        self.invalidateFilter()

    def _column_kind(self, column: int) -> Optional[ColumnKind]:
        model = self.sourceModel()
        if isinstance(model, RunResultTableModel) and 0 <= column < len(model.columns):
            return model.columns[column].kind
        return None

    def lessThan(self, left: QModelIndex, right: QModelIndex) -> bool:
        """数値列は生の値で比較し、値のない行は末尾に寄せます"""
        source_model = self.sourceModel()
        if self._column_kind(left.column()) in (ColumnKind.NUMBER, ColumnKind.PERCENT):
            left_value = source_model.data(left, Qt.UserRole)
            right_value = source_model.data(right, Qt.UserRole)
            if left_value is None:
                return False
            if right_value is None:
                return True
            return float(left_value) < float(right_value)

        left_str = str(source_model.data(left, Qt.DisplayRole) or "")
        right_str = str(source_model.data(right, Qt.DisplayRole) or "")
        return left_str < right_str
