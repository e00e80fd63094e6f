"""
結果ビューアのメインウィンドウ
実行ディレクトリの評価記録を一覧表示します（読み取り専用）
"""

from pathlib import Path
from typing import Optional

from PySide6.QtCore import Signal, Slot
from PySide6.QtWidgets import (
    QComboBox,
    QFileDialog,
    QHeaderView,
    QLabel,
    QMainWindow,
    QMessageBox,
    QPlainTextEdit,
    QPushButton,
    QHBoxLayout,
    QStatusBar,
    QTableView,
    QVBoxLayout,
    QWidget,
)

from src.experiment.records import load_run_records, load_summary_text
from src.inference.ensemble import PredictionMode
from src.logger import logger
from src.models.result_table_model import ResultSortFilterProxyModel, RunResultTableModel

SPLIT_LABELS = {"target": "ターゲット", "seen": "既知ドメイン"}


class ResultPanel(QWidget):
    """評価結果表示パネル"""

    filter_changed = Signal()

    def __init__(self, parent=None):
        super().__init__(parent)
        self.setup_ui()

    def setup_ui(self):
        layout = QVBoxLayout(self)
        layout.setContentsMargins(0, 0, 0, 0)
        layout.setSpacing(10)

        title_label = QLabel("評価結果")
        title_label.setStyleSheet("font-weight: bold; font-size: 14px;")
        layout.addWidget(title_label)

        layout.addWidget(self.create_control_panel())

        self.table_view = self.create_table_view()
        layout.addWidget(self.table_view)

        self.status_label = QLabel("結果: 0件")
        layout.addWidget(self.status_label)

    def create_control_panel(self) -> QWidget:
        """絞り込み用のコンボボックス"""
        panel = QWidget()
        layout = QHBoxLayout(panel)
        layout.setContentsMargins(0, 0, 0, 0)

        self.mode_filter_combo = QComboBox()
        self.mode_filter_combo.addItem("すべての推論モード", "")
        for mode in PredictionMode:
            self.mode_filter_combo.addItem(mode.value, mode.value)
        self.mode_filter_combo.currentIndexChanged.connect(self.on_filter_changed)
        layout.addWidget(self.mode_filter_combo)

        self.split_filter_combo = QComboBox()
        self.split_filter_combo.addItem("すべての評価データ", "")
        for split, label in SPLIT_LABELS.items():
            self.split_filter_combo.addItem(label, split)
        self.split_filter_combo.currentIndexChanged.connect(self.on_filter_changed)
        layout.addWidget(self.split_filter_combo)

        self.clear_filter_button = QPushButton("フィルタークリア")
        self.clear_filter_button.clicked.connect(self.clear_filter)
        layout.addWidget(self.clear_filter_button)

        layout.addStretch()
        return panel

    def create_table_view(self) -> QTableView:
        table_view = QTableView()

        self.source_model = RunResultTableModel()
        self.proxy_model = ResultSortFilterProxyModel()
        self.proxy_model.setSourceModel(self.source_model)
        table_view.setModel(self.proxy_model)

        table_view.setAlternatingRowColors(True)
        table_view.setSelectionBehavior(QTableView.SelectRows)
        table_view.setSelectionMode(QTableView.SingleSelection)
        table_view.setSortingEnabled(True)

        header = table_view.horizontalHeader()
        header.setStretchLastSection(True)
        header.setSectionResizeMode(QHeaderView.Interactive)
        return table_view

    def on_filter_changed(self, _index: int = 0):
        self.proxy_model.set_filter_mode(self.mode_filter_combo.currentData())
        self.proxy_model.set_filter_split(self.split_filter_combo.currentData())
        self.update_status()
        self.filter_changed.emit()

    def clear_filter(self):
        self.mode_filter_combo.setCurrentIndex(0)
        self.split_filter_combo.setCurrentIndex(0)
        self.on_filter_changed()

    def set_records(self, records: list):
        self.source_model.set_records(records)
        self.proxy_model.invalidate()
        self.update_status()

    def update_status(self):
        total_count = self.source_model.rowCount()
        filtered_count = self.proxy_model.rowCount()
        if total_count == filtered_count:
            self.status_label.setText(f"結果: {total_count}件")
        else:
            self.status_label.setText(f"結果: {filtered_count}/{total_count}件 (フィルター中)")


class ResultViewerWindow(QMainWindow):
    """結果ビューアのメインウィンドウ"""

    def __init__(self, run_dir: Optional[Path] = None) -> None:
        super().__init__()
        self.run_dir: Optional[Path] = Path(run_dir) if run_dir else None
        self.setup_ui()
        if self.run_dir is not None:
            self.load_run(self.run_dir)

    def setup_ui(self) -> None:
        self.setWindowTitle("DiPrompt Simulator - 結果ビューア")
        self.setGeometry(100, 100, 1200, 700)

        central_widget = QWidget()
        self.setCentralWidget(central_widget)
        main_layout = QVBoxLayout(central_widget)
        main_layout.setContentsMargins(10, 10, 10, 10)
        main_layout.setSpacing(10)

        self.result_panel = ResultPanel()
        main_layout.addWidget(self.result_panel)

        # スイープ集計
        self.summary_view = QPlainTextEdit()
        self.summary_view.setReadOnly(True)
        self.summary_view.setMaximumHeight(160)
        self.summary_view.setVisible(False)
        main_layout.addWidget(self.summary_view)

        main_layout.addWidget(self.create_control_panel())

        self.status_bar = QStatusBar()
        self.setStatusBar(self.status_bar)
        self.status_bar.showMessage("準備完了")

    def create_control_panel(self) -> QWidget:
        panel = QWidget()
        layout = QHBoxLayout(panel)
        layout.setContentsMargins(0, 0, 0, 0)

        self.open_button = QPushButton("実行ディレクトリを開く")
        self.open_button.clicked.connect(self.choose_run_dir)
        layout.addWidget(self.open_button)

        self.reload_button = QPushButton("再読み込み")
        self.reload_button.clicked.connect(self.reload)
        layout.addWidget(self.reload_button)

        layout.addStretch()
        self.run_label = QLabel("")
        layout.addWidget(self.run_label)
        return panel

    def load_run(self, run_dir: Path) -> None:
        """実行ディレクトリを読み込んで表示します"""
        try:
            records = load_run_records(run_dir)
        except (OSError, ValueError) as e:
            logger.error(f"実行ディレクトリの読み込みに失敗しました: {e}")
            QMessageBox.critical(self, "読み込みエラー", f"実行ディレクトリを読み込めませんでした:\n\n{e}")
            return

        self.run_dir = Path(run_dir)
        self.result_panel.set_records(records)
        summary = load_summary_text(run_dir)
        self.summary_view.setPlainText(summary or "")
        self.summary_view.setVisible(summary is not None)
        self.run_label.setText(str(self.run_dir))
        self.status_bar.showMessage(f"{len(records)}件の評価記録を読み込みました", 5000)

    @Slot()
    def choose_run_dir(self) -> None:
        directory = QFileDialog.getExistingDirectory(self, "実行ディレクトリを選択")
        if directory:
            self.load_run(Path(directory))

    @Slot()
    def reload(self) -> None:
        if self.run_dir is not None:
            self.load_run(self.run_dir)

    def closeEvent(self, event):
        logger.info("結果ビューアを終了します")
        event.accept()
