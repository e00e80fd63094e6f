"""
DiPrompt Simulator - メインエントリーポイント

コマンド:
    run --config <path> [--out <dir>] [--dump-data]
    sweep --config <path> [--out <dir>] [--seeds <s> ...]
    gradcheck [--perturb]
    view --run <dir>

終了コード: 0 成功 / 1 設定エラー / 2 実行時エラー / 3 検証失敗
"""

import argparse
import sys
import time
from pathlib import Path
from typing import List, Optional

# プロジェクトのルートディレクトリをPythonパスに追加
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.config.settings_manager import get_settings_manager  # noqa: E402
from src.errors import ConfigError, SimulatorError, VerificationError  # noqa: E402
from src.logger import logger  # noqa: E402

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_RUNTIME_ERROR = 2
EXIT_VERIFICATION_FAILED = 3

# --perturb で解析勾配に掛ける相対摂動
PERTURB_SCALE = 1e-2


def default_out_dir(prefix: str) -> Path:
    return Path("runs") / f"{prefix}_{time.strftime('%Y%m%d_%H%M%S')}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diprompt-sim",
        description="連合ドメイン汎化プロンプト学習のシミュレーター",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="設定ファイルの実験を実行")
    run.add_argument("--config", required=True, help="設定ファイル (JSON)")
    run.add_argument("--out", default=None, help="実行ディレクトリ (既定: runs/run_<日時>)")
    run.add_argument("--dump-data", action="store_true", help="生成データを datasets.json に書き出す")

    sweep = sub.add_parser("sweep", help="全ドメインを順にターゲットにして実行")
    sweep.add_argument("--config", required=True, help="設定ファイル (JSON)")
    sweep.add_argument("--out", default=None, help="実行ディレクトリ (既定: runs/sweep_<日時>)")
    sweep.add_argument("--dump-data", action="store_true", help="生成データを datasets.json に書き出す")
    sweep.add_argument(
        "--seeds", type=int, nargs="+", default=None, help="複数シードで実行してシード平均を集計 (例: --seeds 0 1 2 3 4)"
    )

    gradcheck = sub.add_parser("gradcheck", help="解析勾配を有限差分で検証")
    gradcheck.add_argument("--configs", type=int, default=20, help="乱数構成の数")
    gradcheck.add_argument(
        "--perturb", action="store_true", help="解析勾配に摂動を加える（失敗の確認用）"
    )

    view = sub.add_parser("view", help="実行ディレクトリの評価結果を表示")
    view.add_argument("--run", required=True, help="実行ディレクトリ")
    return parser


def cmd_run(args: argparse.Namespace, force_sweep: bool = False) -> int:
    from src.experiment.runner import run_experiment, sweep

    config = get_settings_manager().load(args.config)
    if force_sweep and args.seeds:
        from src.experiment.runner import format_seed_summary, seed_sweep

        out_dir = Path(args.out) if args.out else default_out_dir("seeds")
        print(format_seed_summary(seed_sweep(config, out_dir, args.seeds, dump_data=args.dump_data)))
        print(f"実行ディレクトリ: {out_dir}")
        return EXIT_OK
    if force_sweep:
        out_dir = Path(args.out) if args.out else default_out_dir("sweep")
        result = sweep(config, out_dir, dump_data=args.dump_data)
    else:
        out_dir = Path(args.out) if args.out else default_out_dir("run")
        result = run_experiment(config, out_dir, dump_data=args.dump_data)

    for target in result.targets:
        accuracy = target.accuracy(target.primary_mode)
        print(f"target {target.target}: {target.primary_mode} accuracy = {accuracy:.4f}")
    if result.summary is not None:
        from src.experiment.runner import format_summary

        print(format_summary(result.summary))
    print(f"実行ディレクトリ: {out_dir}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    from src.experiment.gradcheck_suite import run_gradcheck, verify

    report = run_gradcheck(n_configs=args.configs, perturb=PERTURB_SCALE if args.perturb else 0.0)
    print(report.format())
    verify(report)
    return EXIT_OK


def cmd_view(args: argparse.Namespace) -> int:
    from PySide6.QtWidgets import QApplication

    from src.gui.main_window import ResultViewerWindow

    app = QApplication(sys.argv[:1])
    app.setApplicationName("DiPrompt Simulator")
    window = ResultViewerWindow(Path(args.run))
    window.show()
    return app.exec()


def main(argv: Optional[List[str]] = None) -> int:
    """コマンドラインのエントリーポイント（終了コードを返します）"""
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "sweep":
            return cmd_run(args, force_sweep=True)
        if args.command == "gradcheck":
            return cmd_gradcheck(args)
        if args.command == "view":
            return cmd_view(args)
    except ConfigError as e:
        logger.error(str(e))
        print(str(e), file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except VerificationError as e:
        logger.error(str(e))
        print(str(e), file=sys.stderr)
        return EXIT_VERIFICATION_FAILED
    except SimulatorError as e:
        logger.error(f"実行に失敗しました: {e}")
        print(str(e), file=sys.stderr)
        return EXIT_RUNTIME_ERROR
    except Exception as e:
        logger.critical(f"予期せぬエラー: {e}")
        print(str(e), file=sys.stderr)
        return EXIT_RUNTIME_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
