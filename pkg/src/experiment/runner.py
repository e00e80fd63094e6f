"""
実験ランナー
データ生成、leave-one-domain-out、学習、評価、実行ディレクトリへの書き出しをまとめて行います。

実行ディレクトリの構成:
    config.json                 設定のエコー（そのまま読み込めば同じ実行を再現）
    run.log                     ログ
    target_<m>/metrics.jsonl    ラウンドごとのメトリクス（実行時間を含まない）
    target_<m>/timing.jsonl     ラウンドごとの実行時間
    target_<m>/checkpoint.json  推論用プロンプト（V^G と モメンタム平均の V^D）
    target_<m>/evaluation.json  推論モードごとの評価結果
    summary.json / summary.txt  スイープ時のみ
    datasets.json               --dump-data 指定時のみ
"""

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.config.experiment import SWEEP_TARGET, ExperimentConfig
from src.config.settings_manager import get_settings_manager
from src.data.datagen import (
    GeneratedData,
    PartitionMode,
    SampleSet,
    dump_datasets,
    generate,
    leave_one_out,
    partition,
)
from src.federation.server import ServerState, TrainingResult, run_training
from src.inference.ensemble import EnsembleCache, EvaluationReport, PredictionMode, evaluate_modes
from src.logger import attach_file_handler, detach_handler, logger
from src.prompting.encoders import FrozenEncoders
from src.prompting.prompts import save_checkpoint

SUMMARY_MODES = (PredictionMode.ENSEMBLE, PredictionMode.G_ONLY, PredictionMode.TOP_DOMAIN_ONLY)


@dataclass
class TargetResult:
    """1ターゲットドメイン分の結果"""

    target: int
    primary_mode: str
    reports: List[EvaluationReport]
    training: TrainingResult
    query_accuracy: Optional[float] = None

    def accuracy(self, mode: PredictionMode, split: str = "target") -> Optional[float]:
        for report in self.reports:
            if report.mode == PredictionMode(mode).value and report.split == split:
                return report.accuracy
        return None

    @property
    def metrics(self) -> List[Dict[str, Any]]:
        return self.training.metrics


@dataclass
class ExperimentResult:
    """実験全体の結果"""

    config: ExperimentConfig
    out_dir: Path
    targets: List[TargetResult] = field(default_factory=list)
    summary: Optional[Dict[str, Any]] = None


def primary_mode(config: ExperimentConfig) -> PredictionMode:
    """主評価に使う推論モード"""
    if config.no_d_prompts:
        return PredictionMode.G_ONLY
    if config.no_ensemble:
        return PredictionMode.TOP_DOMAIN_ONLY
    return PredictionMode.ENSEMBLE


def evaluation_modes(config: ExperimentConfig) -> List[PredictionMode]:
    if config.no_d_prompts:
        return [PredictionMode.G_ONLY]
    return list(PredictionMode)


def skipped_modes(config: ExperimentConfig) -> Dict[str, str]:
    """評価しない推論モードと理由（evaluation.json に記録）"""
    if not config.no_d_prompts:
        return {}
    reason = "no_d_prompts: D-Promptを学習しないため評価しません"
    return {mode.value: reason for mode in PredictionMode if mode not in evaluation_modes(config)}


def build_world(config: ExperimentConfig) -> Tuple[GeneratedData, FrozenEncoders]:
    """合成データと凍結エンコーダーを作成"""
    data = generate(config.domain_spec(), config.seed)
    encoders = FrozenEncoders.create(
        config.encoder_dims(), config.n_classes, config.n_domains, config.seed
    ).aligned_to(data.prototypes, data.shifts, config.encoder_alignment)
    return data, encoders


def _write_jsonl(path: Path, records: Sequence[Dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")


def _write_json(path: Path, payload: Any) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2)
        f.write("\n")


def mean_query_accuracy(metrics: Sequence[Dict[str, Any]]) -> Optional[float]:
    values = [m["query_accuracy"] for m in metrics if m.get("query_accuracy") is not None]
    return float(np.mean(values)) if values else None


def run_target(
    config: ExperimentConfig,
    target: int,
    data: GeneratedData,
    encoders: FrozenEncoders,
    out_dir: Optional[Path] = None,
    on_round: Optional[Callable[[int, ServerState], None]] = None,
) -> TargetResult:
    """
    1ターゲットドメインで学習・評価します。

    Args:
        config: 実験設定
        target: ターゲットドメイン
        data: 合成データ
        encoders: 凍結エンコーダー
        out_dir: 書き出し先（None なら書き出さない）
        on_round: ラウンドごとのコールバック
    """
    logger.info(f"ターゲットドメイン {target} の実験を開始します")
    sources, target_test = leave_one_out(data.domains, target)
    shards = partition(sources, config.n_clients, PartitionMode(config.partition), config.seed)
    domain_ids = [s.domain_id for s in sources]

    training = run_training(config, encoders, shards, domain_ids, on_round=on_round)
    bank = training.inference_bank
    cache = EnsembleCache.build(bank, encoders)
    modes = evaluation_modes(config)
    primary = primary_mode(config)

    reports = evaluate_modes(target_test, cache, target, modes, "target", primary)
    seen = SampleSet.concat([s.test for s in sources])
    reports += evaluate_modes(seen, cache, target, modes, "seen", primary)

    result = TargetResult(
        target=target,
        primary_mode=primary.value,
        reports=reports,
        training=training,
        query_accuracy=mean_query_accuracy(training.metrics),
    )

    if out_dir is not None:
        target_dir = Path(out_dir) / f"target_{target}"
        target_dir.mkdir(parents=True, exist_ok=True)
        _write_jsonl(target_dir / "metrics.jsonl", training.metrics)
        _write_jsonl(target_dir / "timing.jsonl", training.timings)
        save_checkpoint(target_dir / "checkpoint.json", bank, config.seed, training.state.round_index)
        _write_json(
            target_dir / "evaluation.json",
            {
                "target_domain": target,
                "source_domains": domain_ids,
                "primary_mode": primary.value,
                "skipped_modes": skipped_modes(config),
                "query_accuracy": result.query_accuracy,
                "reports": [r.to_dict() for r in reports],
            },
        )
    return result


def build_summary(results: Sequence[TargetResult]) -> Dict[str, Any]:
    """ターゲットごとの正解率と平均（スイープの集計）"""
    rows = []
    for r in results:
        row: Dict[str, Any] = {"target": r.target}
        for mode in SUMMARY_MODES:
            row[mode.value] = r.accuracy(mode)
        row["query_accuracy"] = r.query_accuracy
        rows.append(row)

    def average(key: str) -> Optional[float]:
        values = [row[key] for row in rows if row[key] is not None]
        return float(np.mean(values)) if values else None

    averages = {mode.value: average(mode.value) for mode in SUMMARY_MODES}
    averages["query_accuracy"] = average("query_accuracy")
    ens, g_only = averages[PredictionMode.ENSEMBLE.value], averages[PredictionMode.G_ONLY.value]
    return {
        "rows": rows,
        "average": averages,
        "ensemble_minus_g_only": None if ens is None or g_only is None else ens - g_only,
    }


def _cell(value: Optional[float]) -> str:
    return "-" if value is None else f"{100.0 * value:6.2f}"


def format_summary(summary: Dict[str, Any]) -> str:
    """集計を表形式のテキストにします（正解率は %）"""
    header = ["target"] + [m.value for m in SUMMARY_MODES] + ["query_acc"]
    lines = ["  ".join(f"{h:>15}" for h in header)]
    for row in summary["rows"]:
        cells = [str(row["target"])] + [_cell(row[m.value]) for m in SUMMARY_MODES]
        cells.append(_cell(row["query_accuracy"]))
        lines.append("  ".join(f"{c:>15}" for c in cells))
    avg = summary["average"]
    cells = ["Avg"] + [_cell(avg[m.value]) for m in SUMMARY_MODES] + [_cell(avg["query_accuracy"])]
    lines.append("  ".join(f"{c:>15}" for c in cells))
    diff = summary["ensemble_minus_g_only"]
    if diff is not None:
        lines.append(f"ensemble - g_only: {100.0 * diff:+.2f} pt")
    return "\n".join(lines)


def run_experiment(
    config: ExperimentConfig,
    out_dir: Path,
    dump_data: bool = False,
    on_round: Optional[Callable[[int, ServerState], None]] = None,
) -> ExperimentResult:
    """
    実験を実行し、実行ディレクトリに結果を書き出します。

    config.target が "sweep" の場合は全ドメインを順にターゲットにして集計表を追加します。

    Args:
        config: 実験設定
        out_dir: 実行ディレクトリ
        dump_data: 生成データを datasets.json に書き出す
        on_round: ラウンドごとのコールバック
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    handler = attach_file_handler(logger, out_dir / "run.log")
    try:
        logger.info(f"実験を開始します: {out_dir} (ablations={[a.value for a in config.active_ablations()]})")
        get_settings_manager().save(config, out_dir / "config.json")
        data, encoders = build_world(config)
        if dump_data:
            dump_datasets(out_dir / "datasets.json", data)

        result = ExperimentResult(config=config, out_dir=out_dir)
        for target in config.targets():
            result.targets.append(
                run_target(config, target, data, encoders, out_dir, on_round=on_round)
            )

        if config.is_sweep:
            result.summary = build_summary(result.targets)
            _write_json(out_dir / "summary.json", result.summary)
            text = format_summary(result.summary)
            (out_dir / "summary.txt").write_text(text + "\n", encoding="utf-8")
            logger.info(f"スイープ集計:\n{text}")
        logger.info("実験が完了しました")
        return result
    finally:
        detach_handler(logger, handler)


def sweep(config: ExperimentConfig, out_dir: Path, dump_data: bool = False) -> ExperimentResult:
    """全ドメインを順にターゲットにして実行します"""
    return run_experiment(replace(config, target=SWEEP_TARGET), out_dir, dump_data)


# シード平均で確認する方向性の基準
NON_INFERIORITY_MARGIN = 0.005
QUERY_MARGIN = 0.10


def directional_checks(
    average: Dict[str, Optional[float]], n_classes: int, n_sources: int
) -> Dict[str, Dict[str, Any]]:
    """
    シード平均の正解率に対する方向性の基準

    - ensemble が偶然の2倍を超える
    - ensemble が g_only − 0.5pt 以上（非劣性）
    - 学習時の問い合わせ精度が 1/M + 0.10 を超える
    """

    def check(value: Optional[float], threshold: float, higher_or_equal: bool = False):
        passed = None
        if value is not None:
            passed = value >= threshold if higher_or_equal else value > threshold
        return {"value": value, "threshold": threshold, "passed": passed}

    return {
        "ensemble_above_twice_chance": check(average.get("ensemble"), 2.0 / n_classes),
        "ensemble_non_inferior_to_g_only": check(
            average.get("ensemble_minus_g_only"), -NON_INFERIORITY_MARGIN, higher_or_equal=True
        ),
        "query_above_chance": check(average.get("query_accuracy"), 1.0 / n_sources + QUERY_MARGIN),
    }


def format_seed_summary(summary: Dict[str, Any]) -> str:
    """シード平均の集計をテキストにします"""
    keys = [m.value for m in SUMMARY_MODES] + ["query_accuracy"]
    lines = ["  ".join(f"{h:>15}" for h in ["seed"] + keys + ["ens-g_only(pt)"])]
    rows = summary["per_seed"] + [dict(summary["average"], seed="Avg")]
    for row in rows:
        diff = row["ensemble_minus_g_only"]
        cells = [str(row["seed"])] + [_cell(row[k]) for k in keys]
        cells.append("-" if diff is None else f"{100.0 * diff:+.2f}")
        lines.append("  ".join(f"{c:>15}" for c in cells))
    for name, check in summary["checks"].items():
        status = {True: "OK", False: "NG", None: "-"}[check["passed"]]
        lines.append(f"{name}: {status} (threshold {check['threshold']:.4f})")
    return "\n".join(lines)


def seed_sweep(
    config: ExperimentConfig, out_dir: Path, seeds: Sequence[int], dump_data: bool = False
) -> Dict[str, Any]:
    """
    複数シードで全ドメインスイープを実行し、シード平均と方向性の基準を集計します。

    各シードの結果は out_dir/seed_<s>/ に、集計は out_dir/seeds_summary.json と
    seeds_summary.txt に書き出します。
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("シードが指定されていません")
    out_dir = Path(out_dir)
    keys = [m.value for m in SUMMARY_MODES] + ["query_accuracy", "ensemble_minus_g_only"]

    per_seed = []
    for seed in seeds:
        result = sweep(replace(config, seed=seed), out_dir / f"seed_{seed}", dump_data)
        row: Dict[str, Any] = {"seed": seed, **result.summary["average"]}
        row["ensemble_minus_g_only"] = result.summary["ensemble_minus_g_only"]
        per_seed.append(row)

    def average(key: str) -> Optional[float]:
        values = [row[key] for row in per_seed if row[key] is not None]
        return float(np.mean(values)) if values else None

    averages = {key: average(key) for key in keys}
    summary = {
        "seeds": seeds,
        "per_seed": per_seed,
        "average": averages,
        "checks": directional_checks(averages, config.n_classes, config.n_domains - 1),
    }
    _write_json(out_dir / "seeds_summary.json", summary)
    text = format_seed_summary(summary)
    (out_dir / "seeds_summary.txt").write_text(text + "\n", encoding="utf-8")
    logger.info(f"シード平均の集計:\n{text}")
    return summary
