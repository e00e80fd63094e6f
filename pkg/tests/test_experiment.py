"""
実験ランナー・実行記録・勾配検証スイートのテスト
"""

import json
from dataclasses import replace

import pytest

from src.config.settings_manager import get_settings_manager
from src.errors import ConfigError, VerificationError
from src.experiment.gradcheck_suite import FAMILIES, run_gradcheck, verify
from src.experiment.records import load_run_records, load_summary_text, target_dirs
from src.config.experiment import get_preset
from src.experiment.runner import (
    directional_checks,
    format_seed_summary,
    format_summary,
    run_experiment,
    seed_sweep,
    sweep,
)


def _read_jsonl(path):
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]


class TestRunExperiment:
    def test_run_directory_layout(self, tiny_config, tmp_path):
        out = tmp_path / "run"
        result = run_experiment(tiny_config, out)
        target_dir = out / "target_0"
        for name in ("metrics.jsonl", "timing.jsonl", "checkpoint.json", "evaluation.json"):
            assert (target_dir / name).exists()
        assert (out / "run.log").exists()
        assert not (out / "summary.json").exists()
        assert get_settings_manager().load(out / "config.json") == tiny_config

        metrics = _read_jsonl(target_dir / "metrics.jsonl")
        assert len(metrics) == tiny_config.rounds
        assert all("wall_time" not in record for record in metrics)
        assert all("wall_time" in record for record in _read_jsonl(target_dir / "timing.jsonl"))

        evaluation = json.loads((target_dir / "evaluation.json").read_text(encoding="utf-8"))
        assert evaluation["target_domain"] == 0
        assert evaluation["source_domains"] == [1, 2]
        assert evaluation["primary_mode"] == "ensemble"
        assert evaluation["skipped_modes"] == {}
        assert len(evaluation["reports"]) == 6
        assert {r["split"] for r in evaluation["reports"]} == {"target", "seen"}
        for report in evaluation["reports"]:
            assert 0.0 <= report["accuracy"] <= 1.0

        target = result.targets[0]
        assert target.accuracy("ensemble") == evaluation["reports"][0]["accuracy"]
        assert target.query_accuracy is not None

    def test_reruns_are_byte_identical(self, tiny_config, tmp_path):
        run_experiment(tiny_config, tmp_path / "a")
        run_experiment(tiny_config, tmp_path / "b")
        for name in ("metrics.jsonl", "checkpoint.json", "evaluation.json"):
            a = (tmp_path / "a" / "target_0" / name).read_bytes()
            b = (tmp_path / "b" / "target_0" / name).read_bytes()
            assert a == b, name

    def test_different_seed_changes_results(self, tiny_config, tmp_path):
        run_experiment(tiny_config, tmp_path / "a")
        run_experiment(replace(tiny_config, seed=4), tmp_path / "b")
        a = (tmp_path / "a" / "target_0" / "checkpoint.json").read_bytes()
        b = (tmp_path / "b" / "target_0" / "checkpoint.json").read_bytes()
        assert a != b

    def test_g_prompt_only_evaluates_g_only(self, tiny_config, tmp_path):
        config = replace(tiny_config, no_d_prompts=True, lambda_weight=0.0)
        result = run_experiment(config, tmp_path / "run")
        target = result.targets[0]
        assert target.primary_mode == "g_only"
        assert {r.mode for r in target.reports} == {"g_only"}
        assert all(r.primary for r in target.reports)
        assert target.query_accuracy is None

        path = tmp_path / "run" / "target_0" / "evaluation.json"
        evaluation = json.loads(path.read_text(encoding="utf-8"))
        assert set(evaluation["skipped_modes"]) == {"ensemble", "top_domain_only"}
        assert all("no_d_prompts" in reason for reason in evaluation["skipped_modes"].values())

    def test_no_ensemble_uses_top_domain(self, tiny_config, tmp_path):
        result = run_experiment(replace(tiny_config, no_ensemble=True), tmp_path / "run")
        assert result.targets[0].primary_mode == "top_domain_only"

    def test_dump_data(self, tiny_config, tmp_path):
        run_experiment(tiny_config, tmp_path / "run", dump_data=True)
        payload = json.loads((tmp_path / "run" / "datasets.json").read_text(encoding="utf-8"))
        assert len(payload["domains"]) == tiny_config.n_domains

    def test_invalid_config(self, tiny_config, tmp_path):
        with pytest.raises(ConfigError):
            run_experiment(replace(tiny_config, target=7), tmp_path / "run")

    def test_on_round_callback(self, tiny_config, tmp_path):
        seen = []
        run_experiment(tiny_config, tmp_path / "run", on_round=lambda r, state: seen.append(r))
        assert seen == [0, 1, 2]


class TestSweep:
    def test_sweep_writes_summary(self, tiny_config, tmp_path):
        out = tmp_path / "sweep"
        result = sweep(replace(tiny_config, rounds=2), out)
        assert [t.target for t in result.targets] == [0, 1, 2]
        assert [p.name for p in target_dirs(out)] == ["target_0", "target_1", "target_2"]

        summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
        assert [row["target"] for row in summary["rows"]] == [0, 1, 2]
        average = summary["average"]["ensemble"]
        rows = [row["ensemble"] for row in summary["rows"]]
        assert average == pytest.approx(sum(rows) / 3)
        assert summary["ensemble_minus_g_only"] == pytest.approx(
            average - summary["average"]["g_only"]
        )

        text = load_summary_text(out)
        assert text is not None and "Avg" in text
        assert format_summary(result.summary) in text

        records = load_run_records(out)
        assert len(records) == 3 * 2 * 3
        assert all(r["query_accuracy"] is not None for r in records)

    def test_records_missing_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_run_records(tmp_path / "nothing")
        assert load_summary_text(tmp_path) is None


class TestGradcheckSuite:
    def test_passes_on_small_suite(self):
        report = run_gradcheck(n_configs=2)
        assert set(report.max_errors) == set(FAMILIES)
        assert report.passed, report.format()
        verify(report)

    def test_perturbed_gradients_fail(self):
        report = run_gradcheck(n_configs=1, perturb=1e-2)
        assert set(report.failed) == set(FAMILIES)
        with pytest.raises(VerificationError):
            verify(report)
        assert "NG" in report.format()


class TestSeedSweep:
    def test_writes_per_seed_runs_and_average(self, tiny_config, tmp_path):
        out = tmp_path / "seeds"
        summary = seed_sweep(replace(tiny_config, rounds=1), out, [0, 1])
        assert (out / "seed_0" / "summary.json").exists()
        assert (out / "seed_1" / "target_2" / "evaluation.json").exists()

        saved = json.loads((out / "seeds_summary.json").read_text(encoding="utf-8"))
        assert saved["seeds"] == [0, 1]
        assert [row["seed"] for row in saved["per_seed"]] == [0, 1]
        for key in ("ensemble", "g_only", "top_domain_only", "query_accuracy", "ensemble_minus_g_only"):
            values = [row[key] for row in saved["per_seed"]]
            assert saved["average"][key] == pytest.approx(sum(values) / 2)
        assert saved["average"]["ensemble_minus_g_only"] == pytest.approx(
            saved["average"]["ensemble"] - saved["average"]["g_only"]
        )
        assert set(saved["checks"]) == {
            "ensemble_above_twice_chance",
            "ensemble_non_inferior_to_g_only",
            "query_above_chance",
        }
        assert summary["average"] == saved["average"]

        text = (out / "seeds_summary.txt").read_text(encoding="utf-8")
        assert "Avg" in text and text == format_seed_summary(summary) + "\n"

    def test_per_seed_runs_differ(self, tiny_config, tmp_path):
        seed_sweep(replace(tiny_config, rounds=1), tmp_path, [0, 1])
        a = (tmp_path / "seed_0" / "target_0" / "checkpoint.json").read_bytes()
        b = (tmp_path / "seed_1" / "target_0" / "checkpoint.json").read_bytes()
        assert a != b

    def test_requires_seeds(self, tiny_config, tmp_path):
        with pytest.raises(ValueError):
            seed_sweep(tiny_config, tmp_path, [])

    def test_directional_checks(self):
        average = {"ensemble": 0.5, "ensemble_minus_g_only": -0.004, "query_accuracy": 0.40}
        checks = directional_checks(average, n_classes=5, n_sources=3)
        assert checks["ensemble_above_twice_chance"]["threshold"] == pytest.approx(0.4)
        assert checks["ensemble_above_twice_chance"]["passed"] is True
        assert checks["ensemble_non_inferior_to_g_only"]["passed"] is True
        assert checks["query_above_chance"]["threshold"] == pytest.approx(1 / 3 + 0.10)
        assert checks["query_above_chance"]["passed"] is False

        worse = directional_checks(
            {"ensemble": 0.4, "ensemble_minus_g_only": -0.006, "query_accuracy": None}, 5, 3
        )
        assert worse["ensemble_above_twice_chance"]["passed"] is False
        assert worse["ensemble_non_inferior_to_g_only"]["passed"] is False
        assert worse["query_above_chance"]["passed"] is None

    @pytest.mark.slow
    def test_desk_preset_meets_directional_checks(self, tmp_path):
        summary = seed_sweep(get_preset("desk"), tmp_path, range(5))
        failed = {name: c for name, c in summary["checks"].items() if not c["passed"]}
        assert not failed, format_seed_summary(summary)
