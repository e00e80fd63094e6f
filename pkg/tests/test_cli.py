"""
コマンドラインの終了コードのテスト
"""

import json

import pytest

import src.experiment.runner as runner
from src.config.settings_manager import get_settings_manager
from src.errors import TrainingError
from src.main import EXIT_CONFIG_ERROR, EXIT_OK, EXIT_RUNTIME_ERROR, EXIT_VERIFICATION_FAILED, main


@pytest.fixture
def config_file(tiny_config, tmp_path):
    return get_settings_manager().save(tiny_config, tmp_path / "tiny.json")


def test_run(config_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", str(config_file), "--out", str(out)]) == EXIT_OK
    assert (out / "target_0" / "evaluation.json").exists()
    assert "target 0: ensemble accuracy" in capsys.readouterr().out


def test_sweep(config_file, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(config_file), "--out", str(out)]) == EXIT_OK
    assert (out / "summary.json").exists()
    assert (out / "target_2").is_dir()


def test_sweep_over_seeds(config_file, tmp_path, capsys):
    out = tmp_path / "seeds"
    assert main(["sweep", "--config", str(config_file), "--out", str(out), "--seeds", "0", "1"]) == EXIT_OK
    assert (out / "seeds_summary.json").exists()
    assert (out / "seed_1" / "summary.json").exists()
    assert "query_above_chance" in capsys.readouterr().out


def test_unknown_key_is_config_error(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"rounds": 1, "epochs": 3}), encoding="utf-8")
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "run")]) == EXIT_CONFIG_ERROR
    assert "epochs" in capsys.readouterr().err


def test_invalid_value_is_config_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"clients_per_round": 50}), encoding="utf-8")
    assert main(["run", "--config", str(path)]) == EXIT_CONFIG_ERROR


def test_config_leaving_clients_without_data_is_config_error(tmp_path, capsys):
    path = tmp_path / "small.json"
    path.write_text(json.dumps({"samples_per_pair": 3, "rounds": 1}), encoding="utf-8")
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "run")]) == EXIT_CONFIG_ERROR
    assert "samples_per_pair" in capsys.readouterr().err


def test_training_failure_is_runtime_error(config_file, tmp_path, monkeypatch, capsys):
    def failing(*args, **kwargs):
        raise TrainingError("損失が有限ではありません", client_id=2, iteration=0, round_index=1)

    monkeypatch.setattr(runner, "run_experiment", failing)
    assert main(["run", "--config", str(config_file), "--out", str(tmp_path / "run")]) == EXIT_RUNTIME_ERROR
    assert "client=2" in capsys.readouterr().err


def test_gradcheck_passes():
    assert main(["gradcheck", "--configs", "2"]) == EXIT_OK


def test_gradcheck_perturb_fails():
    assert main(["gradcheck", "--configs", "1", "--perturb"]) == EXIT_VERIFICATION_FAILED
