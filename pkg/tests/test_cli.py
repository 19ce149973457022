import json

import pandas as pd
import pytest

from app import CommandErrorHandler, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main, parse_overrides
from models.errors import DatasetFormatError, NumericalFaultError, ValidationError
from services.storage_service import load_dataset
from tests.conftest import make_run_config


def _write_config(directory, **changes):
    config = make_run_config(**changes)
    path = directory / "run.json"
    path.write_text(json.dumps(config.to_dict()), encoding="utf-8")
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = _write_config(root)
    data = root / "data"
    assert main(["generate", "--config", config, "--out", str(data), "--noise-fraction", "0.25"]) == EXIT_OK
    run = root / "run"
    assert main([
        "train", "--config", config, "--train-data", str(data / "train.jsonl"),
        "--val-data", str(data / "val.jsonl"), "--out", str(run),
    ]) == EXIT_OK
    return {"root": root, "config": config, "data": data, "run": run}


class TestGenerate:
    def test_writes_splits_and_effective_config(self, workspace):
        data = workspace["data"]
        for name in ("train.jsonl", "val.jsonl", "test.jsonl", "effective_config.json"):
            assert (data / name).is_file()
        train = load_dataset(data / "train.jsonl")
        assert len(train) == 32
        assert sum(e.noisy for e in train) == 8
        assert not any(e.noisy for e in load_dataset(data / "test.jsonl"))
        effective = json.loads((data / "effective_config.json").read_text())
        assert effective["noise_fraction"] == 0.25

    def test_invalid_noise_fraction_writes_nothing(self, tmp_path):
        out = tmp_path / "data"
        code = main(["generate", "--config", _write_config(tmp_path), "--out", str(out), "--noise-fraction", "1.5"])
        assert code == EXIT_VALIDATION
        assert not out.exists()


class TestTrain:
    def test_artifacts(self, workspace):
        run = workspace["run"]
        for name in ("checkpoint.json", "best_checkpoint.json", "history.jsonl", "epoch_summary.csv",
                     "effective_config.json"):
            assert (run / name).is_file()
        meta = json.loads((run / "best_checkpoint.json").read_text())["meta"]
        assert meta["mode"] == "P-GCA"
        assert [entry["epoch"] for entry in meta["validation_costs"]] == [1, 2]
        assert list(pd.read_csv(run / "epoch_summary.csv")["epoch"]) == [1, 2]

    def test_same_seed_gives_identical_checkpoint(self, workspace, tmp_path):
        args = ["train", "--config", workspace["config"], "--train-data", str(workspace["data"] / "train.jsonl"),
                "--val-data", str(workspace["data"] / "val.jsonl"), "--out", str(tmp_path)]
        assert main(args) == EXIT_OK
        for name in ("checkpoint.json", "best_checkpoint.json", "history.jsonl"):
            assert (tmp_path / name).read_bytes() == (workspace["run"] / name).read_bytes()

    def test_html_report(self, workspace, tmp_path):
        args = ["train", "--config", workspace["config"], "--train-data", str(workspace["data"] / "train.jsonl"),
                "--out", str(tmp_path), "--html-report", "--mode", "baseline", "--epochs", "1"]
        assert main(args) == EXIT_OK
        assert (tmp_path / "training_report.html").is_file()

    def test_missing_training_file(self, workspace, tmp_path):
        args = ["train", "--config", workspace["config"], "--train-data", str(tmp_path / "absent.jsonl"),
                "--out", str(tmp_path / "run")]
        assert main(args) == EXIT_VALIDATION

    def test_architecture_mismatch(self, workspace, tmp_path):
        args = ["train", "--config", workspace["config"], "--train-data", str(workspace["data"] / "train.jsonl"),
                "--out", str(tmp_path), "--num-classes", "5"]
        assert main(args) == EXIT_VALIDATION


class TestEvaluate:
    def test_self_check(self, workspace, tmp_path):
        args = ["eval", "--config", workspace["config"], "--checkpoint", str(workspace["run"] / "checkpoint.json"),
                "--data", str(workspace["data"] / "test.jsonl"), "--out", str(tmp_path), "--self-check",
                "--html-report"]
        assert main(args) == EXIT_OK
        metrics = json.loads((tmp_path / "metrics.json").read_text())
        assert metrics["rank_correlation"] == pytest.approx(1.0)
        assert metrics["num_examples"] == 4
        assert 0.0 <= metrics["accuracy"] <= 1.0
        assert (tmp_path / "evaluation_report.html").is_file()

    def test_exact_emd_on_small_grid(self, workspace, tmp_path):
        args = ["eval", "--config", workspace["config"], "--checkpoint", str(workspace["run"] / "checkpoint.json"),
                "--data", str(workspace["data"] / "test.jsonl"), "--out", str(tmp_path), "--emd-method", "exact"]
        assert main(args) == EXIT_OK
        assert json.loads((tmp_path / "metrics.json").read_text())["emd"] >= 0.0

    def test_checkpoint_architecture_mismatch(self, workspace, tmp_path):
        args = ["eval", "--config", workspace["config"], "--checkpoint", str(workspace["run"] / "checkpoint.json"),
                "--data", str(workspace["data"] / "test.jsonl"), "--out", str(tmp_path), "--hidden-size", "16"]
        assert main(args) == EXIT_VALIDATION


class TestSamplingAndRendering:
    def test_mc_sample_dumps(self, workspace, tmp_path):
        args = ["mc-sample", "--config", workspace["config"], "--checkpoint", str(workspace["run"] / "checkpoint.json"),
                "--data", str(workspace["data"] / "test.jsonl"), "--out", str(tmp_path), "--samples", "2",
                "--limit", "1"]
        assert main(args) == EXIT_OK
        first_id = load_dataset(workspace["data"] / "test.jsonl")[0].example_id
        record = json.loads((tmp_path / f"{first_id}.json").read_text())
        assert len(record["per_sample_variances"]) == 2
        assert len(record["per_sample_entropy"]) == 2
        for suffix in ("attention.pgm", "sample-000.pgm", "sample-001.pgm"):
            assert (tmp_path / f"{first_id}.{suffix}").read_bytes().startswith(b"P5\n48 48\n255\n")

    def test_zero_samples_rejected(self, workspace, tmp_path):
        args = ["mc-sample", "--config", workspace["config"], "--checkpoint", str(workspace["run"] / "checkpoint.json"),
                "--data", str(workspace["data"] / "test.jsonl"), "--out", str(tmp_path), "--samples", "0"]
        assert main(args) == EXIT_VALIDATION

    def test_visualize_writes_three_stages(self, workspace, tmp_path):
        example_id = load_dataset(workspace["data"] / "test.jsonl")[0].example_id
        args = ["visualize", "--config", workspace["config"], "--checkpoint", str(workspace["run"] / "checkpoint.json"),
                "--data", str(workspace["data"] / "test.jsonl"), "--out", str(tmp_path), "--ids", example_id]
        assert main(args) == EXIT_OK
        assert (tmp_path / f"{example_id}.raw.pgm").is_file()
        assert (tmp_path / f"{example_id}.smoothed.pgm").is_file()
        assert (tmp_path / f"{example_id}.overlay.ppm").read_bytes().startswith(b"P6\n48 48\n255\n")

    def test_visualize_unknown_id(self, workspace, tmp_path):
        out = tmp_path / "maps"
        args = ["visualize", "--config", workspace["config"], "--checkpoint", str(workspace["run"] / "checkpoint.json"),
                "--data", str(workspace["data"] / "test.jsonl"), "--out", str(out), "--ids", "ex-999999"]
        assert main(args) == EXIT_VALIDATION
        assert not out.exists()


class TestAblate:
    def test_table_has_one_row_per_run(self, workspace, tmp_path):
        args = ["ablate", "--config", workspace["config"], "--train-data", str(workspace["data"] / "train.jsonl"),
                "--val-data", str(workspace["data"] / "val.jsonl"), "--out", str(tmp_path),
                "--modes", "baseline", "P-GCA", "--seeds", "0", "1", "--epochs", "1"]
        assert main(args) == EXIT_OK
        table = pd.read_csv(tmp_path / "ablation.csv")
        assert list(table["mode"]) == ["baseline", "baseline", "P-GCA", "P-GCA"]
        assert list(table["seed"]) == [0, 1, 0, 1]

    def test_unknown_mode(self, workspace, tmp_path):
        args = ["ablate", "--config", workspace["config"], "--train-data", str(workspace["data"] / "train.jsonl"),
                "--val-data", str(workspace["data"] / "val.jsonl"), "--out", str(tmp_path), "--modes", "GCA++"]
        assert main(args) == EXIT_VALIDATION


class TestCommandLine:
    def test_no_command(self):
        assert main([]) == EXIT_VALIDATION

    def test_unknown_override(self, tmp_path):
        assert main(["generate", "--out", str(tmp_path), "--learning-rate", "0.1"]) == EXIT_VALIDATION

    def test_parse_overrides(self):
        assert parse_overrides(["--mode", "PUL", "--train.seed=3"]) == {"mode": "PUL", "train.seed": "3"}

    def test_override_without_value(self):
        with pytest.raises(ValidationError):
            parse_overrides(["--mode"])

    def test_stray_positional(self):
        with pytest.raises(ValidationError):
            parse_overrides(["PUL"])

    @pytest.mark.parametrize("error, error_type, code", [
        (DatasetFormatError("bad", line=2), "dataset_format", EXIT_VALIDATION),
        (ValidationError("bad"), "validation", EXIT_VALIDATION),
        (NumericalFaultError("nan"), "numerical", EXIT_NUMERICAL),
        (RuntimeError("boom"), "unknown", 1),
    ])
    def test_error_classification(self, error, error_type, code):
        info = CommandErrorHandler.handle_command_error(error)
        assert info["error_type"] == error_type
        assert info["exit_code"] == code
