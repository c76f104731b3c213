import json

import pandas as pd
import pytest

from app.main import EXIT_INTERNAL_ERROR, EXIT_OK, EXIT_USER_ERROR, main

TINY_CONFIG = {
    "stage_epochs": [1, 1, 1],
    "batch_size": 32,
    "seed": 2,
    "model": {"latent_dim": 4, "filters": [4, 4], "n_total": 8, "hidden": 4},
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "train.json"
    path.write_text(json.dumps(TINY_CONFIG))
    return path


@pytest.fixture
def data_dir(tmp_path):
    out = tmp_path / "data"
    code = main(["generate", "--count", "100", "--size", "16", "--task", "shape=square,x>0.5",
                 "--seed", "1", "--out", str(out)])
    assert code == EXIT_OK
    return out


def test_full_pipeline(data_dir, config_file, tmp_path):
    assert (data_dir / "manifest.json").exists()

    run_dir = tmp_path / "run"
    assert main(["train", "--data", str(data_dir), "--config", str(config_file), "--out", str(run_dir)]) == EXIT_OK
    manifest = json.loads((run_dir / "run_manifest.json").read_text())
    assert manifest["config"]["model"]["image_size"] == 16
    assert manifest["seed"] == 2
    assert len(pd.read_csv(run_dir / "metrics.csv")) == 3

    ckpt = str(run_dir / "stage3.cldr")
    assert main(["eval", "--ckpt", ckpt]) == EXIT_OK
    summary = json.loads((run_dir / "eval" / "summary.json").read_text())
    assert set(summary) == {"task_accuracy", "concept_error", "mean_iou_top2", "mean_iou_top5"}

    assert main(["attribute", "--ckpt", ckpt, "--concept", "is_right", "--samples", "0,2"]) == EXIT_OK
    assert (run_dir / "eval" / "attribution_is_right.csv").exists()
    assert main(["traverse", "--ckpt", ckpt, "--sample", "1", "--dims", "0", "--steps", "4"]) == EXIT_OK
    assert (run_dir / "eval" / "traversal_s1_d0_03.pgm").exists()
    assert main(["intervene", "--ckpt", ckpt, "--fractions", "0,0.5,1"]) == EXIT_OK
    assert (run_dir / "eval" / "intervention.csv").exists()

    assert main(["attribute", "--ckpt", ckpt, "--concept", "is_round"]) == EXIT_USER_ERROR


def test_seed_and_ablation_overrides(data_dir, config_file, output_dir):
    code = main(["train", "--data", str(data_dir), "--config", str(config_file),
                 "--ablation", "blackbox", "--seed", "7"])
    assert code == EXIT_OK
    manifest = json.loads((output_dir / "runs" / "blackbox-seed7" / "run_manifest.json").read_text())
    assert manifest["config"]["ablation"] == "blackbox"
    assert manifest["seed"] == 7


@pytest.mark.parametrize("argv", [
    ["generate", "--count", "10", "--size", "16"],
    ["generate", "--size", "24", "--count", "100"],
    ["generate", "--task", "shape=square", "--count", "100", "--size", "16"],
    ["generate", "--colour", "red"],
    ["train"],
    ["train", "--data", "absent", "--workers", "2"],
    ["frobnicate"],
])
def test_user_errors(argv, tmp_path):
    if argv[0] == "generate":
        argv = argv + ["--out", str(tmp_path / "data")]
    assert main(argv) == EXIT_USER_ERROR
    assert not (tmp_path / "data" / "dataset.cldr").exists()


def test_unknown_config_key(data_dir, tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({**TINY_CONFIG, "learning_rate": 0.1}))
    assert main(["train", "--data", str(data_dir), "--config", str(path), "--out", str(tmp_path / "r")]) == EXIT_USER_ERROR


def test_mismatched_image_size(data_dir, tmp_path):
    path = tmp_path / "big.json"
    path.write_text(json.dumps({**TINY_CONFIG, "model": {**TINY_CONFIG["model"], "image_size": 32}}))
    assert main(["train", "--data", str(data_dir), "--config", str(path), "--out", str(tmp_path / "r")]) == EXIT_USER_ERROR


def test_missing_inputs(tmp_path):
    assert main(["train", "--data", str(tmp_path / "absent")]) == EXIT_USER_ERROR
    assert main(["eval", "--ckpt", str(tmp_path / "absent.cldr")]) == EXIT_USER_ERROR


def test_internal_error(mocker, tmp_path):
    mocker.patch("app.commands.generate.SpriteDatasetGenerator.generate", side_effect=RuntimeError("boom"))
    assert main(["generate", "--count", "100", "--out", str(tmp_path / "d")]) == EXIT_INTERNAL_ERROR


def test_version(capsys):
    assert main(["--version"]) == EXIT_OK
    assert "dicon" in capsys.readouterr().out
