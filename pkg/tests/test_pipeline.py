import json

import numpy as np
import pytest
import torch
import yaml

from src.config import config_from_dict, resolve_seeds
from src.datasets.masks import write_mask
from src.main import EXIT_CONFIG, EXIT_DATA, EXIT_OK, EXIT_STAGE, main, marker_path, run_pipeline, run_stages
from tests.conftest import tiny_config_dict


@pytest.fixture(autouse=True)
def restore_determinism():
    enabled = torch.are_deterministic_algorithms_enabled()
    threads = torch.get_num_threads()
    yield
    torch.use_deterministic_algorithms(enabled)
    torch.set_num_threads(threads)


@pytest.fixture
def config_file(tmp_path):
    def write(raw: dict | None = None):
        path = tmp_path / "config.yaml"
        path.write_text(yaml.safe_dump(raw if raw is not None else tiny_config_dict(tmp_path / "run")))
        return str(path)

    return write


class TestExitCodes:
    def test_missing_prerequisite_is_a_stage_error(self, config_file):
        assert main(["evaluate", "--config", config_file()]) == EXIT_STAGE

    def test_invalid_config(self, config_file):
        assert main(["run", "--config", config_file({"train": {"mode": "bogus"}})]) == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "absent.yaml")]) == EXIT_CONFIG

    def test_malformed_labels_file(self, tmp_path, config_file):
        root = tmp_path / "voc"
        root.mkdir()
        (root / "labels.txt").write_text("img_1\n")
        raw = tiny_config_dict(tmp_path / "run")
        raw["dataset"] = {"source": "voc", "root": str(root)}
        assert main(["train", "--config", config_file(raw), "--data", str(root)]) == EXIT_DATA

    def test_oc_mode_without_classifier(self, config_file, synthetic_dir):
        argv = ["train", "--config", config_file(), "--data", str(synthetic_dir), "--mode", "p_oc"]
        assert main(argv) == EXIT_CONFIG


def test_generate_is_skipped_once_complete(tmp_path, config_file):
    path = config_file()
    assert main(["generate", "--config", path]) == EXIT_OK
    run_dir = tmp_path / "run"
    assert marker_path(run_dir, "generate").exists()
    assert (run_dir / "data" / "labels.txt").exists()

    config = resolve_seeds(config_from_dict(tiny_config_dict(run_dir)))
    results = run_stages(config, ["generate"])
    assert [r.status for r in results] == ["skipped"]
    assert [r.status for r in run_stages(config, ["generate"], force=True)] == ["done"]
    assert json.loads((run_dir / "stages.json").read_text())[0]["status"] == "done"


def test_marker_paths(tmp_path):
    assert marker_path(tmp_path, "refine-rw") == tmp_path / "masks" / ".complete"
    assert marker_path(tmp_path, "report") == tmp_path / ".report.complete"


def test_evaluate_prediction_directory(tmp_path, capsys):
    rng = np.random.default_rng(0)
    for i in range(3):
        gt = rng.integers(0, 3, (8, 8))
        write_mask(tmp_path / "gt" / f"x{i}.png", gt)
        write_mask(tmp_path / "pred" / f"x{i}.png", gt)
    argv = ["evaluate", "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "gt"), "--classes", "2"]
    assert main(argv + ["--out", str(tmp_path / "out")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "class_1" in out and "100.00" in out
    assert (tmp_path / "out" / "per_class.csv").exists()


def test_report_for_empty_run_dir(tmp_path):
    assert main(["report", "--run-dir", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "report.html").exists()


@pytest.mark.slow
def test_full_pipeline(tmp_path, tiny_config):
    results = run_pipeline(tiny_config)
    run_dir = tmp_path / "run"
    assert [r.status for r in results] == ["done"] * 10
    for artifact in [
        "oc/model.pt",
        "cam/noc.pt",
        "cam/metrics.log",
        "c2amh/model.pt",
        "seeds/stats.csv",
        "evaluation/priors_summary.json",
        "evaluation/masks_summary.json",
        "evaluation/sweep.csv",
        "evaluation/groups.csv",
        "report.html",
    ]:
        assert (run_dir / artifact).exists(), artifact
    assert len(list((run_dir / "masks").glob("*.png"))) == 6

    rerun = run_pipeline(tiny_config)
    assert all(r.status == "skipped" for r in rerun)

    again = resolve_seeds(config_from_dict(tiny_config_dict(tmp_path / "run2")))
    run_pipeline(again)
    other = tmp_path / "run2"
    assert (run_dir / "cam" / "metrics.log").read_text() == (other / "cam" / "metrics.log").read_text()
    for mask in sorted((run_dir / "masks").glob("*.png")):
        assert mask.read_bytes() == (other / "masks" / mask.name).read_bytes(), mask.name
