import json

import pytest

from apla.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from tests.test_experiments import RAW


@pytest.fixture
def cfg_path(tmp_path):
    raw = json.loads(json.dumps(RAW))
    raw["train"]["epochs"] = 1
    raw["train"]["throughput_iters"] = 0
    path = tmp_path / "run.json"
    path.write_text(json.dumps(raw))
    return path


def test_train_writes_artifacts(cfg_path, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["train", "--config", str(cfg_path), "--out", str(out), "--seed", "3"]) == EXIT_OK
    assert {p.name for p in out.iterdir()} == {"report.json", "report.md", "epochs.csv", "checkpoint.bin"}
    assert json.loads((out / "report.json").read_text())["body"]["config"]["seed"] == 3
    assert "# Run: apla" in capsys.readouterr().out
    assert main(["report", str(out)]) == EXIT_OK


def test_sweeps(cfg_path, tmp_path, capsys):
    assert main(["sweep-rank", "--config", str(cfg_path), "--r", "2,4", "--out", str(tmp_path / "r")]) == EXIT_OK
    assert (tmp_path / "r" / "table.csv").exists()
    assert main(["sweep-blocks", "--config", str(cfg_path), "--direction", "bottom_to_top"]) == EXIT_OK
    assert main(["ablate-selection", "--config", str(cfg_path), "--strategies", "random,magnitude"]) == EXIT_OK
    assert main(["ablate-components", "--config", str(cfg_path), "--components", "W_O"]) == EXIT_OK
    assert "full" in capsys.readouterr().out
    assert main(["report", str(tmp_path / "r")]) == EXIT_OK


def test_gen_data_then_train_from_file(cfg_path, tmp_path):
    assert main(["gen-data", "--config", str(cfg_path), "--out", str(tmp_path / "d")]) == EXIT_OK
    raw = json.loads(cfg_path.read_text())
    raw["data"] = {"path": str(tmp_path / "d" / "dataset.bin")}
    cfg_path.write_text(json.dumps(raw))
    assert main(["train", "--config", str(cfg_path)]) == EXIT_OK


def test_exit_codes(cfg_path, tmp_path):
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert main(["ablate-components", "--config", str(cfg_path), "--components", "W_Z"]) == EXIT_CONFIG
    assert main(["sweep-rank", "--config", str(cfg_path)]) == EXIT_CONFIG
    raw = json.loads(cfg_path.read_text())
    raw["data"] = {"path": str(tmp_path / "nope.bin")}
    cfg_path.write_text(json.dumps(raw))
    (tmp_path / "nope.bin").write_bytes(b"garbage!")
    assert main(["train", "--config", str(cfg_path)]) == EXIT_DATA
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == EXIT_CONFIG
