import json

import numpy as np
import pytest

from apla.checkpoint import checkpoint_load
from apla.errors import ConfigError
from apla.experiments import (STANDARD_R_GRIDS, ExperimentReport, RunConfig, ablate_components, ablate_selection,
                              block_ranges, check_r_values, load_config, sweep_blocks, sweep_rank, train)

RAW = {
    "model": {"image_size": 4, "patch_size": 2, "channels": 1, "d": 8, "h": 2, "L": 2, "num_classes": 3},
    "method": {"kind": "apla", "r": 4},
    "data": {"synth": {"seed": 1, "scale": 2.0, "tie_gap": 0.002, "n_train": 48, "n_val": 24, "n_test": 24}},
    "train": {"epochs": 3, "batch_size": 16, "base_lr": 0.01, "throughput_iters": 1},
    "seed": 0,
}


def config(**changes):
    raw = json.loads(json.dumps(RAW))
    for key, value in changes.items():
        raw[key] = {**raw[key], **value} if isinstance(value, dict) and key in raw else value
    return RunConfig.from_dict(raw)


def test_report_contents():
    rep = train(config())
    body = rep.body
    assert len(body["epochs"]) == 3
    assert 0.0 <= rep.test_accuracy <= 1.0 and 1 <= body["best_epoch"] <= 3
    assert body["plan"]["trainable_scalars"] == 2 * 8 * 4 + 8 * 3 + 3
    assert set(rep.timing["throughput"]) == {"train", "inference"}
    assert rep.labels == {"strategy": "random"}


def test_identical_configs_identical_artifacts(tmp_path):
    a = train(config(out_dir=str(tmp_path / "a")))
    b = train(config(out_dir=str(tmp_path / "b")))
    assert a.body_json() == b.body_json()
    for name in ("epochs.csv", "checkpoint.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    on_disk = ExperimentReport.read(tmp_path / "a" / "report.json")
    assert on_disk.body_hash() == a.body_hash()
    assert "test accuracy" in (tmp_path / "a" / "report.md").read_text()


def test_checkpoint_is_best_epoch_model(tmp_path):
    rep, best = train(config(out_dir=str(tmp_path)), return_params=True)
    assert checkpoint_load(tmp_path / "checkpoint.bin").equals(best)


def test_zero_epochs_reports_init_accuracy():
    rep = train(config(train={"epochs": 0}))
    assert rep.body["epochs"] == [] and rep.body["best_epoch"] is None
    assert 0.0 <= rep.test_accuracy <= 1.0


def test_linear_probe_feature_cache_matches_direct_training():
    cfg = config(method={"kind": "linear", "r": None})
    rep = train(cfg.replace(method={"kind": "linear"}))
    assert rep.body["plan"]["trainable_scalars"] == 8 * 3 + 3
    rep2 = train(cfg.replace(method={"kind": "linear"}))
    assert rep.body_json() == rep2.body_json()


def test_init_from_checkpoint(tmp_path):
    rep, best = train(config(out_dir=str(tmp_path)), return_params=True)
    again = train(config(init=str(tmp_path / "checkpoint.bin"), train={"epochs": 0}))
    assert again.test_accuracy == rep.test_accuracy


@pytest.mark.parametrize("raw,match", [
    ({"model": {}}, "method"),
    ({"model": {}, "method": {}}, "kind"),
    ({"model": {"d": 30, "h": 4}, "method": {"kind": "full"}}, "d"),
    ({"model": {}, "method": {"kind": "full"}, "train": {"epochs": -1}}, "train.epochs"),
    ({"model": {}, "method": {"kind": "full"}, "train": {"lr": 1}}, "lr"),
    ({"model": {}, "method": {"kind": "full"}, "data": {}}, "exactly one"),
    ({"model": {}, "method": {"kind": "full"}, "train": {"epochs": 5, "warmup_epochs": 5}}, "warmup"),
])
def test_config_errors_name_the_field(raw, match):
    with pytest.raises(ConfigError, match=match):
        RunConfig.from_dict(raw)


def test_json_syntax_error_reports_line_and_column(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "model": {},\n  "method": {"kind": "full",}\n}\n')
    with pytest.raises(ConfigError, match=r"line 3, column"):
        load_config(path)


def test_components_table_has_full_row():
    table = ablate_components(config(train={"epochs": 1}), ["W_O", "cls"])
    assert table.column("component") == ["W_O", "cls", "full"]
    assert "| component |" in table.to_markdown()
    assert table.to_csv().splitlines()[0] == "component,trainable_scalars,best_val_accuracy,test_accuracy"


@pytest.mark.parametrize("components", [[], ["W_Z"]])
def test_components_errors(components):
    with pytest.raises(ConfigError):
        ablate_components(config(), components)


def test_rank_sweep_costs_and_selection():
    table = sweep_rank(config(train={"epochs": 1}), [1, 4, 8])
    opt = table.column("optimizer_bytes")
    assert opt[0] < opt[1] < opt[2]
    assert len(set(table.column("activation_bytes_per_sample"))) == 1
    assert table.column("selected").count("*") == 1
    with pytest.raises(ConfigError):
        sweep_rank(config(), [9])


def test_standard_r_grids_accepted_verbatim():
    for d, grid in STANDARD_R_GRIDS.items():
        assert check_r_values(grid, d) == grid
    with pytest.raises(ConfigError):
        check_r_values([8, 16, 128, 512, 769], 768)


def test_full_rank_sweep_row_matches_component_run():
    cfg = config(train={"epochs": 2})
    full_rank = train(cfg.replace(method={"kind": "apla", "r": 8}))
    component = train(cfg.replace(method={"kind": "component", "which": "W_O"}))
    assert [e["train_loss"] for e in full_rank.body["epochs"]] == [e["train_loss"] for e in component.body["epochs"]]


def test_selection_table_and_neutrality():
    cfg = config(method={"r": 8}, train={"epochs": 1})
    table = ablate_selection(cfg, ["random", "gradient", "magnitude"])
    assert len(set(table.column("indices_hash"))) == 1
    assert len(set(table.column("body_sha256"))) == 1
    with pytest.raises(ConfigError):
        ablate_selection(cfg, ["largest"])


def test_random_strategy_hashes_differ_across_seeds():
    hashes = {train(config(seed=s, train={"epochs": 0})).body["plan"]["indices_hash"] for s in range(3)}
    assert len(hashes) == 3


def test_block_sweep():
    assert block_ranges(4, "bottom_to_top") == [(0, 1), (0, 2), (0, 3), (0, 4)]
    assert block_ranges(4, "top_to_bottom") == [(3, 4), (2, 4), (1, 4), (0, 4)]
    with pytest.raises(ConfigError):
        block_ranges(4, "sideways")
    cfg = config(train={"epochs": 1})
    table = sweep_blocks(cfg, "top_to_bottom")
    assert table.column("blocks") == [1, 2]
    default = train(cfg)
    assert table.rows[-1]["body_sha256"] != "" and table.rows[-1]["test_accuracy"] == default.test_accuracy


def test_sweep_rows_parallel_equal_serial():
    cfg = config(train={"epochs": 1, "throughput_iters": 0})
    serial = sweep_rank(cfg, [2, 4])
    parallel = sweep_rank(cfg, [2, 4], jobs=2)
    assert serial.column("body_sha256") == parallel.column("body_sha256")


def test_rows_reproducible_standalone():
    cfg = config(train={"epochs": 1})
    table = sweep_rank(cfg, [2])
    alone = train(cfg.replace(method={"kind": "apla", "r": 2}))
    assert table.rows[0]["body_sha256"] == alone.body_hash()
    assert np.isclose(table.rows[0]["test_accuracy"], alone.test_accuracy)
