import csv
import json

import numpy as np
import pytest

from lkp.cli import main, run
from lkp.data import InteractionDataset
from lkp.model import EmbeddingTable


def only(directory, pattern):
    found = sorted(directory.glob(pattern))
    assert len(found) == 1, found
    return found[0]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.json"
    cfg.write_text(json.dumps({"num_users": 80, "num_items": 120, "num_categories": 6, "d": 8,
                               "kernel_rank": 8, "kernel_epochs": 2, "eval_interval": 1}))
    assert main(["synth", "--config", str(cfg), "--out", str(root / "synth"), "--seed", "1"]) == 0
    data = only(root / "synth", "synth-*.json")
    assert main(["train-kernel", "--config", str(cfg), "--data", str(data), "--out", str(root / "kernel")]) == 0
    kernel = only(root / "kernel", "train-kernel-*.bin")
    return root, cfg, data, kernel


def test_synth_output_and_echo(workspace):
    root, _, data, _ = workspace
    d = InteractionDataset.load(data)
    assert d.num_users == 80 and d.is_split
    echo = json.loads((root / "synth" / "config-echo.json").read_text())
    assert echo["command"] == "synth" and echo["seed"] == 1 and echo["num_items"] == 120


def test_train_then_evaluate(workspace, tmp_path):
    _, cfg, data, kernel = workspace
    code = main(["train", "--config", str(cfg), "--data", str(data), "--kernel", str(kernel),
                 "--variant", "NPS", "--epochs", "2", "--out", str(tmp_path)])
    assert code == 0
    ckpt = only(tmp_path, "train-*.bin")
    rows = [json.loads(line) for line in only(tmp_path, "train-*.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in rows] == [0, 1, 2]
    before = ckpt.read_bytes()
    assert main(["evaluate", "--data", str(data), "--model", str(ckpt), "--out", str(tmp_path / "ev")]) == 0
    assert ckpt.read_bytes() == before
    rep = json.loads(only(tmp_path / "ev", "evaluate-*.json").read_text())
    assert set(rep["metrics"]) == {"5", "10", "20"}


def test_train_is_reproducible_from_echoed_config(workspace, tmp_path):
    _, cfg, data, kernel = workspace
    args = ["--config", str(cfg), "--data", str(data), "--kernel", str(kernel), "--epochs", "2", "--seed", "4"]
    assert run("train", [*args, "--out", str(tmp_path / "a")]) == 0
    echo = tmp_path / "a" / "config-echo.json"
    cfg2 = {k: v for k, v in json.loads(echo.read_text()).items() if k != "command"}
    replay = tmp_path / "replay.json"
    replay.write_text(json.dumps(cfg2))
    assert run("train", ["--config", str(replay), "--out", str(tmp_path / "b")]) == 0
    a = only(tmp_path / "a", "train-*.bin").read_bytes()
    b = only(tmp_path / "b", "train-*.bin").read_bytes()
    assert a == b


def test_nps_with_unequal_n_is_a_usage_error(workspace, tmp_path, capsys):
    _, _, data, kernel = workspace
    code = main(["train", "--data", str(data), "--kernel", str(kernel), "--objective", "lkp_nps",
                 "--k", "5", "--n", "4", "--out", str(tmp_path)])
    assert code == 1
    assert "n == k" in capsys.readouterr().err
    assert not list(tmp_path.glob("train-*"))


def test_unknown_config_key_is_fatal(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"learning_rat": 0.1}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "learning_rat" in capsys.readouterr().err


def test_bad_flag_and_command_are_usage_errors(tmp_path):
    assert main(["train", "--k", "five"]) == 1
    assert main(["frobnicate"]) == 1


def test_missing_data_is_a_data_error(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nope.json"), "--objective", "bpr", "--out", str(tmp_path)]) == 2


def test_bad_ratings_file_is_a_data_error(tmp_path):
    r = tmp_path / "r.csv"
    r.write_text("u,i,5\nu,j,oops\n")
    c = tmp_path / "c.csv"
    c.write_text("i,x\n")
    assert main(["ingest", "--ratings", str(r), "--categories", str(c), "--out", str(tmp_path)]) == 2


def test_ingest_command(tmp_path):
    rows = [f"u{u},i{i},{5 if (u + i) % 7 else 3},{i}" for u in range(12) for i in range(14)]
    (tmp_path / "r.csv").write_text("\n".join(rows) + "\n")
    (tmp_path / "c.csv").write_text("\n".join(f"i{i},g{i % 3}" for i in range(14)) + "\n")
    code = main(["ingest", "--ratings", str(tmp_path / "r.csv"), "--categories", str(tmp_path / "c.csv"),
                 "--out", str(tmp_path / "o")])
    assert code == 0
    d = InteractionDataset.load(only(tmp_path / "o", "ingest-*.json"))
    assert d.user_degrees().min() >= 10 and d.is_split


def test_checkpoint_shape_mismatch(workspace, tmp_path):
    _, _, data, _ = workspace
    EmbeddingTable(np.zeros((3, 2)), np.zeros((4, 2))).save(tmp_path / "m.bin")
    assert main(["evaluate", "--data", str(data), "--model", str(tmp_path / "m.bin"), "--out", str(tmp_path)]) == 2


def test_trend_command(workspace, tmp_path):
    _, cfg, data, kernel = workspace
    code = main(["trend", "--config", str(cfg), "--data", str(data), "--kernel", str(kernel),
                 "--variant", "PS", "--trend-epochs", "0,2", "--out", str(tmp_path)])
    assert code == 0
    rows = list(csv.reader(only(tmp_path, "trend-*.csv").open()))
    assert rows[0] == ["epoch", "target_count", "mean_prob"]
    assert len(rows) == 1 + 2 * 6


def test_sweep_command(workspace, tmp_path):
    _, cfg, data, kernel = workspace
    code = main(["sweep", "--config", str(cfg), "--data", str(data), "--kernel", str(kernel),
                 "--variant", "PS", "--param", "k", "--values", "2,3", "--epochs", "1", "--out", str(tmp_path)])
    assert code == 0
    rows = list(csv.DictReader(only(tmp_path, "sweep-*.csv").open()))
    assert len(rows) == 2 * 3 * 4
    assert {(r["k"], r["n"]) for r in rows} == {("2", "2"), ("3", "3")}


def test_outputs_never_collide(workspace, tmp_path):
    _, cfg, _, _ = workspace
    for _ in range(2):
        assert main(["synth", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert len(list(tmp_path.glob("synth-*.json"))) == 2


def test_verify_passes(tmp_path, capsys):
    assert main(["verify", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "checks passed" in out and "FAIL" not in out
