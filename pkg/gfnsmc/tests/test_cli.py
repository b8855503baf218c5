"""
Tests the command-line interface end to end on a tiny planted target.
"""
import csv
import json
import os
import shutil

import pytest

from gfnsmc import log
from gfnsmc.cli import main
from gfnsmc.io import load_checkpoint, load_samples
from gfnsmc.trainer import checkpoint_path

TINY_CONFIG = {
    "profile": "desk",
    "target": {"name": "planted", "dim": 1, "z": 7.0},
    "n_steps": 8,
    "batch_size": 32,
    "hidden_policy": 16,
    "hidden_flow": 16,
    "chunk": 4,
    "buffer_capacity": 1000,
    "checkpoint_every": 0,
    "log_every": 1,
}


@pytest.fixture(scope="function", autouse=True)
def clean_files(directory="tmp"):
    # This happens before the test function call
    if os.path.isdir(directory):
        shutil.rmtree(directory)
    os.makedirs(directory)
    yield
    # This happens after the test function call
    log.config_root_logger(verbose=True)
    shutil.rmtree(directory)


def _train(algo="combined", epochs=2):
    config = os.path.join("tmp", "config.json")
    with open(config, "w") as f:
        json.dump(TINY_CONFIG, f)
    out_dir = os.path.join("tmp", "run")
    argv = ["train", "--config", config, "--algo", algo, "--seed", "1"]
    assert main(argv + ["--out", out_dir, "--epochs", str(epochs)]) == 0
    return out_dir


def test_enumerate(capsys):
    assert main(["enumerate", "--len", "3"]) == 0
    out = capsys.readouterr().out
    assert "Z = 27\n" in out
    assert "terminal states = 8" in out
    assert main(["enumerate", "--len", "2", "--reward", "uniform"]) == 0
    assert "Z = 4\n" in capsys.readouterr().out


def test_usage_errors():
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["enumerate"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["train", "--config", "a.json", "--resume", "b.json", "--seed", "0", "--out", "x"])
    assert e.value.code == 2


def test_errors_return_one():
    assert main(["enumerate", "--vocab", "ABCD", "--len", "11"]) == 1
    assert main(["sample", "--checkpoint", "tmp/missing.json", "--n", "4", "--seed", "0",
                 "--out", "tmp/s.csv"]) == 1


def test_train_keeps_configured_algorithm():
    config = os.path.join("tmp", "config.json")
    with open(config, "w") as f:
        json.dump(dict(TINY_CONFIG, algo="iwt"), f)
    out_dir = os.path.join("tmp", "run")
    argv = ["train", "--config", config, "--seed", "1", "--out", out_dir, "--epochs", "1"]
    assert main(argv) == 0
    assert load_checkpoint(checkpoint_path(out_dir, 1)).config["algo"] == "iwt"
    assert main(argv[:2] + ["--algo", "smc"] + argv[2:]) == 0
    assert load_checkpoint(checkpoint_path(out_dir, 1)).config["algo"] == "smc"


def test_missing_config_returns_one():
    argv = ["train", "--config", "tmp/missing.yaml", "--seed", "0", "--out", "tmp/run"]
    assert main(argv) == 1


def test_train_and_resume():
    out_dir = _train()
    assert os.path.isfile(checkpoint_path(out_dir, 2))
    assert os.path.isfile(os.path.join(out_dir, "metrics.csv"))
    assert os.path.isfile(os.path.join(out_dir, "gfnsmc.log"))
    argv = ["train", "--resume", checkpoint_path(out_dir, 2), "--seed", "1"]
    assert main(argv + ["--out", out_dir, "--epochs", "3"]) == 0
    assert os.path.isfile(checkpoint_path(out_dir, 3))
    with open(os.path.join(out_dir, "metrics.csv"), "r", newline="") as f:
        assert len(list(csv.reader(f))) == 4


def test_eval(capsys):
    checkpoint = checkpoint_path(_train(), 2)
    capsys.readouterr()
    table = os.path.join("tmp", "eval.csv")
    argv = ["eval", "--checkpoint", checkpoint, "--metrics", "elbo,eubo", "--n", "16"]
    assert main(argv + ["--seed", "0", "--csv", table]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["elbo"] is not None
    assert report["eubo"] is not None
    assert report["sample_count"] == 16
    assert main(argv + ["--seed", "0", "--csv", table]) == 0
    with open(table, "r", newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 2
    assert rows[0]["elbo"] == rows[1]["elbo"]
    assert rows[0]["sinkhorn"] == ""
    assert main(["eval", "--checkpoint", checkpoint, "--metrics", "accuracy", "--seed", "0"]) == 1


def test_sample_and_smc(capsys):
    checkpoint = checkpoint_path(_train(), 2)
    samples = os.path.join("tmp", "samples.csv")
    assert main(["sample", "--checkpoint", checkpoint, "--n", "10", "--seed", "0", "--out", samples]) == 0
    columns, table = load_samples(samples)
    assert columns == ["x0"]
    assert table.shape == (10, 1)

    capsys.readouterr()
    particles = os.path.join("tmp", "particles.csv")
    argv = ["smc", "--checkpoint", checkpoint, "--n", "16", "--chunk", "2"]
    assert main(argv + ["--resampling", "systematic", "--seed", "0", "--out", particles]) == 0
    assert "log_z_hat = " in capsys.readouterr().out
    columns, table = load_samples(particles)
    assert columns == ["x0", "log_weight", "log_z_hat"]
    assert table.shape == (16, 3)
    assert main(argv + ["--chunk", "3", "--seed", "0", "--out", particles]) == 1


def test_dump_buffer():
    checkpoint = checkpoint_path(_train(), 2)
    dump = os.path.join("tmp", "buffer.csv")
    assert main(["dump-buffer", "--checkpoint", checkpoint, "--out", dump]) == 0
    with open(dump, "r", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["x0", "log_weight", "batch_id", "epoch", "provenance"]
    assert len(rows) == 65
    assert {row[-1] for row in rows[1:]} == {"smc", "on_policy"}


def test_dump_buffer_without_buffer():
    checkpoint = checkpoint_path(_train(algo="iwt", epochs=1), 1)
    assert main(["dump-buffer", "--checkpoint", checkpoint, "--out", "tmp/buffer.csv"]) == 1
