import subprocess
import sys

import numpy as np
import pytest
import yaml

from seqdisent.archive import read_archive
from seqdisent.cli import main
from seqdisent.datasets import load_dataset

TINY = {"d_zf": 8, "d_zt": 4, "feature_dim": 16, "rnn_hidden": 16, "enc_channels": [4, 8, 8],
        "dec_channels": [8, 8, 8, 4], "dfp_hidden": 8}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def shapes_file(workdir):
    out = workdir / "shapes.ds"
    assert main(["gen-data", "--kind", "shapes", "--out", str(out), "--count", "400", "--frames", "6",
                 "--seed", "3"]) == 0
    return out


@pytest.fixture(scope="module")
def trained(workdir, shapes_file):
    cfg = workdir / "train.yaml"
    cfg.write_text(yaml.safe_dump({"epochs": 1, "max_steps": 4, "grid": 4, "model": TINY}))
    out = workdir / "run"
    assert main(["train", "--config", str(cfg), "--data", str(shapes_file), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def judge_file(workdir, shapes_file):
    out = workdir / "judge.jdg"
    assert main(["train-judge", "--data", str(shapes_file), "--target", "static", "--out", str(out),
                 "--epochs", "8"]) == 0
    return out


def test_gen_data_writes_dataset_and_config(shapes_file):
    ds = load_dataset(shapes_file)
    assert ds.data.shape == (400, 6, 1, 32, 32)
    resolved = yaml.safe_load(shapes_file.with_name(shapes_file.name + ".config.yaml").read_text())
    assert resolved["seed"] == 3 and resolved["count"] == 400


def test_gen_data_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-data", "--kind", "tones", "--out", str(tmp_path / f"{name}.ds"), "--count", "5",
                     "--seed", "1"]) == 0
    a, b = load_dataset(tmp_path / "a.ds"), load_dataset(tmp_path / "b.ds")
    np.testing.assert_array_equal(a.data, b.data)
    assert a.data.shape == (5, 20, 80)


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("S3VAE_SEED", "17")
    assert main(["gen-data", "--kind", "shapes", "--out", str(tmp_path / "e.ds"), "--count", "2"]) == 0
    assert load_dataset(tmp_path / "e.ds").seed == 17
    monkeypatch.setenv("S3VAE_SEED", "x")
    assert main(["gen-data", "--kind", "shapes", "--out", str(tmp_path / "f.ds"), "--count", "2"]) == 2


def test_train_outputs(trained):
    resolved = yaml.safe_load((trained / "config.yaml").read_text())
    assert resolved["seed"] == 0 and resolved["max_steps"] == 4
    assert resolved["model"]["d_zf"] == 8
    assert (trained / "checkpoint.ckpt").exists()
    assert len((trained / "runlog.jsonl").read_text().splitlines()) == 4


def test_train_refuses_nonempty_dir(trained, shapes_file, capsys):
    code = main(["train", "--data", str(shapes_file), "--out", str(trained), "--max-steps", "1"])
    assert code == 2
    assert "not empty" in capsys.readouterr().err


def test_train_flags_override_config(workdir, shapes_file, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"epochs": 1, "max_steps": 4, "seed": 1, "grid": 4, "model": TINY}))
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--data", str(shapes_file), "--out", str(out), "--seed", "9",
                 "--max-steps", "2"]) == 0
    resolved = yaml.safe_load((out / "config.yaml").read_text())
    assert resolved["seed"] == 9 and resolved["max_steps"] == 2


def test_train_resume(trained, shapes_file, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"epochs": 1, "max_steps": 6, "grid": 4, "model": TINY}))
    out = tmp_path / "resumed"
    assert main(["train", "--config", str(cfg), "--data", str(shapes_file), "--out", str(out),
                 "--resume", str(trained / "checkpoint.ckpt")]) == 0
    steps = [int(line.split('"step": ')[1].split(",")[0]) for line in (out / "runlog.jsonl").read_text().splitlines()]
    assert steps == [5, 6]


def test_eval_swap_static(trained, judge_file, shapes_file, tmp_path):
    report = tmp_path / "r.txt"
    assert main(["eval", "--ckpt", str(trained / "checkpoint.ckpt"), "--judge", str(judge_file), "--data",
                 str(shapes_file), "--protocol", "swap-static", "--report", str(report)]) == 0
    text = report.read_text()
    for key in ("acc", "is_score", "inter_entropy", "intra_entropy", "seed"):
        assert f"\n{key} = " in "\n" + text
    first = text
    assert main(["eval", "--ckpt", str(trained / "checkpoint.ckpt"), "--judge", str(judge_file), "--data",
                 str(shapes_file), "--protocol", "swap-static", "--report", str(report)]) == 0
    assert report.read_text() == first


def test_eval_missing_judge_names_path(trained, shapes_file, tmp_path, capsys):
    missing = tmp_path / "nope.jdg"
    code = main(["eval", "--ckpt", str(trained / "checkpoint.ckpt"), "--judge", str(missing), "--data",
                 str(shapes_file), "--protocol", "swap-static", "--report", str(tmp_path / "r.txt")])
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_eval_protocol_mismatch(trained, judge_file, shapes_file, tmp_path):
    assert main(["eval", "--ckpt", str(trained / "checkpoint.ckpt"), "--data", str(shapes_file),
                 "--protocol", "verify", "--report", str(tmp_path / "r.txt")]) == 2


def test_swap_and_sample(trained, shapes_file, tmp_path):
    out = tmp_path / "swap.gen"
    assert main(["swap", "--ckpt", str(trained / "checkpoint.ckpt"), "--content", "0", "--motion", "1",
                 "--data", str(shapes_file), "--out", str(out)]) == 0
    arrays, _ = read_archive(out, "generated/1")
    assert arrays["data"].shape == (1, 6, 1, 32, 32)
    assert out.with_suffix(".png").exists()
    assert main(["swap", "--ckpt", str(trained / "checkpoint.ckpt"), "--content", "0", "--motion", "9999",
                 "--data", str(shapes_file), "--out", str(out)]) == 2

    out = tmp_path / "sample.gen"
    assert main(["sample", "--ckpt", str(trained / "checkpoint.ckpt"), "--fix", "static", "--count", "4",
                 "--out", str(out), "--seed", "2"]) == 0
    arrays, meta = read_archive(out, "generated/1")
    assert arrays["data"].shape == (4, 8, 1, 32, 32)
    assert np.all(arrays["z_f"] == arrays["z_f"][0])
    assert meta["seed"] == 2
    assert yaml.safe_load(out.with_name(out.name + ".config.yaml").read_text())["fix"] == "static"


def test_usage_errors(capsys):
    assert main(["train", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main([]) == 1
    assert main(["gen-data", "--kind", "video", "--out", "x", "--count", "1"]) == 1


def test_missing_data_file_is_runtime_error(tmp_path, capsys):
    code = main(["train", "--data", str(tmp_path / "none.ds"), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "none.ds" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "seqdisent.cli", "gen-data", "--kind", "shapes", "--count",
                           "1", "--out", str(tmp_path / "x.ds")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "seqdisent.cli", "--nope"], capture_output=True, text=True)
    assert proc.returncode == 1 and "usage" in proc.stderr
