import json
import subprocess
import sys

import numpy as np
import pytest

from imitreg import cli
from imitreg.io_fire import load_dataset, load_points, load_transform, save_points
from imitreg.model import load_checkpoint

SYNTH = ["--size", "128", "--n-landmarks", "4", "--trans", "4", "--rot-deg", "1"]
FAST = ["--branch", "none", "--C", "4", "--S", "4", "--hidden", "8", "--epochs", "2", "--copies", "2"]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert run("synth", "--n-pairs", 4, "--out", d, *SYNTH) == cli.EXIT_OK
    return d


@pytest.fixture(scope="module")
def checkpoint(dataset, tmp_path_factory):
    ck = tmp_path_factory.mktemp("ck") / "model.npz"
    assert run("train", dataset, "--out", ck, *FAST) == cli.EXIT_OK
    return ck


# -- synth ----------------------------------------------------------------------------

def test_synth_layout_and_reload(dataset):
    m = json.loads((dataset / "manifest.json").read_text())
    assert m["n_pairs"] == 4 and m["ids"] == ["X001", "X002", "X003", "X004"]
    pairs = load_dataset(dataset)
    assert [p.id for p in pairs] == m["ids"]
    assert all(p.n_landmarks == 4 and p.transform is not None for p in pairs)
    for p in pairs:
        assert np.allclose(p.transform.apply(p.source_landmarks), p.target_landmarks, atol=1e-9)


def test_synth_deterministic(tmp_path, dataset):
    assert run("synth", "--n-pairs", 4, "--out", tmp_path, *SYNTH) == 0
    for f in sorted(p.relative_to(dataset) for p in dataset.rglob("*") if p.is_file()):
        assert (tmp_path / f).read_bytes() == (dataset / f).read_bytes(), f


def test_synth_zero_pairs(tmp_path):
    assert run("synth", "--n-pairs", 0, "--out", tmp_path) == 0
    assert load_dataset(tmp_path) == []
    assert run("synth", "--n-pairs", -1, "--out", tmp_path / "x") == cli.EXIT_USAGE


# -- preprocess -----------------------------------------------------------------------

@pytest.mark.parametrize("branch", ["none", "histeq-log", "guided-frangi"])
def test_preprocess_branches(tmp_path, dataset, branch, capsys):
    out = tmp_path / "p.pgm"
    assert run("preprocess", dataset / "Images" / "X001_1.ppm", "--branch", branch, "--out", out) == 0
    head = out.read_bytes().split(b"\n")[:2]
    assert head == [b"P5", b"128 128"]  # every branch returns the input size
    assert "min" in capsys.readouterr().out


def test_preprocess_debug_stages(tmp_path, dataset):
    out = tmp_path / "p.pgm"
    assert run("preprocess", dataset / "Images" / "X001_1.ppm", "--out", out, "--debug") == 0
    for stage in ("gray", "down4", "guided", "vesselness"):
        assert (tmp_path / f"p.{stage}.pgm").is_file()


def test_preprocess_missing_input(tmp_path):
    assert run("preprocess", tmp_path / "none.pgm", "--out", tmp_path / "o.pgm") == cli.EXIT_DATA


# -- train ----------------------------------------------------------------------------

def test_train_checkpoint_contents(checkpoint):
    m = load_checkpoint(checkpoint)
    assert (m.obs_cfg.C, m.obs_cfg.S, m.branch) == (4, 4.0, "none")
    assert m.params.n_landmarks == 4


def test_train_bad_config(tmp_path, dataset):
    assert run("train", dataset, "--out", tmp_path / "m.npz", *FAST, "--lr", "-1") == cli.EXIT_USAGE
    assert run("train", tmp_path / "missing", "--out", tmp_path / "m.npz", *FAST) == cli.EXIT_DATA


# -- register -------------------------------------------------------------------------

def _points_file(dataset, tmp_path, pid="X001"):
    pair = [p for p in load_dataset(dataset) if p.id == pid][0]
    path = tmp_path / "pts.txt"
    save_points(pair.source_landmarks, path)
    return pair, path


def test_register_outputs_consistent(tmp_path, dataset, checkpoint):
    pair, pts = _points_file(dataset, tmp_path)
    img = dataset / "Images"
    out = tmp_path / "reg"
    assert run("register", "--checkpoint", checkpoint, "--source", img / "X001_1.ppm",
               "--target", img / "X001_2.ppm", "--points", pts, "--out", out, "--debug") == 0
    t = load_transform(out / "transform.txt")
    assert np.allclose(t.apply(pair.source_landmarks), load_points(out / "transformed_points.txt"))
    assert load_points(out / "predicted_points.txt").shape == (4, 2)
    assert (out / "warped.pgm").read_bytes().startswith(b"P5\n128 128\n")
    for name in ("checkerboard_before", "checkerboard_after", "patches"):
        assert (out / f"debug_{name}.pgm").is_file()


def test_register_same_image_is_near_identity(tmp_path, dataset, checkpoint):
    pair, pts = _points_file(dataset, tmp_path)
    src = dataset / "Images" / "X001_1.ppm"
    out = tmp_path / "reg"
    assert run("register", "--checkpoint", checkpoint, "--source", src, "--target", src,
               "--points", pts, "--out", out, "--transform-model", "translation") == 0
    # the model never saw a self-pair, so only ask for a small translation
    assert np.all(np.abs(np.array(load_transform(out / "transform.txt").params)[[2, 5]]) < 16)


def test_register_errors(tmp_path, dataset, checkpoint):
    img = dataset / "Images"
    args = ["register", "--checkpoint", checkpoint, "--source", img / "X001_1.ppm",
            "--target", img / "X001_2.ppm", "--out", tmp_path / "r"]
    assert run(*args, "--points", tmp_path / "missing.txt") == cli.EXIT_DATA
    save_points(np.zeros((3, 2)), tmp_path / "three.txt")
    assert run(*args, "--points", tmp_path / "three.txt") == cli.EXIT_USAGE


# -- evaluate -------------------------------------------------------------------------

EVAL = ["--branch", "none", "--hidden", "8", "--epochs", "1", "--copies", "1"]


def test_evaluate_single(tmp_path, dataset):
    assert run("evaluate", dataset, "--C", 4, "--S", 4, "--out", tmp_path, *EVAL) == 0
    rows = (tmp_path / "report.tsv").read_text().splitlines()
    assert len(rows) == 5
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["config"]["dataset"]["ids"] == ["X001", "X002", "X003", "X004"]
    assert str(dataset) not in (tmp_path / "report.json").read_text()


def test_evaluate_grid(tmp_path, dataset):
    assert run("evaluate", dataset, "--C", 4, 6, "--S", 4, 8, "--out", tmp_path, *EVAL) == 0
    sweep = (tmp_path / "sweep.tsv").read_text().splitlines()
    assert len(sweep) == 5
    for c in (4, 6):
        for s in (4, 8):
            assert (tmp_path / f"report_C{c}_S{s}.tsv").is_file()


def test_evaluate_holdout(tmp_path, dataset):
    assert run("evaluate", dataset, "--C", 4, "--S", 4, "--protocol", "holdout",
               "--test-fraction", 0.25, "--out", tmp_path, *EVAL) == 0
    rows = (tmp_path / "report.tsv").read_text().splitlines()[1:]
    assert [r.split("\t")[0] for r in rows] == ["X004"]


# -- process-level behaviour ----------------------------------------------------------

def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "envout"))
    assert run("synth", "--n-pairs", 1, *SYNTH) == 0
    assert (tmp_path / "envout" / "manifest.json").is_file()


def test_module_entry_point_exit_codes(tmp_path):
    base = [sys.executable, "-m", "imitreg.cli"]
    r = subprocess.run(base + ["--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "0.1.0" in r.stdout
    r = subprocess.run(base + ["bogus"], capture_output=True, text=True)
    assert r.returncode == 2
    r = subprocess.run(base + ["evaluate", str(tmp_path / "nothing")], capture_output=True, text=True)
    assert r.returncode == cli.EXIT_DATA and "data error" in r.stderr
