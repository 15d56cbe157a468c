import numpy as np
import pytest

from imitreg import io_fire as F
from imitreg.augment import SynthConfig, synth_pair
from imitreg.core import Affine2D, Category
from imitreg.errors import (CorruptFile, MalformedGroundTruth, MissingFile, UnknownCategory,
                            UnsupportedFormat)


# -- images ---------------------------------------------------------------------------

def test_read_p5_bytes(tmp_path):
    path = tmp_path / "a.pgm"
    path.write_bytes(b"P5\n# comment\n3 2\n255\n" + bytes([0, 51, 102, 153, 204, 255]))
    a = F.load_image(path)
    assert a.shape == (2, 3)
    assert np.allclose(a, np.array([[0, 51, 102], [153, 204, 255]]) / 255.0)


def test_read_p6_channel_order(tmp_path):
    path = tmp_path / "a.ppm"
    path.write_bytes(b"P6 2 1 255\n" + bytes([255, 0, 0, 0, 0, 255]))
    a = F.load_image(path)
    assert a.shape == (1, 2, 3)
    assert np.array_equal(a[0, 0], [1, 0, 0]) and np.array_equal(a[0, 1], [0, 0, 1])


def test_read_16_bit_big_endian(tmp_path):
    path = tmp_path / "a.pgm"
    path.write_bytes(b"P5\n2 1\n65535\n" + bytes([0x01, 0x00, 0xFF, 0xFF]))
    assert np.allclose(F.load_image(path), [[256 / 65535, 1.0]])


def test_truncated_and_bad_header(tmp_path):
    path = tmp_path / "t.pgm"
    path.write_bytes(b"P5\n4 4\n255\n" + bytes(10))
    with pytest.raises(CorruptFile):
        F.load_image(path)
    path.write_bytes(b"P5\n4")
    with pytest.raises(CorruptFile):
        F.load_image(path)
    path.write_bytes(b"P5\nx y\n255\n")
    with pytest.raises(CorruptFile):
        F.load_image(path)


def test_unsupported_and_missing(tmp_path):
    path = tmp_path / "junk.png"
    path.write_bytes(b"definitely not an image")
    with pytest.raises(UnsupportedFormat):
        F.load_image(path)
    with pytest.raises(MissingFile):
        F.load_image(tmp_path / "nope.pgm")


def test_png_via_pillow(tmp_path):
    Image = pytest.importorskip("PIL.Image")
    rgb = (np.arange(24).reshape(2, 4, 3) * 10).astype(np.uint8)
    Image.fromarray(rgb).save(tmp_path / "a.png")
    assert np.allclose(F.load_image(tmp_path / "a.png"), rgb / 255.0)


@pytest.mark.parametrize("shape", [(5, 7), (5, 7, 3)])
def test_image_round_trip(tmp_path, shape):
    img = np.random.default_rng(0).integers(0, 256, size=shape) / 255.0
    path = tmp_path / ("a.pgm" if len(shape) == 2 else "a.ppm")
    F.save_image(img, path, (0.0, 1.0))
    assert np.allclose(F.load_image(path), img, atol=1e-12)


def test_save_image_range_endpoints(tmp_path):
    F.save_image(np.array([[-1.0, 0.0, 1.0, 5.0]]), tmp_path / "a.pgm")
    raw = (tmp_path / "a.pgm").read_bytes()
    assert list(raw[-4:]) == [0, 128, 255, 255]


# -- points ---------------------------------------------------------------------------

def test_points_round_trip_exact(tmp_path):
    pts = np.random.default_rng(1).uniform(-1e3, 3e3, size=(9, 2))
    F.save_points(pts, tmp_path / "p.txt")
    assert np.array_equal(F.load_points(tmp_path / "p.txt"), pts)


def test_transform_round_trip(tmp_path):
    t = Affine2D(1.01, -0.02, 3.5, 0.03, 0.99, -7.25)
    F.save_transform(t, tmp_path / "t.txt")
    assert F.load_transform(tmp_path / "t.txt") == t


def test_points_errors(tmp_path):
    path = tmp_path / "p.txt"
    path.write_text("1 2\n3\n")
    with pytest.raises(MalformedGroundTruth):
        F.load_points(path)
    path.write_text("# only a comment\n\n")
    with pytest.raises(MalformedGroundTruth):
        F.load_points(path)
    path.write_text("1 nan\n")
    with pytest.raises(MalformedGroundTruth):
        F.load_points(path)


# -- datasets -------------------------------------------------------------------------

def _write_dataset(root, ids=("A01", "S02")):
    pairs = []
    for i, pid in enumerate(ids):
        p = synth_pair(SynthConfig(size=64, n_landmarks=3, margin=10.0, trans=3.0),
                       np.random.default_rng(i), pair_id=pid)
        F.write_pair(p, root)
        pairs.append(p)
    return pairs


def test_load_fire_one_pair(tmp_path):
    written = _write_dataset(tmp_path, ("P07",))
    (pair,) = F.load_dataset(tmp_path)
    assert pair.id == "P07" and pair.category is Category.P
    assert np.array_equal(pair.source_landmarks, written[0].source_landmarks)
    assert np.array_equal(pair.target_landmarks, written[0].target_landmarks)
    assert np.allclose(pair.source, np.rint(written[0].source * 255) / 255, atol=1e-12)
    assert pair.transform is not None
    assert np.allclose(pair.transform.params, written[0].transform.params)


def test_load_fire_sorted_and_categories(tmp_path):
    _write_dataset(tmp_path, ("S02", "A01", "X03"))
    pairs = F.load_dataset(tmp_path)
    assert [p.id for p in pairs] == ["A01", "S02", "X03"]
    assert [p.category for p in pairs] == [Category.A, Category.S, Category.SYNTHETIC]


def test_three_field_row(tmp_path):
    _write_dataset(tmp_path, ("A01",))
    gt = tmp_path / "Ground Truth" / "control_points_A01_1_2.txt"
    gt.write_text(gt.read_text() + "1 2 3\n")
    with pytest.raises(MalformedGroundTruth, match=":4:"):
        F.load_dataset(tmp_path)


def test_unknown_category(tmp_path):
    with pytest.raises(UnknownCategory):
        F.category_of("Q01")
    _write_dataset(tmp_path, ("A01",))
    (tmp_path / "Ground Truth" / "control_points_A01_1_2.txt").rename(
        tmp_path / "Ground Truth" / "control_points_Q01_1_2.txt")
    with pytest.raises(UnknownCategory):
        F.load_dataset(tmp_path)


def test_missing_image_and_dirs(tmp_path):
    _write_dataset(tmp_path, ("A01",))
    (tmp_path / "Images" / "A01_2.pgm").unlink(missing_ok=True)
    (tmp_path / "Images" / "A01_2.ppm").unlink(missing_ok=True)
    with pytest.raises(MissingFile):
        F.load_dataset(tmp_path)
    with pytest.raises(MissingFile):
        F.load_dataset(tmp_path / "absent")


def test_lenient_mode_collects_errors(tmp_path):
    _write_dataset(tmp_path, ("A01", "S02"))
    (tmp_path / "Ground Truth" / "control_points_S02_1_2.txt").write_text("garbage\n")
    pairs, errors = F.load_dataset(tmp_path, strict=False)
    assert [p.id for p in pairs] == ["A01"]
    assert [e[0] for e in errors] == ["S02"] and isinstance(errors[0][1], MalformedGroundTruth)


def test_origin_and_column_order(tmp_path):
    gt = tmp_path / "gt.txt"
    gt.write_text("1 2 10 20\n5 6 50 60\n")
    base = F.DatasetLayout(tmp_path, tmp_path)
    s, t = F.load_ground_truth(gt, base)
    assert np.array_equal(s, [[1, 2], [5, 6]]) and np.array_equal(t, [[10, 20], [50, 60]])
    s, t = F.load_ground_truth(gt, F.DatasetLayout(tmp_path, tmp_path, column_order="target-first"))
    assert np.array_equal(s, [[10, 20], [50, 60]])
    s, t = F.load_ground_truth(gt, F.DatasetLayout(tmp_path, tmp_path, coordinate_origin="one"))
    assert np.array_equal(s, [[0, 1], [4, 5]]) and np.array_equal(t, [[9, 19], [49, 59]])
