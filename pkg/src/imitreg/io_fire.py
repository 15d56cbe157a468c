"""Dataset and file I/O.

On-disk layout (the FIRE convention)::

    <root>/Images/<id>_1.<ext>                        source image
    <root>/Images/<id>_2.<ext>                        target image
    <root>/Ground Truth/control_points_<id>_1_2.txt   one "x_src y_src x_tgt y_tgt" row per landmark

The category is the first letter of ``<id>``: ``A``, ``P`` or ``S`` for FIRE
pairs and ``X`` for synthetic ones. Binary PGM/PPM are decoded natively;
other formats (FIRE ships JPEG) are read through Pillow when it is installed.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .core import Affine2D, Category, ImagePair
from .errors import (CorruptFile, DataError, IoFailure, MalformedGroundTruth, MissingFile,
                     UnknownCategory, UnsupportedFormat)

IMAGE_EXTS = (".ppm", ".pgm", ".png", ".jpg", ".jpeg", ".tif", ".tiff")
CATEGORY_PREFIX = {"A": Category.A, "P": Category.P, "S": Category.S, "X": Category.SYNTHETIC}
_GT_RE = re.compile(r"^control_points_(.+)_1_2\.txt$")


class Origin(str, enum.Enum):
    ZERO = "zero"
    ONE = "one"


class ColumnOrder(str, enum.Enum):
    SOURCE_FIRST = "source-first"
    TARGET_FIRST = "target-first"


@dataclass(frozen=True)
class DatasetLayout:
    images_dir: Path
    ground_truth_dir: Path
    coordinate_origin: Origin = Origin.ZERO
    column_order: ColumnOrder = ColumnOrder.SOURCE_FIRST

    @classmethod
    def from_root(cls, root, **kw) -> "DatasetLayout":
        root = Path(root)
        return cls(root / "Images", root / "Ground Truth", **kw)


# ---------------------------------------------------------------------------
# images


def _read_netpbm(data: bytes, path) -> np.ndarray:
    magic = data[:2]
    channels = {b"P5": 1, b"P6": 3}[magic]
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise CorruptFile(f"{path}: truncated header")
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # exactly one whitespace byte before the raster
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as e:
        raise CorruptFile(f"{path}: bad header") from e
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise CorruptFile(f"{path}: bad header values {w}x{h} maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = w * h * channels
    raw = data[pos:pos + n * dtype.itemsize]
    if len(raw) < n * dtype.itemsize:
        raise CorruptFile(f"{path}: pixel data truncated ({len(raw)} of {n * dtype.itemsize} bytes)")
    a = np.frombuffer(raw, dtype=dtype).astype(np.float64) / maxval
    return a.reshape(h, w) if channels == 1 else a.reshape(h, w, 3)


def load_image(path) -> np.ndarray:
    """Gray ``(H, W)`` or RGB ``(H, W, 3)`` float64 image with samples in [0, 1]."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError as e:
        raise MissingFile(f"image not found: {path}") from e
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    if data[:2] in (b"P5", b"P6"):
        return _read_netpbm(data, path)
    try:
        from PIL import Image
    except ImportError:
        raise UnsupportedFormat(f"{path}: only binary PGM/PPM are supported without Pillow")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "I;16", "I"):
                a = np.asarray(im, dtype=np.float64)
                return a / (65535.0 if a.max() > 255 else 255.0)
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, SyntaxError) as e:
        raise UnsupportedFormat(f"{path}: cannot decode ({e})") from e


def _to_bytes(img, value_range) -> np.ndarray:
    lo, hi = value_range
    a = (np.asarray(img, dtype=np.float64) - lo) * (255.0 / (hi - lo))
    return np.clip(np.rint(a), 0, 255).astype(np.uint8)


def save_image(img, path, value_range=(-1.0, 1.0)) -> None:
    """Write PGM (2D) or PPM (RGB), mapping ``value_range`` linearly onto 0..255."""
    a = np.asarray(img)
    if a.ndim == 2:
        header = b"P5\n%d %d\n255\n" % (a.shape[1], a.shape[0])
    elif a.ndim == 3 and a.shape[2] == 3:
        header = b"P6\n%d %d\n255\n" % (a.shape[1], a.shape[0])
    else:
        raise DataError(f"cannot save image of shape {a.shape}")
    try:
        Path(path).write_bytes(header + _to_bytes(a, value_range).tobytes())
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


# ---------------------------------------------------------------------------
# points and transforms


def save_points(points, path) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    text = "".join(f"{float(x)!r} {float(y)!r}\n" for x, y in pts)
    try:
        Path(path).write_text(text)
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def _read_rows(path, ncols: int) -> np.ndarray:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError as e:
        raise MissingFile(f"file not found: {path}") from e
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    rows = []
    for lineno, line in enumerate(lines, 1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        try:
            vals = [float(f) for f in fields]
        except ValueError:
            vals = None
        if vals is None or len(vals) != ncols or not np.all(np.isfinite(vals)):
            raise MalformedGroundTruth(f"{path}:{lineno}: expected {ncols} numeric fields, got {line!r}")
        rows.append(vals)
    if not rows:
        raise MalformedGroundTruth(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64)


def load_points(path) -> np.ndarray:
    return _read_rows(path, 2)


def save_transform(t: Affine2D, path) -> None:
    """Six numbers ``a11 a12 tx a21 a22 ty`` on one line."""
    try:
        Path(path).write_text(" ".join(repr(float(v)) for v in t.params) + "\n")
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def load_transform(path) -> Affine2D:
    return Affine2D(*_read_rows(path, 6)[0])


# ---------------------------------------------------------------------------
# FIRE-style datasets


def category_of(pair_id: str) -> Category:
    try:
        return CATEGORY_PREFIX[pair_id[:1].upper()]
    except KeyError:
        raise UnknownCategory(f"cannot infer category from pair id {pair_id!r}") from None


def _find_image(images_dir: Path, stem: str) -> Path:
    for ext in IMAGE_EXTS:
        for cand in (images_dir / (stem + ext), images_dir / (stem + ext.upper())):
            if cand.is_file():
                return cand
    raise MissingFile(f"no image for {stem!r} in {images_dir}")


def load_ground_truth(path, layout: DatasetLayout) -> Tuple[np.ndarray, np.ndarray]:
    rows = _read_rows(path, 4)
    a, b = rows[:, :2], rows[:, 2:]
    src, tgt = (a, b) if ColumnOrder(layout.column_order) is ColumnOrder.SOURCE_FIRST else (b, a)
    if Origin(layout.coordinate_origin) is Origin.ONE:
        src, tgt = src - 1.0, tgt - 1.0
    return src, tgt


def load_pair(layout: DatasetLayout, pair_id: str, transforms_dir: Optional[Path] = None) -> ImagePair:
    cat = category_of(pair_id)
    src_pts, tgt_pts = load_ground_truth(
        Path(layout.ground_truth_dir) / f"control_points_{pair_id}_1_2.txt", layout)
    images = Path(layout.images_dir)
    source = load_image(_find_image(images, f"{pair_id}_1"))
    target = load_image(_find_image(images, f"{pair_id}_2"))
    t = None
    if transforms_dir is not None and (Path(transforms_dir) / f"{pair_id}.txt").is_file():
        t = load_transform(Path(transforms_dir) / f"{pair_id}.txt")
    return ImagePair(pair_id, source, target, src_pts, tgt_pts, cat, t)


def list_pair_ids(layout: DatasetLayout) -> List[str]:
    gt = Path(layout.ground_truth_dir)
    if not gt.is_dir():
        raise MissingFile(f"ground-truth directory not found: {gt}")
    if not Path(layout.images_dir).is_dir():
        raise MissingFile(f"image directory not found: {layout.images_dir}")
    ids = [m.group(1) for m in (_GT_RE.match(p.name) for p in gt.iterdir()) if m]
    return sorted(ids)


def load_fire(layout: DatasetLayout, strict: bool = True, transforms_dir=None):
    """Load every pair, sorted by id.

    ``strict`` raises on the first bad pair. Otherwise returns
    ``(pairs, errors)`` where ``errors`` lists ``(pair_id, exception)``.
    """
    pairs, errors = [], []
    for pid in list_pair_ids(layout):
        try:
            pairs.append(load_pair(layout, pid, transforms_dir))
        except DataError as e:
            if strict:
                raise
            errors.append((pid, e))
    return pairs if strict else (pairs, errors)


def load_dataset(root, strict: bool = True, **layout_kw):
    """Load a dataset directory, picking up ``<root>/transforms`` when present."""
    root = Path(root)
    tdir = root / "transforms"
    return load_fire(DatasetLayout.from_root(root, **layout_kw), strict,
                     tdir if tdir.is_dir() else None)


def write_pair(pair: ImagePair, root, image_range=(0.0, 1.0)) -> None:
    """Write ``pair`` into the on-disk layout (PPM/PGM images)."""
    root = Path(root)
    images, gt = root / "Images", root / "Ground Truth"
    for d in (images, gt):
        d.mkdir(parents=True, exist_ok=True)
    for suffix, img in (("_1", pair.source), ("_2", pair.target)):
        ext = ".ppm" if np.asarray(img).ndim == 3 else ".pgm"
        save_image(img, images / f"{pair.id}{suffix}{ext}", image_range)
    rows = np.hstack([pair.source_landmarks, pair.target_landmarks])
    text = "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in rows)
    try:
        (gt / f"control_points_{pair.id}_1_2.txt").write_text(text)
    except OSError as e:
        raise IoFailure(f"cannot write ground truth for {pair.id}: {e}") from e
    if pair.transform is not None:
        (root / "transforms").mkdir(exist_ok=True)
        save_transform(pair.transform, root / "transforms" / f"{pair.id}.txt")
