"""Training-data synthesis.

Intensity jitter, random affine perturbation of a pair's source side, the
demonstrator (ground-truth landmark displacements), and a generator of
synthetic vessel-tree pairs with a known affine ground truth.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import kernels
from .core import Affine2D, Category, ImagePair
from .errors import ConfigError, CountMismatch
from .imageops import GrayMode, standardize, to_gray


@dataclass(frozen=True)
class AugmentConfig:
    copies: int = 64
    brightness: float = 0.2                 # additive shift drawn from [-b, b]
    contrast: Tuple[float, float] = (0.8, 1.25)
    rot_deg: float = 10.0                   # rotation drawn from [-r, r] degrees
    scale: Tuple[float, float] = (0.9, 1.1)
    shear: float = 0.05
    trans: float = 50.0                     # per-axis translation in pixels
    fill: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.copies < 0:
            raise ConfigError("copies must be >= 0")
        for name in ("brightness", "rot_deg", "shear", "trans"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} range must be non-negative")
        for name in ("contrast", "scale"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigError(f"{name} interval must be positive and non-empty")

    @classmethod
    def neutral(cls, copies: int = 64, seed: int = 0) -> "AugmentConfig":
        return cls(copies=copies, brightness=0.0, contrast=(1.0, 1.0), rot_deg=0.0,
                   scale=(1.0, 1.0), shear=0.0, trans=0.0, seed=seed)


def jitter_intensity(img, brightness: float, contrast: float) -> np.ndarray:
    if not contrast > 0:
        raise ConfigError("contrast factor must be > 0")
    return np.clip(contrast * np.asarray(img, dtype=np.float64) + brightness, -1.0, 1.0)


def random_affine(rng, cfg, center=(0.0, 0.0)) -> Affine2D:
    """Draw ``translate · rotate · scale · shear`` acting about ``center``.

    Always consumes five uniforms in the same order so streams stay aligned
    whatever the ranges are. The determinant is ``s**2 > 0``.
    """
    theta = math.radians(rng.uniform(-cfg.rot_deg, cfg.rot_deg))
    s = rng.uniform(*cfg.scale)
    h = rng.uniform(-cfg.shear, cfg.shear)
    tx = rng.uniform(-cfg.trans, cfg.trans)
    ty = rng.uniform(-cfg.trans, cfg.trans)
    linear = Affine2D.rotation(theta) @ Affine2D.scaling(s) @ Affine2D.shear(h)
    return Affine2D.translation(tx, ty) @ linear.about(center)


def image_center(img) -> Tuple[float, float]:
    h, w = np.asarray(img).shape[:2]
    return ((w - 1) / 2.0, (h - 1) / 2.0)


def warp_image(img, t: Affine2D, fill: float = 0.0, out_shape=None) -> np.ndarray:
    """Resample ``img`` so that content at ``p`` moves to ``t(p)``.

    The output grid has ``out_shape`` (default: the input shape).
    """
    a = np.asarray(img, dtype=np.float64)
    inv = t.invert()
    h, w = a.shape if out_shape is None else out_shape
    xx, yy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    sx = inv.a11 * xx + inv.a12 * yy + inv.tx
    sy = inv.a21 * xx + inv.a22 * yy + inv.ty
    return kernels.bilinear_sample(a, sx, sy, fill)


def demonstrator(pair: ImagePair) -> np.ndarray:
    """Displacement ``target - source`` per landmark, shape ``(K, 2)``."""
    src, tgt = pair.source_landmarks, pair.target_landmarks
    if src.shape != tgt.shape:
        raise CountMismatch(f"{len(src)} source vs {len(tgt)} target landmarks")
    return tgt - src


def _copy_seed(rng, cfg: AugmentConfig) -> int:
    if rng is None:
        return int(cfg.seed)
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    return int(rng.integers(0, 2**63 - 1))


def augment_pair(pair: ImagePair, cfg: AugmentConfig, rng=None, *,
                 gray_mode=GrayMode.GREEN, return_transforms: bool = False):
    """Return ``cfg.copies`` perturbed versions of ``pair``.

    Both images are converted to standardized gray and jittered
    independently; a random affine moves the source image and its landmarks
    while the target side keeps its geometry. Copy ``i`` draws from a
    generator seeded with ``(base_seed, i)``, where ``base_seed`` comes from
    ``rng`` (a Generator or an int) or ``cfg.seed``.
    """
    base = _copy_seed(rng, cfg)
    src = standardize(to_gray(pair.source, gray_mode))
    tgt = standardize(to_gray(pair.target, gray_mode))
    center = image_center(src)
    copies, transforms = [], []
    for i in range(cfg.copies):
        r = np.random.default_rng([base, i])
        b_s = r.uniform(-cfg.brightness, cfg.brightness)
        c_s = r.uniform(*cfg.contrast)
        b_t = r.uniform(-cfg.brightness, cfg.brightness)
        c_t = r.uniform(*cfg.contrast)
        t = random_affine(r, cfg, center)
        new_src = warp_image(jitter_intensity(src, b_s, c_s), t, cfg.fill)
        gt = None if pair.transform is None else pair.transform @ t.invert()
        copies.append(pair.with_(
            id=f"{pair.id}#aug{i:03d}",
            source=new_src,
            target=jitter_intensity(tgt, b_t, c_t),
            source_landmarks=t.apply(pair.source_landmarks),
            transform=gt,
        ))
        transforms.append(t)
    return (copies, transforms) if return_transforms else copies


# ---------------------------------------------------------------------------
# synthetic vessel trees


@dataclass(frozen=True)
class SynthConfig:
    size: int = 256
    n_vessels: int = 4                       # trunks leaving the optic disc
    vessel_width_range: Tuple[float, float] = (2.5, 6.0)
    n_landmarks: int = 10
    rot_deg: float = 5.0
    scale: Tuple[float, float] = (1.0, 1.0)
    shear: float = 0.0
    trans: float = 30.0
    brightness: float = 0.05                 # target jitter, [0, 1] intensity units
    contrast: Tuple[float, float] = (0.9, 1.1)
    noise: float = 0.01
    margin: float = 40.0                     # landmark distance from the frame border
    seed: int = 0

    def __post_init__(self):
        if self.size < 64:
            raise ConfigError("synthetic images must be at least 64 pixels wide")
        if self.n_landmarks < 3:
            raise ConfigError("need at least 3 landmarks")
        lo, hi = self.vessel_width_range
        if not 0 < lo <= hi:
            raise ConfigError("vessel_width_range must be positive and non-empty")
        if not 2 * self.margin < self.size:
            raise ConfigError("margin too large for image size")

    @property
    def affine_ranges(self) -> AugmentConfig:
        return AugmentConfig(copies=0, brightness=0.0, contrast=(1.0, 1.0), rot_deg=self.rot_deg,
                             scale=self.scale, shear=self.shear, trans=self.trans)


@dataclass
class VesselTree:
    segments: np.ndarray       # (M, 4): x0, y0, x1, y1
    widths: np.ndarray         # (M,)
    bifurcations: np.ndarray   # (B, 2)

    def transformed(self, t: Affine2D) -> "VesselTree":
        p0 = t.apply(self.segments[:, :2])
        p1 = t.apply(self.segments[:, 2:])
        k = math.sqrt(abs(t.det))
        return VesselTree(np.hstack([p0, p1]), self.widths * k, t.apply(self.bifurcations))


def grow_tree(rng, cfg: SynthConfig) -> VesselTree:
    size = cfg.size
    pad = 0.35 * size
    lo_w, hi_w = cfg.vessel_width_range
    side = rng.integers(0, 2)
    disc = np.array([size * (rng.uniform(0.1, 0.3) if side == 0 else rng.uniform(0.7, 0.9)),
                     size * rng.uniform(0.35, 0.65)])
    segs, widths, bifs = [], [], []
    start_angle = rng.uniform(0, 2 * math.pi)
    stack = []
    for k in range(cfg.n_vessels):
        ang = start_angle + 2 * math.pi * k / cfg.n_vessels + rng.uniform(-0.3, 0.3)
        stack.append((disc.copy(), ang, rng.uniform(0.8, 1.0) * hi_w, 0))
    unit = size / 256.0  # branch lengths are tuned on 256-pixel frames
    step = 5.0 * unit
    while stack:
        p, ang, w, depth = stack.pop()
        length = rng.uniform(30.0, 70.0) * unit * (1.0 if depth else 1.4)
        travelled = 0.0
        alive = True
        while travelled < length:
            ang += rng.uniform(-0.12, 0.12)
            q = p + step * np.array([math.cos(ang), math.sin(ang)])
            segs.append((p[0], p[1], q[0], q[1]))
            widths.append(w)
            p = q
            travelled += step
            if not (-pad <= p[0] <= size + pad and -pad <= p[1] <= size + pad):
                alive = False
                break
        if not alive or depth >= 6:
            continue
        child_w = w * 0.8
        if child_w < lo_w:
            continue
        bifs.append(p.copy())
        spread = rng.uniform(0.4, 0.8)
        bias = rng.uniform(-0.2, 0.2)
        stack.append((p.copy(), ang + spread + bias, child_w, depth + 1))
        stack.append((p.copy(), ang - spread + bias, child_w * rng.uniform(0.8, 1.0), depth + 1))
    return VesselTree(np.array(segs, dtype=np.float64), np.array(widths, dtype=np.float64),
                      np.array(bifs, dtype=np.float64).reshape(-1, 2))


def render_darkening(tree: VesselTree, size: int) -> np.ndarray:
    """Per-pixel vessel darkening in [0, 1] (max over segments of a Gaussian profile)."""
    out = np.zeros((size, size))
    for (x0, y0, x1, y1), w in zip(tree.segments, tree.widths):
        sigma = w / 2.0
        reach = 3.0 * sigma + 1.0
        bx0 = max(int(math.floor(min(x0, x1) - reach)), 0)
        bx1 = min(int(math.ceil(max(x0, x1) + reach)), size - 1)
        by0 = max(int(math.floor(min(y0, y1) - reach)), 0)
        by1 = min(int(math.ceil(max(y0, y1) + reach)), size - 1)
        if bx0 > bx1 or by0 > by1:
            continue
        xx, yy = np.meshgrid(np.arange(bx0, bx1 + 1, dtype=np.float64),
                             np.arange(by0, by1 + 1, dtype=np.float64))
        dx, dy = x1 - x0, y1 - y0
        t = np.clip(((xx - x0) * dx + (yy - y0) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
        d2 = (xx - x0 - t * dx) ** 2 + (yy - y0 - t * dy) ** 2
        contrast = min(0.35 + 0.05 * w, 0.7)
        prof = contrast * np.exp(-d2 / (2.0 * sigma * sigma))
        view = out[by0:by1 + 1, bx0:bx1 + 1]
        np.maximum(view, prof, out=view)
    return out


def render_fundus(tree: VesselTree, size: int, rng, noise: float,
                  gain: float = 1.0, offset: float = 0.0) -> np.ndarray:
    """RGB fundus-like rendering with camera-fixed vignetting."""
    dark = render_darkening(tree, size)
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    r2 = ((xx - c) ** 2 + (yy - c) ** 2) / (c * c)
    vignette = 1.0 - 0.35 * r2
    base = np.array([0.85, 0.5, 0.25])
    absorb = np.array([0.3, 1.0, 0.6])
    img = vignette[:, :, None] * base * (1.0 - dark[:, :, None] * absorb)
    img = gain * img + offset
    if noise > 0:
        img = img + rng.normal(0.0, noise, img.shape)
    return np.clip(img, 0.0, 1.0)


def _pick_landmarks(rng, candidates: np.ndarray, k: int, min_sep: float = 12.0) -> Optional[np.ndarray]:
    if len(candidates) < k:
        return None
    order = rng.permutation(len(candidates))
    chosen = [candidates[order[0]]]
    rest = candidates[order[1:]]
    while len(chosen) < k:
        d = np.min(np.linalg.norm(rest[:, None, :] - np.array(chosen)[None, :, :], axis=2), axis=1)
        j = int(np.argmax(d))
        if d[j] < min_sep:
            return None
        chosen.append(rest[j])
        rest = np.delete(rest, j, axis=0)
    return np.array(chosen)


def synth_pair(cfg: SynthConfig = SynthConfig(), rng=None, pair_id: str = "X001",
               return_tree: bool = False):
    """Render a synthetic pair; ``pair.transform`` maps source to target coordinates.

    With ``return_tree`` the source-frame :class:`VesselTree` is returned too,
    as ``(pair, tree)``.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    size = cfg.size
    center = ((size - 1) / 2.0, (size - 1) / 2.0)
    for _ in range(1000):
        tree = grow_tree(rng, cfg)
        t = random_affine(rng, cfg.affine_ranges, center)
        b = tree.bifurcations
        lo, hi = cfg.margin, size - 1 - cfg.margin
        inside = np.all((b >= lo) & (b <= hi), axis=1)
        tb = t.apply(b) if len(b) else b
        inside &= np.all((tb >= 10.0) & (tb <= size - 11.0), axis=1)
        landmarks = _pick_landmarks(rng, b[inside], cfg.n_landmarks, 12.0 * min(size / 256.0, 1.0))
        if landmarks is not None:
            break
    else:  # pragma: no cover - only reachable with absurd configs
        raise ConfigError("could not place enough landmarks; relax margin or n_landmarks")
    source = render_fundus(tree, size, rng, cfg.noise)
    gain = rng.uniform(*cfg.contrast)
    offset = rng.uniform(-cfg.brightness, cfg.brightness)
    target = render_fundus(tree.transformed(t), size, rng, cfg.noise, gain, offset)
    pair = ImagePair(
        id=pair_id, source=source, target=target,
        source_landmarks=landmarks, target_landmarks=t.apply(landmarks),
        category=Category.SYNTHETIC, transform=t,
    )
    return (pair, tree) if return_tree else pair


def synth_dataset(n_pairs: int, cfg: SynthConfig = SynthConfig()):
    return [synth_pair(cfg, np.random.default_rng([cfg.seed, i]), pair_id=f"X{i + 1:03d}")
            for i in range(n_pairs)]
