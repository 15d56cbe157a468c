"""Known-operator preprocessing.

Two vessel-enhancement branches are provided on top of the elementary
filters: histogram equalization followed by a Laplacian of Gaussian, and a
self-guided filter followed by a multi-scale Frangi vesselness filter that is
evaluated on a 4x downsampled copy of the image.

All filters operate on 2D float64 arrays and use symmetric reflection at
the image border.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionMismatch, ImageTooSmall

DEFAULT_FRANGI_SCALES = (1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0)


class GrayMode(str, enum.Enum):
    GREEN = "green"
    LUMA = "luma"


class Polarity(str, enum.Enum):
    DARK_ON_BRIGHT = "dark"
    BRIGHT_ON_DARK = "bright"


class Branch(str, enum.Enum):
    NONE = "none"
    HISTEQ_LOG = "histeq-log"
    GUIDED_FRANGI = "guided-frangi"


@dataclass(frozen=True)
class FrangiConfig:
    scales: Sequence[float] = DEFAULT_FRANGI_SCALES
    beta: float = 0.5
    c: Optional[float] = None  # None -> half the maximum structureness of the image
    polarity: Polarity = Polarity.DARK_ON_BRIGHT

    def __post_init__(self):
        s = tuple(float(v) for v in self.scales)
        object.__setattr__(self, "scales", s)
        object.__setattr__(self, "polarity", Polarity(self.polarity))
        if not s or any(v <= 0 for v in s) or any(b <= a for a, b in zip(s, s[1:])):
            raise ConfigError(f"Frangi scales must be positive and strictly increasing: {s}")
        if self.beta <= 0:
            raise ConfigError("Frangi beta must be > 0")
        if self.c is not None and self.c <= 0:
            raise ConfigError("Frangi c must be > 0")


@dataclass(frozen=True)
class GuidedFilterConfig:
    radius: int = 2
    eps: float = 1e-2

    def __post_init__(self):
        if int(self.radius) != self.radius or self.radius < 1:
            raise ConfigError("guided filter radius must be an integer >= 1")
        if self.eps <= 0:
            raise ConfigError("guided filter eps must be > 0")


@dataclass(frozen=True)
class PreprocessParams:
    gray_mode: GrayMode = GrayMode.GREEN
    log_sigma: float = 2.0
    hist_bins: int = 256
    guided: GuidedFilterConfig = field(default_factory=GuidedFilterConfig)
    frangi: FrangiConfig = field(default_factory=FrangiConfig)


def _as_gray(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatch(f"expected a 2D gray image, got shape {a.shape}")
    return a


def to_gray(img, mode=GrayMode.GREEN) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        return a.copy()
    if a.ndim != 3 or a.shape[2] != 3:
        raise DimensionMismatch(f"expected (H, W, 3) RGB image, got shape {a.shape}")
    if GrayMode(mode) is GrayMode.GREEN:
        return a[:, :, 1].copy()
    return 0.299 * a[:, :, 0] + 0.587 * a[:, :, 1] + 0.114 * a[:, :, 2]


def standardize(img) -> np.ndarray:
    """Affinely map ``[min, max]`` onto ``[-1, 1]``; constant images become 0."""
    a = _as_gray(img)
    lo, hi = a.min(), a.max()
    if hi - lo <= 0:
        return np.zeros_like(a)
    # divide by the range rather than multiplying by its reciprocal, which
    # overflows for subnormal ranges
    return np.clip(2.0 * ((a - lo) / (hi - lo)) - 1.0, -1.0, 1.0)


def hist_equalize(img, bins: int = 256) -> np.ndarray:
    """CDF remapping over ``bins`` equal bins spanning the value range, output in [-1, 1]."""
    if bins < 2:
        raise ConfigError("hist_equalize needs at least 2 bins")
    a = _as_gray(img)
    lo, hi = a.min(), a.max()
    if hi - lo <= 0:
        idx = np.zeros(a.shape, dtype=np.intp)
    else:
        idx = np.floor(bins * ((a - lo) / (hi - lo))).astype(np.intp)
        np.clip(idx, 0, bins - 1, out=idx)
    counts = np.bincount(idx.ravel(), minlength=bins)
    cdf = np.cumsum(counts) / a.size
    return 2.0 * cdf[idx] - 1.0


def gaussian_kernel(sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise ConfigError("sigma must be > 0")
    half = int(math.ceil(3.0 * sigma))
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img, sigma: float) -> np.ndarray:
    k = gaussian_kernel(sigma)
    a = _as_gray(img)
    return kernels.correlate1d_reflect(kernels.correlate1d_reflect(a, k, 1), k, 0)


def _second_differences(a):
    p = np.pad(a, 1, mode="symmetric")
    c = p[1:-1, 1:-1]
    dxx = p[1:-1, 2:] - 2.0 * c + p[1:-1, :-2]
    dyy = p[2:, 1:-1] - 2.0 * c + p[:-2, 1:-1]
    dxy = 0.25 * (p[2:, 2:] - p[2:, :-2] - p[:-2, 2:] + p[:-2, :-2])
    return dxx, dxy, dyy


def hessian_2d(img, sigma: float):
    """Scale-normalized ``(Ixx, Ixy, Iyy)`` of the Gaussian-smoothed image."""
    dxx, dxy, dyy = _second_differences(gaussian_blur(img, sigma))
    s2 = sigma * sigma
    return s2 * dxx, s2 * dxy, s2 * dyy


def log_filter(img, sigma: float) -> np.ndarray:
    dxx, _, dyy = _second_differences(gaussian_blur(img, sigma))
    return (sigma * sigma) * (dxx + dyy)


def box_mean(img, r: int) -> np.ndarray:
    a = _as_gray(img)
    return kernels.box_sum(a, r) / kernels.box_sum(np.ones_like(a), r)


def guided_filter(guide, inp, cfg: GuidedFilterConfig = GuidedFilterConfig()) -> np.ndarray:
    g = _as_gray(guide)
    p = _as_gray(inp)
    if g.shape != p.shape:
        raise DimensionMismatch(f"guide {g.shape} and input {p.shape} differ")
    r = int(cfg.radius)
    n = kernels.box_sum(np.ones_like(g), r)
    mean_g = kernels.box_sum(g, r) / n
    mean_p = kernels.box_sum(p, r) / n
    cov = kernels.box_sum(g * p, r) / n - mean_g * mean_p
    var = kernels.box_sum(g * g, r) / n - mean_g * mean_g
    a = cov / (var + cfg.eps)
    b = mean_p - a * mean_g
    return (kernels.box_sum(a, r) / n) * g + kernels.box_sum(b, r) / n


def frangi_vesselness(img, cfg: FrangiConfig = FrangiConfig()) -> np.ndarray:
    """Maximum-over-scales Frangi vesselness, rescaled to [0, 1]."""
    a = _as_gray(img)
    hessians = [hessian_2d(a, s) for s in cfg.scales]
    c = cfg.c
    if c is None:
        smax = max(float(np.sqrt(xx * xx + 2.0 * xy * xy + yy * yy).max()) for xx, xy, yy in hessians)
        if smax <= 0:
            return np.zeros_like(a)
        c = 0.5 * smax
    dark = cfg.polarity is Polarity.DARK_ON_BRIGHT
    out = np.zeros_like(a)
    for xx, xy, yy in hessians:
        np.maximum(out, kernels.frangi_response(xx, xy, yy, cfg.beta, c, dark), out=out)
    top = out.max()
    if top > 0:
        out /= top
    return out


def downsample4(img) -> np.ndarray:
    a = _as_gray(img)
    if a.shape[0] < 4 or a.shape[1] < 4:
        raise ImageTooSmall(f"Down4 needs at least 4x4 pixels, got {a.shape[1]}x{a.shape[0]}")
    b = gaussian_blur(a, 2.0)
    h, w = a.shape
    # coarse sample i sits at the centre of fine block [4i, 4i+3]
    ys = np.minimum(4.0 * np.arange(-(-h // 4)) + 1.5, h - 1)
    xs = np.minimum(4.0 * np.arange(-(-w // 4)) + 1.5, w - 1)
    xx, yy = np.meshgrid(xs, ys)
    return kernels.bilinear_sample(b, xx, yy, 0.0)


def upsample4(img) -> np.ndarray:
    """Bilinear 4x upsampling on the block-centred grid used by :func:`downsample4`."""
    a = _as_gray(img)
    h, w = a.shape
    ys = np.clip((np.arange(4 * h) - 1.5) / 4.0, 0, h - 1)
    xs = np.clip((np.arange(4 * w) - 1.5) / 4.0, 0, w - 1)
    xx, yy = np.meshgrid(xs, ys)
    return kernels.bilinear_sample(a, xx, yy, 0.0)


def resample(img, factor: str) -> np.ndarray:
    if factor == "down4":
        return downsample4(img)
    if factor == "up4":
        return upsample4(img)
    raise ConfigError(f"unknown resample factor {factor!r}")


def preprocess(img, branch=Branch.NONE, params: PreprocessParams = PreprocessParams()) -> np.ndarray:
    branch = Branch(branch)
    g = standardize(to_gray(img, params.gray_mode))
    if branch is Branch.NONE:
        return g
    if branch is Branch.HISTEQ_LOG:
        eq = hist_equalize(g, params.hist_bins)
        return standardize(log_filter(eq, params.log_sigma))
    h, w = g.shape
    small = downsample4(g)
    smooth = guided_filter(small, small, params.guided)
    v = frangi_vesselness(smooth, params.frangi)
    return standardize(upsample4(v)[:h, :w])
