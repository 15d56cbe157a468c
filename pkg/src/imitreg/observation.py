"""Observation encoding: landmark patches plus normalized point layout."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, DegeneratePointSet, DimensionMismatch


@dataclass(frozen=True)
class ObsConfig:
    """Patch geometry. ``C`` samples per side, ``S`` pixels between samples."""

    C: int = 20
    S: float = 40.0
    fill: float = 0.0

    def __post_init__(self):
        if int(self.C) != self.C or self.C < 1:
            raise ConfigError("C must be an integer >= 1")
        if not self.S > 0:
            raise ConfigError("S must be > 0")
        object.__setattr__(self, "C", int(self.C))
        object.__setattr__(self, "S", float(self.S))

    @property
    def extent(self) -> float:
        return (self.C - 1) * self.S

    def length(self, K: int) -> int:
        return 2 * K * self.C * self.C + 2 * K


@dataclass(frozen=True)
class Observation:
    patches: np.ndarray      # (K, 2, C, C): source patch then target patch
    norm_points: np.ndarray  # (K, 2)
    centroid: np.ndarray     # (2,)
    scale: float

    @property
    def n_landmarks(self) -> int:
        return self.patches.shape[0]

    def to_vector(self) -> np.ndarray:
        """Landmark-major patches (row-major within each), then the normalized points."""
        return np.concatenate([self.patches.ravel(), self.norm_points.ravel()])


def _grid_offsets(cfg: ObsConfig) -> np.ndarray:
    return cfg.S * (np.arange(cfg.C, dtype=np.float64) - (cfg.C - 1) / 2.0)


def extract_patch(img, center, cfg: ObsConfig) -> np.ndarray:
    """C x C bilinear samples around ``center``; row index follows y, column index x."""
    return extract_patches(img, np.asarray(center, dtype=np.float64)[None, :], cfg)[0]


def extract_patches(img, centers, cfg: ObsConfig) -> np.ndarray:
    centers = np.asarray(centers, dtype=np.float64)
    off = _grid_offsets(cfg)
    xs = centers[:, 0, None, None] + off[None, None, :]
    ys = centers[:, 1, None, None] + off[None, :, None]
    xs, ys = np.broadcast_arrays(xs, ys)
    return kernels.bilinear_sample(img, np.ascontiguousarray(xs), np.ascontiguousarray(ys), cfg.fill)


def normalize_points(points):
    """Center on the centroid and scale to unit RMS radius.

    Returns ``(normalized, centroid, scale)``.
    """
    p = np.asarray(points, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2 or len(p) < 2:
        raise DegeneratePointSet(f"need at least two 2D points, got shape {p.shape}")
    centroid = p.mean(axis=0)
    d = p - centroid
    scale = float(np.sqrt(np.mean(np.sum(d * d, axis=1))))
    if scale < 1e-9:
        raise DegeneratePointSet("all points coincide")
    return d / scale, centroid, scale


def encode(pair, source_pp, target_pp, cfg: ObsConfig) -> Observation:
    """Encode a pair whose images have already been preprocessed.

    Both patches of a landmark are centred on the *source* coordinate: the
    target position is what the regressor has to predict.
    """
    src = np.asarray(source_pp, dtype=np.float64)
    tgt = np.asarray(target_pp, dtype=np.float64)
    if src.ndim != 2 or tgt.ndim != 2:
        raise DimensionMismatch("encode expects preprocessed gray images")
    pts = pair.source_landmarks
    ps = extract_patches(src, pts, cfg)
    pt = extract_patches(tgt, pts, cfg)
    norm, centroid, scale = normalize_points(pts)
    return Observation(np.stack([ps, pt], axis=1), norm, centroid, scale)
