"""Domain types shared by every module.

Conventions
-----------
* Gray images are 2D ``float64`` numpy arrays indexed ``img[y, x]``; RGB
  images are ``(H, W, 3)`` arrays with channels in [0, 1].
* ``x`` is the column index and ``y`` the row index; the center of pixel
  ``(0, 0)`` sits at coordinate ``(0.0, 0.0)``.
* Landmark sets are ``(K, 2)`` arrays of ``(x, y)`` rows. Row order defines
  correspondence between a source and a target set.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CountMismatch, DataError, SingularTransform

DET_EPS = 1e-12


class Category(str, enum.Enum):
    A = "A"
    P = "P"
    S = "S"
    SYNTHETIC = "Synthetic"


@dataclass(frozen=True)
class Affine2D:
    """2D affine map ``x' = a11 x + a12 y + tx``, ``y' = a21 x + a22 y + ty``."""

    a11: float = 1.0
    a12: float = 0.0
    tx: float = 0.0
    a21: float = 0.0
    a22: float = 1.0
    ty: float = 0.0

    @classmethod
    def identity(cls) -> "Affine2D":
        return cls()

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Affine2D":
        return cls(tx=float(tx), ty=float(ty))

    @classmethod
    def rotation(cls, angle_rad: float) -> "Affine2D":
        c, s = math.cos(angle_rad), math.sin(angle_rad)
        return cls(c, -s, 0.0, s, c, 0.0)

    @classmethod
    def scaling(cls, sx: float, sy: Optional[float] = None) -> "Affine2D":
        return cls(a11=float(sx), a22=float(sx if sy is None else sy))

    @classmethod
    def shear(cls, h: float) -> "Affine2D":
        return cls(a12=float(h))

    @classmethod
    def from_matrix(cls, m) -> "Affine2D":
        m = np.asarray(m, dtype=np.float64).reshape(2, 3)
        return cls(*(float(v) for v in m.ravel()))

    @property
    def params(self) -> tuple:
        """The six entries in row-major order ``(a11, a12, tx, a21, a22, ty)``."""
        return (self.a11, self.a12, self.tx, self.a21, self.a22, self.ty)

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.params, dtype=np.float64).reshape(2, 3)

    @property
    def det(self) -> float:
        return self.a11 * self.a22 - self.a12 * self.a21

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.params)

    def apply(self, points):
        """Map a point ``(x, y)`` or an ``(N, 2)`` array of points."""
        p = np.asarray(points, dtype=np.float64)
        x, y = p[..., 0], p[..., 1]
        out = np.empty_like(p)
        out[..., 0] = self.a11 * x + self.a12 * y + self.tx
        out[..., 1] = self.a21 * x + self.a22 * y + self.ty
        return out

    def invert(self) -> "Affine2D":
        d = self.det
        if not abs(d) > DET_EPS:
            raise SingularTransform(f"determinant {d!r} is below {DET_EPS}")
        i11, i12 = self.a22 / d, -self.a12 / d
        i21, i22 = -self.a21 / d, self.a11 / d
        return Affine2D(
            i11, i12, -(i11 * self.tx + i12 * self.ty),
            i21, i22, -(i21 * self.tx + i22 * self.ty),
        )

    def compose(self, other: "Affine2D") -> "Affine2D":
        """Return ``self ∘ other`` (``other`` is applied first)."""
        a, b = self, other
        return Affine2D(
            a.a11 * b.a11 + a.a12 * b.a21,
            a.a11 * b.a12 + a.a12 * b.a22,
            a.a11 * b.tx + a.a12 * b.ty + a.tx,
            a.a21 * b.a11 + a.a22 * b.a21,
            a.a21 * b.a12 + a.a22 * b.a22,
            a.a21 * b.tx + a.a22 * b.ty + a.ty,
        )

    def __matmul__(self, other: "Affine2D") -> "Affine2D":
        return self.compose(other)

    def about(self, center) -> "Affine2D":
        """Conjugate so that the linear part acts about ``center``."""
        cx, cy = center
        return Affine2D.translation(cx, cy) @ self @ Affine2D.translation(-cx, -cy)


def affine_apply(t: Affine2D, p):
    return t.apply(p)


def affine_invert(t: Affine2D) -> Affine2D:
    return t.invert()


def affine_compose(a: Affine2D, b: Affine2D) -> Affine2D:
    return a.compose(b)


def as_landmarks(points) -> np.ndarray:
    pts = np.array(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
        raise DataError(f"landmarks must have shape (K, 2) with K >= 1, got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise DataError("landmark coordinates must be finite")
    pts.setflags(write=False)
    return pts


@dataclass(frozen=True)
class ImagePair:
    """Source/target images with homologous landmarks.

    ``transform`` holds the ground-truth source→target map when it is known
    (synthetic pairs); it is ``None`` for pairs loaded from disk.
    """

    id: str
    source: np.ndarray
    target: np.ndarray
    source_landmarks: np.ndarray
    target_landmarks: np.ndarray
    category: Category = Category.SYNTHETIC
    transform: Optional[Affine2D] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "source_landmarks", as_landmarks(self.source_landmarks))
        object.__setattr__(self, "target_landmarks", as_landmarks(self.target_landmarks))
        if len(self.source_landmarks) != len(self.target_landmarks):
            raise CountMismatch(
                f"pair {self.id}: {len(self.source_landmarks)} source vs "
                f"{len(self.target_landmarks)} target landmarks"
            )
        object.__setattr__(self, "category", Category(self.category))

    @property
    def n_landmarks(self) -> int:
        return len(self.source_landmarks)

    def with_(self, **changes) -> "ImagePair":
        kw = dict(
            id=self.id, source=self.source, target=self.target,
            source_landmarks=self.source_landmarks, target_landmarks=self.target_landmarks,
            category=self.category, transform=self.transform,
        )
        kw.update(changes)
        return ImagePair(**kw)
