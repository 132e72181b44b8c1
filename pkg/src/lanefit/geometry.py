"""Constrained perspective transform used to straighten lanes before fitting.

The transform has six free coefficients arranged as::

    [[a, b, c],
     [0, d, e],
     [0, f, 1]]

so rows map to rows: the transformed ``y'`` depends on ``y`` alone.

Coordinates are plain ``(x, y)`` pairs.  The lane pipeline works in a
bottom-anchored plane frame (``y`` = height above the bottom image edge) so
that visible ground lies on the ``f*y + 1 > 0`` side of the projected horizon;
use :func:`rows_to_plane` to convert dataset rows.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import HorizonSingularity, SingularMatrix

HORIZON_EPS = 1e-9
DET_EPS = 1e-12


class ImagePoint(NamedTuple):
    x: float
    y: float


class TransformedPoint(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class Homography:
    a: float = 1.0
    b: float = 0.0
    c: float = 0.0
    d: float = 1.0
    e: float = 0.0
    f: float = 0.0

    def __post_init__(self):
        vals = self.params
        if not np.all(np.isfinite(vals)):
            raise SingularMatrix(f"non-finite coefficients {vals}")

    @classmethod
    def identity(cls) -> "Homography":
        return cls()

    @classmethod
    def from_params(cls, theta) -> "Homography":
        a, b, c, d, e, f = (float(t) for t in theta)
        return cls(a, b, c, d, e, f)

    @classmethod
    def from_matrix(cls, m) -> "Homography":
        m = np.asarray(m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("expected a 3x3 matrix")
        if m[1, 0] != 0 or m[2, 0] != 0:
            raise ValueError("entries (2,1) and (3,1) must be zero")
        if m[2, 2] == 0:
            raise SingularMatrix("(3,3) entry is zero; cannot normalize")
        m = m / m[2, 2]
        return cls(m[0, 0], m[0, 1], m[0, 2], m[1, 1], m[1, 2], m[2, 1])

    @property
    def params(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d, self.e, self.f])

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b, self.c],
                         [0.0, self.d, self.e],
                         [0.0, self.f, 1.0]])

    @property
    def det(self) -> float:
        return self.a * (self.d - self.e * self.f)

    def is_invertible(self) -> bool:
        return abs(self.det) > DET_EPS

    def scaled(self, s: float) -> "Homography":
        """Same map expressed in coordinates multiplied by ``s`` on both sides."""
        return Homography(self.a, self.b, self.c * s, self.d, self.e * s, self.f / s)


def transform_point(H: Homography, p) -> TransformedPoint:
    x, y = float(p[0]), float(p[1])
    w = H.f * y + 1.0
    if abs(w) <= HORIZON_EPS:
        raise HorizonSingularity(f"point y={y} lies on the projected horizon (w={w:g})")
    return TransformedPoint((H.a * x + H.b * y + H.c) / w, (H.d * y + H.e) / w)


def transformed_rows(H: Homography, y):
    """``y'`` for each row ``y``, with the homogeneous weight ``f*y + 1``."""
    y = np.asarray(y, dtype=float)
    w = H.f * y + 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        return (H.d * y + H.e) / w, w


def invert(H: Homography) -> Homography:
    """Inverse transform, renormalized to a unit (3,3) entry.

    The adjugate keeps the zero pattern, so the result is again constrained.
    Normalizing divides by ``a*d``; ``d == 0`` has no normalized inverse.
    """
    if not H.is_invertible():
        raise SingularMatrix(f"determinant {H.det:g} below {DET_EPS:g}")
    a, b, c, d, e, f = H.params
    if abs(d) <= DET_EPS:
        raise SingularMatrix("d == 0: inverse has a zero (3,3) entry")
    ad = a * d
    return Homography(
        (d - e * f) / ad,
        -(b - c * f) / ad,
        (b * e - c * d) / ad,
        1.0 / d,
        -e / d,
        -f / d,
    )


def transform_points(H: Homography, points, eps: float = HORIZON_EPS):
    """Batch transform.

    Returns ``(coords, miss)`` where ``miss`` flags points at or behind the
    projected horizon (``f*y + 1 <= eps``) and ``coords`` holds the transformed
    positions of the remaining points only, in input order.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    w = H.f * y + 1.0
    miss = w <= eps
    ok = ~miss
    wk = w[ok]
    xp = (H.a * x[ok] + H.b * y[ok] + H.c) / wk
    yp = (H.d * y[ok] + H.e) / wk
    return np.column_stack([xp, yp]), miss


def project(H: Homography, points, eps: float = HORIZON_EPS):
    """Apply ``H`` to an ``(N, 2)`` array without a side-of-horizon test.

    Only points with ``|f*y + 1| <= eps`` are singular; they come back as nan.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    w = H.f * y + 1.0
    bad = np.abs(w) <= eps
    w = np.where(bad, np.nan, w)
    return np.column_stack([(H.a * x + H.b * y + H.c) / w, (H.d * y + H.e) / w])


def rows_to_plane(values, image_height: float):
    """Convert between dataset rows (top origin) and plane ``y`` (bottom origin).

    The map is an involution, so it also converts back.
    """
    return image_height - np.asarray(values, dtype=float)
