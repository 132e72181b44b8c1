"""Least-squares lane polynomials in the transformed plane.

A lane is fitted as ``x' = f(y')`` after mapping its pixels through a
:class:`~lanefit.geometry.Homography`; predictions at arbitrary rows are
obtained by pushing each row through the transform, evaluating the
polynomial and mapping the result back.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import RankDeficient
from .geometry import (HORIZON_EPS, Homography, invert, project, transform_points,
                       transformed_rows)

RANK_TOL = 1e-12


@dataclass(frozen=True)
class Polynomial:
    """``x' = sum_k coef[k] * y'**(n-k)``, highest power first.

    ``center``/``halfwidth`` record the affine map onto [-1, 1] used during
    the solve; evaluation goes through the scaled form, which stays accurate
    for pixel-scale arguments.
    """

    coef: np.ndarray
    center: float = 0.0
    halfwidth: float = 1.0
    scaled_coef: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=float)
        if coef.ndim != 1 or coef.size < 1 or not np.all(np.isfinite(coef)):
            raise ValueError("coefficients must be a non-empty finite vector")
        object.__setattr__(self, "coef", coef)

    @property
    def degree(self) -> int:
        return self.coef.size - 1

    def __call__(self, yp):
        yp = np.asarray(yp, dtype=float)
        if self.scaled_coef is None:
            return np.polyval(self.coef, yp)
        s = (yp - self.center) / self.halfwidth
        return npoly.polyval(s, self.scaled_coef)


def _scaling(yp):
    lo, hi = float(np.min(yp)), float(np.max(yp))
    center = 0.5 * (lo + hi)
    halfwidth = 0.5 * (hi - lo)
    if halfwidth <= 0:
        halfwidth = 1.0
    return center, halfwidth


def _vander(s, degree):
    # columns s**0 .. s**n
    return np.vander(s, degree + 1, increasing=True)


def fit_polynomial(points, degree: int) -> Polynomial:
    """Least-squares polynomial ``x'(y')`` through transformed points.

    The closed form ``(Y^T Y)^{-1} Y^T x'`` is evaluated through a QR
    factorization of the Vandermonde matrix built on ``y'`` rescaled to
    [-1, 1]; coefficients are then expanded back to the raw ``y'`` basis.
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    xp, yp = pts[:, 0], pts[:, 1]
    if np.unique(yp).size < degree + 1:
        raise RankDeficient(
            f"need {degree + 1} distinct rows for degree {degree}, got {np.unique(yp).size}")
    center, halfwidth = _scaling(yp)
    V = _vander((yp - center) / halfwidth, degree)
    Q, R = np.linalg.qr(V)
    diag = np.abs(np.diag(R))
    if diag.min() <= RANK_TOL * diag.max():
        raise RankDeficient("Vandermonde system is numerically rank deficient")
    scaled = np.linalg.solve(R, Q.T @ xp)
    # s = (y' - center) / halfwidth  ->  raw basis
    raw = _to_raw(scaled, center, halfwidth)
    return Polynomial(raw[::-1], center, halfwidth, scaled)


def _to_raw(scaled, center, halfwidth):
    """Expand ``sum c_k ((y - center)/halfwidth)**k`` into powers of ``y`` (low first)."""
    n = scaled.size
    raw = np.zeros(n)
    for k in range(n):
        ck = scaled[k] / halfwidth ** k
        for j in range(k + 1):
            raw[j] += ck * comb(k, j) * (-center) ** (k - j)
    return raw


@dataclass
class LanePrediction:
    rows: np.ndarray
    x: np.ndarray            # nan where miss
    miss: np.ndarray
    poly: Polynomial
    H: Homography
    n_excluded: int = 0      # input pixels dropped before the fit

    @property
    def n_miss(self) -> int:
        return int(self.miss.sum())


def evaluate_lane(H: Homography, poly: Polynomial, rows) -> LanePrediction:
    """Predict the lane x-position at each row.

    Each row is mapped to ``y'`` (its x is irrelevant), the polynomial gives
    ``x'``, and ``(x', y')`` is mapped back through the inverse transform.
    Rows at or behind the projected horizon are flagged as misses.
    """
    Hinv = invert(H)
    rows = np.asarray(rows, dtype=float)
    yp, w = transformed_rows(H, rows)
    miss = w <= HORIZON_EPS
    x = np.full(rows.shape, np.nan)
    ok = ~miss
    if ok.any():
        xps = poly(yp[ok])
        xs = project(Hinv, np.column_stack([xps, yp[ok]]))[:, 0]
        x[ok] = xs
        miss[ok] = ~np.isfinite(xs)
    return LanePrediction(rows, x, miss, poly, H)


def fit_lane(H: Homography, pixels, degree: int, rows) -> LanePrediction:
    """Transform lane pixels, fit, and evaluate at ``rows``.

    Pixels behind the projected horizon are excluded from the fit and counted
    in ``n_excluded``.
    """
    pix = np.asarray(pixels, dtype=float).reshape(-1, 2)
    if pix.shape[0] == 0:
        raise ValueError("no lane pixels")
    coords, miss = transform_points(H, pix)
    poly = fit_polynomial(coords, degree)
    pred = evaluate_lane(H, poly, rows)
    pred.n_excluded = int(miss.sum())
    return pred
