"""Reprojection loss over the six homography coefficients and its optimizer.

For every lane the ground-truth points are transformed, a degree-``n``
polynomial is fitted in closed form, evaluated back at each transformed row,
and reprojected into the image.  The loss is the mean squared x error over
all points of all lanes; each lane gets its own polynomial under the shared
transform.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .curvefit import RANK_TOL
from .errors import HorizonSingularity, InfeasibleStart, RankDeficient
from .geometry import HORIZON_EPS, Homography

log = logging.getLogger(__name__)

PARAM_NAMES = ("a", "b", "c", "d", "e", "f")


@dataclass
class HOptimConfig:
    degree: int = 3
    step_size: float = 1e-2
    max_iter: int = 2000
    tol: float = 1e-10
    grad_mode: str = "analytic"          # or "central"
    init: str = "identity"               # or "fixed"
    init_H: Homography | None = None     # used when init == "fixed"
    init_jitter: float = 0.0             # seeded perturbation of the start, normalized units
    seed: int = 0
    max_halvings: int = 20
    scale: float | None = None           # coordinate normalization, default 1/image width

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.grad_mode not in ("analytic", "central"):
            raise ValueError(f"unknown grad_mode {self.grad_mode!r}")
        if self.init not in ("identity", "fixed"):
            raise ValueError(f"unknown init {self.init!r}")


def _as_lanes(lanes):
    out = []
    for lane in lanes:
        pts = np.asarray(lane, dtype=float).reshape(-1, 2)
        out.append(pts)
    return out


def _lane_loss(theta, x, y, degree, want_grad):
    """Sum of squared reprojection errors for one lane (and its gradient)."""
    a, b, c, d, e, f = theta
    w = f * y + 1.0
    if np.any(np.abs(w) <= HORIZON_EPS):
        raise HorizonSingularity("ground-truth point on the projected horizon")
    xp = (a * x + b * y + c) / w
    yp = (d * y + e) / w

    # the fit is invariant to affine reparametrization of y', so the
    # centering/scaling constants are treated as fixed
    lo, hi = yp.min(), yp.max()
    m = 0.5 * (lo + hi)
    h = 0.5 * (hi - lo)
    if h <= 0:
        raise RankDeficient("all transformed rows coincide")
    s = (yp - m) / h
    V = np.vander(s, degree + 1, increasing=True)
    Q, R = np.linalg.qr(V)
    diag = np.abs(np.diag(R))
    if diag.min() <= RANK_TOL * diag.max():
        raise RankDeficient("Vandermonde system is numerically rank deficient")
    beta = np.linalg.solve(R, Q.T @ xp)
    xfit = V @ beta
    # reprojection of (x'*, y') through H^-1 lands on row y with
    # x* = (x'* w - b y - c) / a
    xstar = (xfit * w - b * y - c) / a
    r = xstar - x
    sse = float(r @ r)
    if not want_grad:
        return sse, None

    g = 2.0 * r
    ga = -np.sum(g * xstar) / a
    gb = -np.sum(g * y) / a
    gc = -np.sum(g) / a
    z = g * w / a                     # d/d xfit
    gw = g * xfit / a                 # direct w dependence through x*

    # xfit = P(V) xp with P the projection onto range(V)
    resid = xp - xfit
    gxp = Q @ (Q.T @ z)
    z_perp = z - gxp
    gamma = np.linalg.solve(R, Q.T @ z)
    Vbar = np.outer(z_perp, beta) + np.outer(resid, gamma)
    k = np.arange(degree + 1)
    dV = np.zeros_like(V)
    dV[:, 1:] = k[1:] * V[:, :-1]
    gyp = np.sum(Vbar * dV, axis=1) / h

    ga += np.sum(gxp * x / w)
    gb += np.sum(gxp * y / w)
    gc += np.sum(gxp / w)
    gd = np.sum(gyp * y / w)
    ge = np.sum(gyp / w)
    gw += -gxp * xp / w - gyp * yp / w
    gf = np.sum(gw * y)
    return sse, np.array([ga, gb, gc, gd, ge, gf])


def _loss_theta(theta, lanes, degree, want_grad=False):
    total = 0.0
    grad = np.zeros(6) if want_grad else None
    n = 0
    for pts in lanes:
        sse, g = _lane_loss(theta, pts[:, 0], pts[:, 1], degree, want_grad)
        total += sse
        n += pts.shape[0]
        if want_grad:
            grad += g
    if n == 0:
        raise ValueError("no ground-truth points")
    if want_grad:
        return total / n, grad / n
    return total / n


def reprojection_loss(H: Homography, lanes, degree: int = 3) -> float:
    """Mean squared x reprojection error (px^2) pooled over all lanes."""
    return _loss_theta(H.params, _as_lanes(lanes), degree)


def _central_diff(theta, lanes, degree):
    grad = np.zeros(6)
    for k in range(6):
        hk = 1e-6 * max(1.0, abs(theta[k]))
        tp, tm = theta.copy(), theta.copy()
        tp[k] += hk
        tm[k] -= hk
        grad[k] = (_loss_theta(tp, lanes, degree) - _loss_theta(tm, lanes, degree)) / (2 * hk)
    return grad


def loss_gradient(H: Homography, lanes, degree: int = 3, mode: str = "analytic") -> np.ndarray:
    """Gradient of :func:`reprojection_loss` w.r.t. ``[a, b, c, d, e, f]``."""
    lanes = _as_lanes(lanes)
    theta = H.params
    if mode == "analytic":
        return _loss_theta(theta, lanes, degree, want_grad=True)[1]
    if mode == "central":
        return _central_diff(theta, lanes, degree)
    raise ValueError(f"unknown gradient mode {mode!r}")


@dataclass
class OptimResult:
    H: Homography
    loss: float                     # px^2
    trace: list = field(default_factory=list)   # accepted losses, px^2
    iterations: int = 0
    converged: bool = False


def _feasible(theta, lanes):
    f = theta[5]
    return all(np.all(f * pts[:, 1] + 1.0 > HORIZON_EPS) for pts in lanes)


def _try_loss(theta, lanes, degree):
    if not _feasible(theta, lanes):
        return np.inf
    try:
        val = _loss_theta(theta, lanes, degree)
    except (HorizonSingularity, RankDeficient, np.linalg.LinAlgError):
        return np.inf
    return val if np.isfinite(val) else np.inf


def optimize_homography(lanes, config: HOptimConfig | None = None,
                        image_width: float | None = None) -> OptimResult:
    """Per-scene descent on the reprojection loss.

    Coordinates are scaled by ``1/image_width`` (or ``config.scale``) while
    optimizing; the returned transform acts on pixel coordinates.  Steps that
    increase the loss or push a ground-truth point across the projected
    horizon are halved, up to ``max_halvings`` times.
    """
    cfg = config or HOptimConfig()
    lanes = _as_lanes(lanes)
    if cfg.scale is not None:
        scale = cfg.scale
    else:
        width = image_width if image_width is not None else max(
            float(np.max(np.abs(p[:, 0]))) for p in lanes)
        scale = 1.0 / max(width, 1e-12)
    norm = [p * scale for p in lanes]

    if cfg.init == "fixed":
        if cfg.init_H is None:
            raise ValueError("init='fixed' needs init_H")
        H0 = cfg.init_H
    else:
        H0 = Homography.identity()
    theta = H0.scaled(scale).params
    if cfg.init_jitter > 0:
        rng = np.random.default_rng(cfg.seed)
        theta = theta + cfg.init_jitter * rng.standard_normal(6)

    if not _feasible(theta, norm):
        raise InfeasibleStart("initial transform puts ground-truth points behind the horizon")
    loss = _try_loss(theta, norm, cfg.degree)
    if not np.isfinite(loss):
        raise InfeasibleStart("initial loss is not finite")

    px2 = 1.0 / scale ** 2
    trace = [loss * px2]
    if loss == 0.0:
        return OptimResult(Homography.from_params(theta).scaled(1.0 / scale), 0.0, trace, 0, True)
    # descend on the loss relative to its starting value so the tolerance and
    # step size do not depend on the pixel scale of the scene
    ref = loss
    J = 1.0
    step = cfg.step_size
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        if cfg.grad_mode == "analytic":
            grad = _loss_theta(theta, norm, cfg.degree, want_grad=True)[1] / ref
        else:
            grad = _central_diff(theta, norm, cfg.degree) / ref
        if not np.all(np.isfinite(grad)) or not np.any(grad):
            converged = True
            break
        accepted = False
        for _ in range(cfg.max_halvings + 1):
            cand = theta - step * grad
            val = _try_loss(cand, norm, cfg.degree) / ref
            if val <= J:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True
            break
        change = J - val
        theta, J = cand, val
        trace.append(J * ref * px2)
        step *= 2.0
        if change < cfg.tol:
            converged = True
            break
    loss = J * ref

    H = Homography.from_params(theta).scaled(1.0 / scale)
    return OptimResult(H, loss * px2, trace, it, converged)


def fixed_homography_from_calibration(flat_scene, config: HOptimConfig | None = None) -> Homography:
    """Bird's-eye transform calibrated once on a flat-ground scene, then frozen.

    The reprojection loss only pins down the projected horizon (``f``); the
    remaining coefficients are set from the generator camera so that straight
    lanes parallel to the camera axis come out vertical and parallel:
    ``x' = (x - cx) / w``, ``y' = y / w``.
    """
    if getattr(flat_scene.road, "slope", 0.0) != 0.0:
        raise ValueError("calibration scene must have zero slope")
    cfg = config or HOptimConfig(degree=2)
    lanes = flat_scene.all_lane_points(plane=True, min_points=cfg.degree + 2)
    res = optimize_homography(lanes, cfg, image_width=flat_scene.camera.width)
    return Homography(1.0, 0.0, -flat_scene.camera.cx, 1.0, 0.0, res.H.f)
