from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lanefit import scenegen
from lanefit.curvefit import Polynomial, evaluate_lane, fit_lane, fit_polynomial
from lanefit.errors import RankDeficient
from lanefit.geometry import Homography, rows_to_plane
from lanefit.hoptim import fixed_homography_from_calibration


def exact_lstsq(x, y, n):
    """Normal equations solved in rational arithmetic."""
    X = [[Fraction(float(v)) ** k for k in range(n, -1, -1)] for v in y]
    b = [Fraction(float(v)) for v in x]
    m = n + 1
    A = [[sum(X[i][r] * X[i][c] for i in range(len(X))) for c in range(m)] for r in range(m)]
    rhs = [sum(X[i][r] * b[i] for i in range(len(X))) for r in range(m)]
    for col in range(m):
        piv = next(r for r in range(col, m) if A[r][col] != 0)
        A[col], A[piv] = A[piv], A[col]
        rhs[col], rhs[piv] = rhs[piv], rhs[col]
        for r in range(m):
            if r != col and A[r][col] != 0:
                k = A[r][col] / A[col][col]
                A[r] = [a - k * c for a, c in zip(A[r], A[col])]
                rhs[r] -= k * rhs[col]
    return np.array([float(rhs[i] / A[i][i]) for i in range(m)])


def test_exact_interpolation():
    y = np.arange(4.0)
    p = fit_polynomial(np.column_stack([2 * y ** 2 + 3 * y + 1, y]), 2)
    assert np.allclose(p.coef, [2, 3, 1], atol=1e-9)


def test_too_few_points():
    with pytest.raises(RankDeficient):
        fit_polynomial([(0, 0), (1, 1)], 2)


def test_same_row_rank_deficient():
    with pytest.raises(RankDeficient):
        fit_polynomial([(0, 5), (1, 5), (2, 5), (3, 5)], 1)


def test_noisy_matches_rational_oracle(rng):
    y = np.sort(rng.uniform(100, 250, 50))
    x = 0.002 * y ** 2 - 0.3 * y + 40 + rng.normal(0, 2, 50)
    got = fit_polynomial(np.column_stack([x, y]), 2).coef
    ref = exact_lstsq(x, y, 2)
    assert np.allclose(got, ref, rtol=1e-7, atol=0)


def test_cubic_matches_rational_oracle(rng):
    y = np.sort(rng.uniform(0, 256, 50))
    x = 1e-5 * y ** 3 - 0.002 * y ** 2 + 0.1 * y + 300 + rng.normal(0, 1, 50)
    got = fit_polynomial(np.column_stack([x, y]), 3).coef
    assert np.allclose(got, exact_lstsq(x, y, 3), rtol=1e-7)


def test_evaluate_identity_linear():
    rows = np.arange(0.0, 10.0)
    pred = evaluate_lane(Homography.identity(), Polynomial([1.0, 0.0]), rows)
    assert np.allclose(pred.x, rows)
    assert pred.n_miss == 0


def test_evaluate_identity_quadratic():
    pred = evaluate_lane(Homography.identity(), Polynomial([2.0, 3.0, 1.0]), [2.0])
    assert pred.x[0] == pytest.approx(15.0)


def test_fit_lane_identity_reproduces_cubic():
    y = np.arange(80.0, 256.0, 4.0)
    x = 2e-5 * y ** 3 - 3e-3 * y ** 2 + 0.5 * y + 100
    pred = fit_lane(Homography.identity(), np.column_stack([x, y]), 3, y)
    assert np.max(np.abs(pred.x - x)) < 1e-6


def test_fixed_h_on_flat_scene_matches_ground_truth():
    cam = scenegen.CameraModel()
    H = fixed_homography_from_calibration(scenegen.calibration_scene(cam))
    road = scenegen.RoadModel(curvature=((0.01, 3e-4),), slope=0.0)
    sc = scenegen.generate_scene(cam, road)
    for lane in sc.all_lane_points(min_points=4):
        pred = fit_lane(H, lane, 2, lane[:, 1])
        assert pred.n_miss == 0
        assert np.max(np.abs(pred.x - lane[:, 0])) < 0.5


def _slope_scene(slope=0.06):
    cam = scenegen.CameraModel()
    road = scenegen.RoadModel(curvature=((0.0, 5e-4),), z0=25.0, slope=slope)
    return cam, scenegen.generate_scene(cam, road)


def test_fixed_h_misses_on_upslope():
    from lanefit.geometry import transform_points
    cam, sc = _slope_scene()
    H = fixed_homography_from_calibration(scenegen.calibration_scene(cam))
    lanes = sc.all_lane_points(min_points=4)
    assert sum(int(transform_points(H, p)[1].sum()) for p in lanes) > 0
    total = 0
    for p in lanes:
        pred = fit_lane(H, p, 3, p[:, 1])
        total += pred.n_miss
    assert total > 0


def test_conditional_h_no_misses_on_upslope():
    from lanefit.hoptim import HOptimConfig, optimize_homography
    cam, sc = _slope_scene()
    lanes = sc.all_lane_points(min_points=5)
    H = optimize_homography(lanes, HOptimConfig(degree=3), image_width=cam.width).H
    for p in lanes:
        assert fit_lane(H, p, 3, p[:, 1]).n_miss == 0


def _sse(poly, pts):
    r = poly(pts[:, 1]) - pts[:, 0]
    return float(r @ r)


@given(st.integers(0, 10 ** 6), st.integers(1, 3))
def test_permutation_invariance(seed, n):
    rng = np.random.default_rng(seed)
    pts = np.column_stack([rng.normal(0, 50, 30), rng.uniform(0, 256, 30)])
    a = fit_polynomial(pts, n).coef
    b = fit_polynomial(pts[rng.permutation(30)], n).coef
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12 * np.abs(a).max())


@given(st.integers(0, 10 ** 6), st.integers(1, 3))
def test_optimality(seed, n):
    rng = np.random.default_rng(seed)
    y = rng.uniform(-1, 1, 25)
    pts = np.column_stack([rng.normal(size=25) + y ** 2, y])
    p = fit_polynomial(pts, n)
    base = _sse(Polynomial(p.coef), pts)
    for k in range(n + 1):
        for s in (1e-4, -1e-4):
            c = p.coef.copy()
            c[k] += s
            assert _sse(Polynomial(c), pts) >= base - 1e-12


@given(st.integers(0, 10 ** 6), st.integers(1, 4))
def test_exact_recovery(seed, n):
    rng = np.random.default_rng(seed)
    coef = rng.normal(size=n + 1)
    y = np.sort(rng.uniform(-2, 2, 3 * n + 3))
    pts = np.column_stack([np.polyval(coef, y), y])
    p = fit_polynomial(pts, n)
    assert np.max(np.abs(p(y) - pts[:, 0])) < 1e-9
    assert np.allclose(p.coef, coef, rtol=1e-6, atol=1e-8)


def test_degree3_not_worse_on_curved_scenes():
    from lanefit.evalkit import fit_error_benchmark
    scenes = scenegen.generate_corpus(8, seed=3)
    rep = fit_error_benchmark(scenes, calibration_scene=scenegen.calibration_scene())
    for mode in ("none", "fixed", "conditional"):
        assert rep.mse(mode, 3) <= rep.mse(mode, 2)


def test_rows_frame_round_trip():
    assert np.allclose(rows_to_plane([0, 256], 256), [256, 0])
