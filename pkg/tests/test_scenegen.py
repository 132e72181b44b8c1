import numpy as np
import pytest

from lanefit import scenegen
from lanefit.errors import DegenerateCamera
from lanefit.evalkit import ABSENT, dumps_annotation

CAM = scenegen.CameraModel()


def max_line_dev(pts):
    c = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(c)
    return np.max(np.abs(c @ vt[-1]))


def test_defaults():
    assert (CAM.focal, CAM.width, CAM.image_height, CAM.height, CAM.pitch) == (500, 512, 256, 1.5, 0.03)
    assert CAM.horizon_row == pytest.approx(128 - 500 * np.tan(0.03))


def test_invalid_models():
    with pytest.raises(ValueError):
        scenegen.CameraModel(focal=0)
    with pytest.raises(ValueError):
        scenegen.RoadModel(slope=0.8)
    with pytest.raises(ValueError):
        scenegen.RoadModel(offsets=())
    with pytest.raises(ValueError):
        scenegen.RoadModel(extent=0)


def test_flat_straight_lanes_collinear():
    sc = scenegen.generate_scene(CAM, scenegen.RoadModel(offsets=(-5.0, -1.7, 1.8, 5.3)))
    vps = []
    for i in range(4):
        pts = sc.lane_points(i, plane=False)
        assert len(pts) > 5
        assert max_line_dev(pts) < 1e-6
        vps.append(np.polyfit(pts[:, 1], pts[:, 0], 1))
    # all lines meet at the vanishing point on the horizon row
    for k1, k0 in vps:
        assert k1 * CAM.horizon_row + k0 == pytest.approx(CAM.cx, abs=1e-6)


def test_points_inside_image():
    for sc in scenegen.generate_corpus(10, seed=4):
        for i in range(len(sc.annotation.lanes)):
            p = sc.lane_points(i, plane=False)
            assert np.all((p[:, 0] >= 0) & (p[:, 0] <= CAM.width - 1))
            assert np.all((p[:, 1] >= 0) & (p[:, 1] < CAM.image_height))


def test_ground_truth_consistency():
    road = scenegen.RoadModel(curvature=((0.01, 5e-4),), z0=25, slope=0.04)
    sc = scenegen.generate_scene(CAM, road)
    rows = np.asarray(sc.annotation.h_samples, float)
    for i, lane in enumerate(sc.annotation.lanes):
        xs = np.asarray(lane, float)
        ok = xs != ABSENT
        X, Y, Z = scenegen.image_to_ground(CAM, road, xs[ok], rows[ok])
        g = sc.ground[i][ok]
        assert np.allclose(np.column_stack([X, Y, Z]), g, atol=1e-6)
        u, v = scenegen.project_world(CAM, X, Y, Z)
        assert np.allclose(u, xs[ok], atol=1e-6) and np.allclose(v, rows[ok], atol=1e-6)


def test_upslope_raises_farthest_point():
    rows = np.arange(60, 256, 2)
    flat = scenegen.generate_scene(CAM, scenegen.RoadModel(z0=30), rows)
    up = scenegen.generate_scene(CAM, scenegen.RoadModel(z0=30, slope=0.05), rows)

    def top_row(sc, i):
        return sc.lane_points(i, plane=False)[:, 1].min()
    for i in range(4):
        assert top_row(up, i) < top_row(flat, i)


def _far_row(slope):
    road = scenegen.RoadModel(z0=30, slope=slope)
    Z = road.extent
    return scenegen.project_world(CAM, road.offsets[1], road.ground_height(Z), Z)[1]


def test_slope_monotone():
    rows = [_far_row(s) for s in np.linspace(-0.02, 0.1, 13)]
    assert np.all(np.diff(rows) < 0)


def test_deterministic():
    a = [dumps_annotation(s.annotation) for s in scenegen.generate_corpus(5, seed=9)]
    b = [dumps_annotation(s.annotation) for s in scenegen.generate_corpus(5, seed=9)]
    assert a == b
    c = [dumps_annotation(s.annotation) for s in scenegen.generate_corpus(5, seed=10)]
    assert a != c


def test_degenerate_camera():
    with pytest.raises(DegenerateCamera):
        scenegen.generate_scene(scenegen.CameraModel(pitch=-0.6), scenegen.RoadModel())


def test_rows_outside_image():
    with pytest.raises(ValueError):
        scenegen.generate_scene(CAM, scenegen.RoadModel(), [10, 300])


def test_above_horizon_rows_absent():
    sc = scenegen.generate_scene(CAM, scenegen.RoadModel(), [20, 60, 200])
    assert all(lane[0] == ABSENT and lane[1] == ABSENT for lane in sc.annotation.lanes)
    assert any(lane[2] != ABSENT for lane in sc.annotation.lanes)


def test_flat_fraction():
    scenes = scenegen.generate_corpus(20, seed=1, flat_fraction=1.0)
    assert all(s.road.slope == 0.0 for s in scenes)


def test_mask_and_pgm(tmp_path):
    sc = scenegen.generate_scene(CAM, scenegen.RoadModel())
    mask = scenegen.lane_mask(sc)
    assert mask.shape == (256, 512) and set(np.unique(mask)) == {0, 1, 2, 3, 4}
    p = tmp_path / "m.pgm"
    scenegen.write_pgm(mask, p)
    raw = p.read_bytes()
    assert raw.startswith(b"P5\n512 256\n255\n")
    assert np.array_equal(np.frombuffer(raw[-512 * 256:], np.uint8).reshape(256, 512), mask)


def test_synth_embeddings_separation():
    sc = scenegen.generate_scene(CAM, scenegen.RoadModel())
    for dim in (2, 4):
        es = scenegen.synth_embeddings(sc, dim, 4.0, 0.0, seed=1)
        cents = np.array([es.embeddings[es.labels == c][0] for c in np.unique(es.labels)])
        D = np.linalg.norm(cents[:, None] - cents[None], axis=2)
        assert D[np.triu_indices(4, 1)].min() >= 4.0 - 1e-9
    with pytest.raises(ValueError):
        scenegen.synth_embeddings(sc, 0, 4.0, 0.1)
