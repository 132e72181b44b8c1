"""Synthetic road scenes with exact lane ground truth.

A pinhole camera looks at piecewise-planar ground: flat up to ``z0`` metres,
then inclined by ``slope`` radians.  Each lane's lateral position is a
polynomial in forward distance.  For every annotated row the ground point
seen by that row is solved for analytically and the lane x-position there is
recorded; rows that see no road get the ``-2`` sentinel.

World frame: X right, Y up, Z forward, camera at ``(0, height, 0)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateCamera
from .evalkit import ABSENT, SceneAnnotation
from .geometry import rows_to_plane


@dataclass(frozen=True)
class CameraModel:
    focal: float = 500.0
    cx: float = 256.0
    cy: float = 128.0
    height: float = 1.5
    pitch: float = 0.03          # positive tilts the view down
    width: int = 512
    image_height: int = 256

    def __post_init__(self):
        if self.focal <= 0 or self.height <= 0 or self.width <= 0 or self.image_height <= 0:
            raise ValueError("focal, height and image dims must be positive")

    @property
    def horizon_row(self) -> float:
        """Row of the flat-ground horizon."""
        return self.cy - self.focal * np.tan(self.pitch)


@dataclass(frozen=True)
class RoadModel:
    offsets: tuple = (-5.25, -1.75, 1.75, 5.25)
    # per lane: lateral position = offset + sum_k curvature[k] * Z**(k+1)
    curvature: tuple = ((0.0, 0.0),)
    z0: float = 30.0
    slope: float = 0.0
    extent: float = 150.0
    z_min: float = 3.0

    def __post_init__(self):
        if len(self.offsets) < 1:
            raise ValueError("need at least one lane")
        if self.extent <= 0:
            raise ValueError("extent must be positive")
        if abs(self.slope) >= np.pi / 4:
            raise ValueError("|slope| must be < pi/4")

    @property
    def lane_count(self) -> int:
        return len(self.offsets)

    def lane_coeffs(self, i):
        if len(self.curvature) == 1:
            return tuple(self.curvature[0])
        return tuple(self.curvature[i])

    def lateral(self, i, Z):
        X = np.full_like(np.asarray(Z, dtype=float), self.offsets[i])
        for k, ck in enumerate(self.lane_coeffs(i)):
            X = X + ck * Z ** (k + 1)
        return X

    def ground_height(self, Z):
        Z = np.asarray(Z, dtype=float)
        return np.where(Z > self.z0, (Z - self.z0) * np.tan(self.slope), 0.0)


def default_h_samples(camera: CameraModel | None = None, step: int = 4):
    cam = camera or CameraModel()
    return list(range(int(0.3 * cam.image_height) // step * step, cam.image_height, step))


@dataclass
class Scene:
    annotation: SceneAnnotation
    camera: CameraModel
    road: RoadModel
    ground: list = field(default_factory=list)      # per lane: (n_rows, 3) world XYZ, nan if absent
    embeddings: object = None

    def lane_points(self, i, plane=True):
        """Present ``(x, y)`` points of lane ``i``; ``plane`` converts rows to plane y."""
        ann = self.annotation
        xs = np.asarray(ann.lanes[i], dtype=float)
        ys = np.asarray(ann.h_samples, dtype=float)
        ok = xs != ABSENT
        if plane:
            ys = rows_to_plane(ys, self.camera.image_height)
        return np.column_stack([xs[ok], ys[ok]])

    def all_lane_points(self, plane=True, min_points=1):
        lanes = [self.lane_points(i, plane) for i in range(len(self.annotation.lanes))]
        return [p for p in lanes if p.shape[0] >= min_points]


def _camera_axes(pitch):
    fwd = np.array([0.0, -np.sin(pitch), np.cos(pitch)])
    down = np.array([0.0, -np.cos(pitch), -np.sin(pitch)])
    return fwd, down


def row_ground_point(camera: CameraModel, road: RoadModel, row):
    """Forward distance ``Z``, height ``Y`` and ray depth ``t`` seen by ``row``.

    Returns nans where the ray never meets the road within its extent.
    ``t`` is the camera-frame depth, so a ground point at lateral ``X``
    projects to column ``cx + focal * X / t``.
    """
    q = (np.asarray(row, dtype=float) - camera.cy) / camera.focal
    th = camera.pitch
    A = np.sin(th) + q * np.cos(th)        # downward rate of the ray per unit depth
    B = np.cos(th) - q * np.sin(th)        # forward rate
    with np.errstate(divide="ignore", invalid="ignore"):
        t_flat = np.where(A > 0, camera.height / A, np.nan)
        Z = t_flat * B
        flat_ok = (Z > 0) & (Z <= road.z0)
        tan_s = np.tan(road.slope)
        den = A + B * tan_s
        t_slope = np.where(den > 0, (camera.height + road.z0 * tan_s) / den, np.nan)
        Zs = t_slope * B
        slope_ok = ~flat_ok & (Zs > road.z0)
    t = np.where(flat_ok, t_flat, np.where(slope_ok, t_slope, np.nan))
    Z = t * B
    valid = np.isfinite(Z) & (Z >= road.z_min) & (Z <= road.extent)
    t = np.where(valid, t, np.nan)
    Z = np.where(valid, Z, np.nan)
    Y = road.ground_height(np.nan_to_num(Z))
    Y = np.where(valid, Y, np.nan)
    return Z, Y, t


def image_to_ground(camera: CameraModel, road: RoadModel, col, row):
    """World ``(X, Y, Z)`` of the road point imaged at ``(col, row)``."""
    Z, Y, t = row_ground_point(camera, road, row)
    X = (np.asarray(col, dtype=float) - camera.cx) * t / camera.focal
    return X, Y, Z


def project_world(camera: CameraModel, X, Y, Z):
    """Pinhole projection of world points to ``(column, row)``."""
    fwd, down = _camera_axes(camera.pitch)
    v = np.stack([np.asarray(X, float), np.asarray(Y, float) - camera.height,
                  np.asarray(Z, float)], axis=-1)
    zc = v @ fwd
    yc = v @ down
    return camera.cx + camera.focal * v[..., 0] / zc, camera.cy + camera.focal * yc / zc


def generate_scene(camera: CameraModel, road: RoadModel, h_samples=None,
                   raw_file: str = "synthetic/0.jpg") -> Scene:
    if camera.pitch <= -np.pi / 2 + 1e-6 or camera.pitch >= np.pi / 2:
        raise DegenerateCamera(f"pitch {camera.pitch} out of range")
    rows = np.asarray(h_samples if h_samples is not None else default_h_samples(camera), dtype=float)
    if rows.size and (rows.min() < 0 or rows.max() >= camera.image_height):
        raise ValueError("h_samples outside the image")
    if camera.horizon_row >= camera.image_height:
        raise DegenerateCamera("camera points above the horizon; no ground visible")

    Z, Y, t = row_ground_point(camera, road, rows)
    lanes, ground = [], []
    for i in range(road.lane_count):
        X = road.lateral(i, np.nan_to_num(Z))
        u = camera.cx + camera.focal * X / t
        ok = np.isfinite(u) & (u >= 0) & (u <= camera.width - 1)
        xs = [float(v) if k else ABSENT for v, k in zip(u, ok)]
        lanes.append(xs)
        ground.append(np.column_stack([np.where(ok, X, np.nan), np.where(ok, Y, np.nan),
                                       np.where(ok, Z, np.nan)]))
    ann = SceneAnnotation(raw_file, [int(r) if float(r).is_integer() else float(r) for r in rows], lanes)
    return Scene(ann, camera, road, ground)


def random_road(rng, max_slope=0.05, max_curvature=1e-3, lanes=4, slope=None,
                z0_range=(20.0, 40.0)):
    """Draw a road: random lane spacing, curvature and post-hinge slope."""
    width = rng.uniform(3.3, 3.9)
    start = rng.uniform(-0.5, 0.5) - width * (lanes - 1) / 2
    offsets = tuple(start + width * k for k in range(lanes))
    k2 = rng.uniform(-max_curvature, max_curvature)
    k1 = rng.uniform(-0.02, 0.02)
    if slope is None:
        slope = rng.uniform(-max_slope, max_slope)
    return RoadModel(offsets=offsets, curvature=((k1, k2),), z0=rng.uniform(*z0_range),
                     slope=float(slope))


def generate_corpus(n, seed=0, max_slope=0.05, max_curvature=1e-3, camera=None,
                    h_samples=None, flat_fraction=0.0):
    """``n`` seeded scenes; a ``flat_fraction`` of them have zero slope."""
    cam = camera or CameraModel()
    rng = np.random.default_rng(seed)
    scenes = []
    for k in range(n):
        flat = rng.uniform() < flat_fraction
        road = random_road(rng, max_slope, max_curvature, slope=0.0 if flat else None)
        scenes.append(generate_scene(cam, road, h_samples, raw_file=f"synthetic/{seed}/{k}.jpg"))
    return scenes


def synth_embeddings(scene: Scene, dim: int = 4, center_separation: float = 4.0,
                     within_cluster_radius: float = 0.4, seed: int = 0,
                     pixels_per_point: int = 1):
    """One embedding cluster per annotated lane, centers ``center_separation`` apart.

    Members are uniform in a ball of ``within_cluster_radius`` around their
    center.  Pixel positions are the annotated lane points (top-origin rows).
    """
    from .embed import EmbeddingSet, place_centers, sample_ball

    if dim < 1 or center_separation < 0 or within_cluster_radius < 0:
        raise ValueError("dim >= 1 and non-negative radii required")
    rng = np.random.default_rng(seed)
    pix, labels = [], []
    for i in range(len(scene.annotation.lanes)):
        pts = scene.lane_points(i, plane=False)
        if pixels_per_point > 1:
            pts = np.repeat(pts, pixels_per_point, axis=0)
        pix.append(pts)
        labels.append(np.full(pts.shape[0], i + 1))
    pix = np.concatenate(pix) if pix else np.zeros((0, 2))
    labels = np.concatenate(labels) if labels else np.zeros(0, dtype=int)
    C = len(scene.annotation.lanes)
    centers = place_centers(C, dim, center_separation, rng)
    emb = centers[labels - 1] + sample_ball(rng, labels.size, dim, within_cluster_radius)
    return EmbeddingSet(emb, labels.astype(int), pix)


def calibration_scene(camera: CameraModel | None = None, curvature: float = 6e-4,
                      h_samples=None) -> Scene:
    """Flat road with gently curving lanes, used to calibrate the fixed transform.

    Straight lanes would leave the horizon undetermined (they are lines under
    any transform), hence the curvature.
    """
    cam = camera or CameraModel()
    road = RoadModel(curvature=((0.0, curvature),), slope=0.0)
    return generate_scene(cam, road, h_samples, raw_file="synthetic/calibration.jpg")


def lane_mask(scene: Scene) -> np.ndarray:
    """uint8 mask, lane id at each annotated point (0 background)."""
    cam = scene.camera
    mask = np.zeros((cam.image_height, cam.width), dtype=np.uint8)
    for i in range(len(scene.annotation.lanes)):
        pts = scene.lane_points(i, plane=False)
        cols = np.clip(np.round(pts[:, 0]).astype(int), 0, cam.width - 1)
        rows = np.clip(np.round(pts[:, 1]).astype(int), 0, cam.image_height - 1)
        mask[rows, cols] = i + 1
    return mask


def write_pgm(mask: np.ndarray, path):
    """Binary portable graymap (P5)."""
    h, w = mask.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(mask, dtype=np.uint8).tobytes())
