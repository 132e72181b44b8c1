"""Lane annotation IO, benchmark-style lane metrics and the fit-error benchmark.

Annotation files are line-delimited JSON, one record per image::

    {"raw_file": "...", "h_samples": [160, 170, ...], "lanes": [[-2, 632, ...], ...]}

``-2`` marks rows where a lane is absent.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MisalignedRows, MissingImage, ParseError, SchemaError

log = logging.getLogger(__name__)

ABSENT = -2
REQUIRED_KEYS = ("raw_file", "h_samples", "lanes")
DEFAULT_THRESHOLD_PX = 20.0
DEFAULT_LANE_MATCH = 0.85


@dataclass
class SceneAnnotation:
    raw_file: str
    h_samples: list
    lanes: list

    def __post_init__(self):
        hs = list(self.h_samples)
        if any(b <= a for a, b in zip(hs, hs[1:])):
            raise ValueError(f"{self.raw_file}: h_samples must be strictly increasing")
        for lane in self.lanes:
            if len(lane) != len(hs):
                raise MisalignedRows(
                    f"{self.raw_file}: lane has {len(lane)} entries for {len(hs)} rows")

    def present_counts(self):
        return [sum(1 for v in lane if v != ABSENT) for lane in self.lanes]

    def to_dict(self):
        return {"raw_file": self.raw_file, "h_samples": list(self.h_samples),
                "lanes": [list(lane) for lane in self.lanes]}


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps_annotation(rec: SceneAnnotation) -> str:
    return json.dumps(rec.to_dict(), default=_json_default, separators=(", ", ": "))


def write_annotations(records, path):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(dumps_annotation(rec))
            fh.write("\n")


def parse_annotation_line(line: str, lineno=None) -> SceneAnnotation:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc), lineno) from None
    if not isinstance(obj, dict):
        raise ParseError("record is not an object", lineno)
    missing = [k for k in REQUIRED_KEYS if k not in obj]
    if missing:
        raise SchemaError(missing, lineno)
    try:
        return SceneAnnotation(str(obj["raw_file"]), list(obj["h_samples"]),
                               [list(lane) for lane in obj["lanes"]])
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), lineno) from None


def read_annotations(path):
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            records.append(parse_annotation_line(line, lineno))
    return records


def point_accuracy(pred_lane, gt_lane, threshold_px: float = DEFAULT_THRESHOLD_PX):
    """``(C, S)``: correct predicted points and present ground-truth points."""
    pred = np.asarray(pred_lane, dtype=float)
    gt = np.asarray(gt_lane, dtype=float)
    if pred.shape != gt.shape:
        raise MisalignedRows(f"prediction has {pred.size} rows, ground truth {gt.size}")
    present = gt != ABSENT
    hit = present & (pred != ABSENT) & (np.abs(pred - gt) < threshold_px)
    return int(hit.sum()), int(present.sum())


def _best_assignment(score):
    """One-to-one matching maximizing total score (brute force on small matrices)."""
    n_p, n_g = score.shape
    if n_p == 0 or n_g == 0:
        return []
    if max(n_p, n_g) > 8:
        from scipy.optimize import linear_sum_assignment
        r, c = linear_sum_assignment(-score)
        return list(zip(r.tolist(), c.tolist()))
    best, best_val = [], -1.0
    if n_p <= n_g:
        for perm in itertools.permutations(range(n_g), n_p):
            val = sum(score[i, j] for i, j in enumerate(perm))
            if val > best_val + 1e-15:
                best_val, best = val, list(enumerate(perm))
    else:
        for perm in itertools.permutations(range(n_p), n_g):
            val = sum(score[i, j] for j, i in enumerate(perm))
            if val > best_val + 1e-15:
                best_val, best = val, [(i, j) for j, i in enumerate(perm)]
    return best


@dataclass
class ImageMetrics:
    raw_file: str
    C: int
    S: int
    n_pred: int
    n_gt: int
    wrong_pred: int
    missed_gt: int


@dataclass
class MetricsReport:
    acc: float
    fp: float
    fn: float
    threshold_px: float
    lane_match: float
    per_image: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def as_text(self, config=None):
        lines = [f"acc = {self.acc:.6f}", f"fp = {self.fp:.6f}", f"fn = {self.fn:.6f}",
                 f"threshold_px = {self.threshold_px:g}",
                 f"lane_match_fraction = {self.lane_match:g}",
                 "thresholds_source = conventional defaults (configurable)",
                 f"images = {len(self.per_image)}"]
        for note in self.notes:
            lines.append(f"note = {note}")
        for k, v in (config or {}).items():
            lines.append(f"config.{k} = {v}")
        return "\n".join(lines) + "\n"


def image_metrics(pred: SceneAnnotation | None, gt: SceneAnnotation,
                  threshold_px=DEFAULT_THRESHOLD_PX, lane_match=DEFAULT_LANE_MATCH):
    gt_lanes = [lane for lane in gt.lanes if any(v != ABSENT for v in lane)]
    pred_lanes = [] if pred is None else [l for l in pred.lanes if any(v != ABSENT for v in l)]
    if pred is not None and list(pred.h_samples) != list(gt.h_samples):
        raise MisalignedRows(f"{gt.raw_file}: h_samples differ between prediction and gt")
    n_p, n_g = len(pred_lanes), len(gt_lanes)
    C = np.zeros((n_p, n_g), dtype=int)
    S = np.zeros((n_p, n_g), dtype=int)
    for i, p in enumerate(pred_lanes):
        for j, g in enumerate(gt_lanes):
            C[i, j], S[i, j] = point_accuracy(p, g, threshold_px)
    ratio = np.where(S > 0, C / np.maximum(S, 1), 0.0)
    pairs = _best_assignment(ratio)
    correct = [(i, j) for i, j in pairs if ratio[i, j] >= lane_match]
    S_im = sum(point_accuracy(g, g, threshold_px)[1] for g in gt_lanes)
    C_im = sum(int(C[i, j]) for i, j in pairs)
    return ImageMetrics(gt.raw_file, C_im, S_im, n_p, n_g,
                        wrong_pred=n_p - len(correct), missed_gt=n_g - len(correct))


def lane_metrics(pred_set, gt_set, threshold_px=DEFAULT_THRESHOLD_PX,
                 lane_match_fraction=DEFAULT_LANE_MATCH, strict=False) -> MetricsReport:
    """Accuracy, false-positive and false-negative rates over a dataset.

    ``acc`` is the mean over images of ``C_im / S_im``; ``fp`` is wrong or
    unmatched predicted lanes over predicted lanes; ``fn`` is missed
    ground-truth lanes over ground-truth lanes.  Lanes are paired per image by
    an optimal one-to-one assignment on point accuracy.
    """
    preds = {p.raw_file: p for p in pred_set}
    per_image, notes = [], []
    for gt in gt_set:
        pred = preds.get(gt.raw_file)
        if pred is None:
            if strict:
                raise MissingImage(f"no prediction for {gt.raw_file}")
            notes.append(f"missing prediction for {gt.raw_file}; all its lanes counted as missed")
        per_image.append(image_metrics(pred, gt, threshold_px, lane_match_fraction))

    ratios = [m.C / m.S for m in per_image if m.S > 0]
    skipped = sum(1 for m in per_image if m.S == 0)
    if skipped:
        notes.append(f"{skipped} image(s) without ground-truth points excluded from acc")
        log.warning("%d image(s) without ground-truth points excluded from acc", skipped)
    acc = float(np.mean(ratios)) if ratios else 0.0
    n_pred = sum(m.n_pred for m in per_image)
    n_gt = sum(m.n_gt for m in per_image)
    if n_pred:
        fp = sum(m.wrong_pred for m in per_image) / n_pred
    else:
        fp = 0.0
        notes.append("no predicted lanes: FP undefined, reported as 0")
        log.warning("no predicted lanes: FP undefined, reported as 0")
    fn = sum(m.missed_gt for m in per_image) / n_gt if n_gt else 0.0
    return MetricsReport(acc, fp, fn, threshold_px, lane_match_fraction, per_image, notes)


# -- fit-error benchmark -------------------------------------------------------

MODES = ("none", "fixed", "conditional")


@dataclass
class FitBenchCell:
    mode: str
    degree: int
    sse: float = 0.0
    n_points: int = 0
    n_miss: int = 0
    n_lanes: int = 0

    @property
    def mse(self) -> float:
        return self.sse / self.n_points if self.n_points else math.nan

    @property
    def miss_per_lane(self) -> float:
        return self.n_miss / self.n_lanes if self.n_lanes else 0.0


@dataclass
class FitBenchReport:
    cells: dict = field(default_factory=dict)      # (mode, degree) -> FitBenchCell
    config: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def cell(self, mode, degree) -> FitBenchCell:
        return self.cells[(mode, degree)]

    def mse(self, mode, degree) -> float:
        return self.cells[(mode, degree)].mse

    def miss_per_lane(self, mode, degree) -> float:
        return self.cells[(mode, degree)].miss_per_lane

    def to_csv(self) -> str:
        lines = ["mode,degree,mse_px2,miss_per_lane"]
        for (mode, deg), c in self.cells.items():
            lines.append(f"{mode},{deg},{c.mse:.6f},{c.miss_per_lane:.6f}")
        return "\n".join(lines) + "\n"

    def as_text(self) -> str:
        lines = ["mse_space = image pixels after reprojection",
                 "lane_pooling = all points of all lanes per scene, one polynomial per lane"]
        for (mode, deg), c in self.cells.items():
            lines.append(f"{mode}.deg{deg}.mse_px2 = {c.mse:.6f}")
            lines.append(f"{mode}.deg{deg}.miss_per_lane = {c.miss_per_lane:.6f}")
            lines.append(f"{mode}.deg{deg}.points = {c.n_points}")
        for k, v in self.config.items():
            lines.append(f"config.{k} = {v}")
        for f in self.failures:
            lines.append(f"failure = {f}")
        return "\n".join(lines) + "\n"


def _score_lanes(H, lanes, degree, cell):
    """Fit every lane under ``H`` and accumulate image-space errors at its gt rows."""
    from .curvefit import fit_lane

    for pts in lanes:
        pred = fit_lane(H, pts, degree, pts[:, 1])
        ok = ~pred.miss
        err = pred.x[ok] - pts[ok, 0]
        cell.sse += float(err @ err)
        cell.n_points += int(ok.sum())
        cell.n_miss += int(pred.miss.sum())
        cell.n_lanes += 1


def _bench_scene(scene, modes, degrees, fixed_H, hconfig, min_points):
    from .geometry import Homography
    from .hoptim import HOptimConfig, optimize_homography

    cells = {(m, d): FitBenchCell(m, d) for m in modes for d in degrees}
    lanes = scene.all_lane_points(plane=True, min_points=min_points)
    if not lanes:
        return cells
    base = hconfig or HOptimConfig()
    for deg in degrees:
        for mode in modes:
            if mode == "none":
                H = Homography.identity()
            elif mode == "fixed":
                H = fixed_H
            else:
                cfg = HOptimConfig(**{**base.__dict__, "degree": deg, "init": "identity"})
                H = optimize_homography(lanes, cfg, image_width=scene.camera.width).H
            _score_lanes(H, lanes, deg, cells[(mode, deg)])
    return cells


def fit_error_benchmark(scenes, modes=MODES, degrees=(2, 3), fixed_H=None,
                        calibration_scene=None, hconfig=None, min_points=6, threads=1):
    """Image-space fit error of every ground-truth lane under each transform mode.

    ``none`` fits in the image plane, ``fixed`` uses one calibrated transform
    for every scene, ``conditional`` optimizes a transform per scene and
    degree.  Points that cannot be transformed are left out of the MSE and
    counted as misses.  Per-scene results are reduced in scene order, so the
    report does not depend on ``threads``.
    """
    from .hoptim import fixed_homography_from_calibration

    report = FitBenchReport()
    report.config = {"modes": ",".join(modes), "degrees": ",".join(map(str, degrees)),
                     "scenes": len(scenes), "min_points": min_points}
    if "fixed" in modes and fixed_H is None:
        if calibration_scene is None:
            raise ValueError("fixed mode needs fixed_H or a calibration scene")
        fixed_H = fixed_homography_from_calibration(calibration_scene)
    if fixed_H is not None:
        report.config["fixed_H"] = " ".join(f"{v:.9g}" for v in fixed_H.params)
    for mode in modes:
        for deg in degrees:
            report.cells[(mode, deg)] = FitBenchCell(mode, deg)

    def run(scene):
        return _bench_scene(scene, modes, degrees, fixed_H, hconfig, min_points)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(run, scenes))
    else:
        partials = [run(sc) for sc in scenes]
    for part in partials:
        for key, c in part.items():
            tot = report.cells[key]
            tot.sse += c.sse
            tot.n_points += c.n_points
            tot.n_miss += c.n_miss
            tot.n_lanes += c.n_lanes
    return report
