"""``lanefit`` command line: synth, cluster, fit, optimize-h, eval, bench-table3, gradcheck.

Option precedence is command-line flag, then ``--config`` file (flat
``key = value`` lines), then built-in defaults.  Every report embeds the
effective configuration.
"""
from __future__ import annotations

import argparse
import logging
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import embed, evalkit, scenegen
from .cluster import cluster_instances
from .curvefit import fit_lane
from .embed import ClusterMargins, EmbeddingSet
from .errors import LaneFitError
from .evalkit import ABSENT, SceneAnnotation
from .geometry import Homography, rows_to_plane
from .hoptim import HOptimConfig, fixed_homography_from_calibration, optimize_homography

log = logging.getLogger("lanefit")

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "out": None,
    "degree": 3,
    "mode": "conditional",
    "delta_v": embed.DELTA_V,
    "delta_d": embed.DELTA_D,
    "dim": embed.EMBED_DIM,
    "threshold_px": evalkit.DEFAULT_THRESHOLD_PX,
    "lane_match": evalkit.DEFAULT_LANE_MATCH,
    # synth / bench
    "scenes": 10,
    "slope": 0.05,
    "curvature": 1e-3,
    "flat_fraction": 0.0,
    "separation": 4.0,
    "radius": 0.4,
    "emb_format": "csv",
    # camera
    "focal": 500.0,
    "width": 512,
    "height": 256,
    "camera_height": 1.5,
    "pitch": 0.03,
    # misc
    "instances": 100,
    "tol": 1e-4,
    "repeats": 100,
    "warmup": 10,
}


def load_config(path):
    """Flat ``key = value`` text; ``#`` starts a comment; dashes equal underscores."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = val
    return out


def _coerce(key, raw):
    ref = DEFAULTS.get(key)
    if ref is None or isinstance(raw, type(ref)):
        return raw
    if isinstance(ref, bool):
        return str(raw).lower() in ("1", "true", "yes", "on")
    if isinstance(ref, int):
        return int(raw)
    if isinstance(ref, float):
        return float(raw)
    return raw


class Settings(dict):
    """Effective configuration with attribute access."""

    def __getattr__(self, key):
        try:
            return self[key]
        except KeyError:
            raise AttributeError(key) from None


def resolve(args) -> Settings:
    file_cfg = load_config(args.config) if getattr(args, "config", None) else {}
    eff = Settings()
    for key in DEFAULTS:
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            eff[key] = cli_val
        elif key in file_cfg:
            eff[key] = _coerce(key, file_cfg[key])
        else:
            eff[key] = DEFAULTS[key]
    for key, val in vars(args).items():
        if key not in eff and key not in ("func", "config"):
            eff[key] = val
    eff["command"] = args.command
    return eff


def config_lines(cfg: Settings):
    return [f"config.{k} = {cfg[k]}" for k in sorted(cfg)]


def camera_from(cfg) -> scenegen.CameraModel:
    return scenegen.CameraModel(focal=cfg.focal, cx=cfg.width / 2.0, cy=cfg.height / 2.0,
                                height=cfg.camera_height, pitch=cfg.pitch,
                                width=int(cfg.width), image_height=int(cfg.height))


def machine_descriptor():
    return f"{platform.machine()} {platform.processor() or 'cpu'} python{platform.python_version()}"


def hot_median(fn, repeats=100, warmup=10):
    """Median wall time (s) of ``fn()`` over ``repeats`` runs after ``warmup`` runs."""
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _write_text(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


# -- synth ---------------------------------------------------------------------------

def cmd_synth(cfg: Settings) -> int:
    cam = camera_from(cfg)
    scenes = scenegen.generate_corpus(cfg.scenes, seed=cfg.seed, max_slope=cfg.slope,
                                      max_curvature=cfg.curvature, camera=cam,
                                      flat_fraction=cfg.flat_fraction)
    out = cfg.out or "synth.json"
    evalkit.write_annotations([s.annotation for s in scenes], out)
    if cfg.get("embeddings_dir"):
        os.makedirs(cfg.embeddings_dir, exist_ok=True)
        ext = "bin" if cfg.emb_format == "bin" else "csv"
        for k, sc in enumerate(scenes):
            es = scenegen.synth_embeddings(sc, cfg.dim, cfg.separation, cfg.radius,
                                           seed=cfg.seed * 100003 + k)
            embed.write_embeddings(es, os.path.join(cfg.embeddings_dir, f"scene_{k:05d}.{ext}"))
    if cfg.get("mask_dir"):
        os.makedirs(cfg.mask_dir, exist_ok=True)
        for k, sc in enumerate(scenes):
            scenegen.write_pgm(scenegen.lane_mask(sc), os.path.join(cfg.mask_dir, f"scene_{k:05d}.pgm"))
    print(f"scenes = {len(scenes)}")
    print(f"annotations = {out}")
    return 0


# -- cluster -------------------------------------------------------------------------

def cmd_cluster(cfg: Settings) -> int:
    es = embed.read_embeddings(cfg.input)
    margins = ClusterMargins(cfg.delta_v, cfg.delta_d)
    if es.n_pixels == 0:
        log.warning("empty embedding set; nothing to cluster")
        res = cluster_instances(es, margins)
    else:
        res = cluster_instances(es, margins, min_size=cfg.min_size)
    if cfg.out:
        embed.write_embeddings(EmbeddingSet(es.embeddings, None, es.pixels), cfg.out, res.labels)
    lines = [f"K = {res.K}", f"sizes = {' '.join(map(str, res.sizes().tolist()))}",
             f"pixels = {es.n_pixels}", f"margins_separable = {margins.separable}"]
    if es.labels is not None and es.n_pixels:
        from .cluster import same_partition
        lines.append(f"matches_input_labels = {same_partition(res.labels, es.labels)}")
    if cfg.timing and es.n_pixels:
        t = hot_median(lambda: cluster_instances(es, margins, min_size=cfg.min_size),
                       cfg.repeats, cfg.warmup)
        lines += [f"cluster_ms_median = {t * 1e3:.3f}", f"machine = {machine_descriptor()}"]
    _write_text(cfg.report, "\n".join(lines + config_lines(cfg)) + "\n")
    return 0


# -- fit ---------------------------------------------------------------------------

def _mode_homography(cfg, lanes_plane, cam, fixed_cache={}):
    if cfg.mode == "none":
        return Homography.identity()
    if cfg.mode == "fixed":
        key = (cam, 2)
        if key not in fixed_cache:
            fixed_cache[key] = fixed_homography_from_calibration(scenegen.calibration_scene(cam))
        return fixed_cache[key]
    hc = HOptimConfig(degree=cfg.degree, seed=cfg.seed)
    return optimize_homography(lanes_plane, hc, image_width=cam.width).H


def predict_image(lanes_px, h_samples, cfg, cam, raw_file="image"):
    """Fit each lane's pixels (image x, row) and predict at ``h_samples``.

    Predictions are emitted only between the lane's first and last pixel row;
    other rows and fitting misses get the absent sentinel.
    """
    lanes_plane = [np.column_stack([p[:, 0], rows_to_plane(p[:, 1], cam.image_height)])
                   for p in lanes_px]
    usable = [p for p in lanes_plane if np.unique(p[:, 1]).size > cfg.degree]
    H = _mode_homography(cfg, usable, cam) if usable else Homography.identity()
    hs = np.asarray(h_samples, dtype=float)
    out, misses = [], 0
    for p_img, p in zip(lanes_px, lanes_plane):
        if np.unique(p[:, 1]).size <= cfg.degree:
            continue
        pred = fit_lane(H, p, cfg.degree, rows_to_plane(hs, cam.image_height))
        lo, hi = p_img[:, 1].min(), p_img[:, 1].max()
        span = (hs >= lo) & (hs <= hi)
        misses += int(np.count_nonzero(pred.miss & span)) + pred.n_excluded
        xs = [float(x) if (s and not m) else ABSENT for x, s, m in zip(pred.x, span, pred.miss)]
        out.append(xs)
    return SceneAnnotation(raw_file, list(h_samples), out), misses, H


def _lanes_from_embeddings(es: EmbeddingSet):
    if es.labels is None:
        raise LaneFitError("fit input needs a label column (run `cluster` first)")
    if es.pixels is None:
        raise LaneFitError("fit input needs pixel positions")
    return [es.pixels[es.labels == lab] for lab in np.unique(es.labels) if lab > 0]


def _lanes_from_annotation(ann: SceneAnnotation):
    hs = np.asarray(ann.h_samples, dtype=float)
    lanes = []
    for lane in ann.lanes:
        xs = np.asarray(lane, dtype=float)
        ok = xs != ABSENT
        lanes.append(np.column_stack([xs[ok], hs[ok]]))
    return lanes


def cmd_fit(cfg: Settings) -> int:
    cam = camera_from(cfg)
    jobs = []
    if cfg.annotations:
        for ann in evalkit.read_annotations(cfg.annotations):
            jobs.append((ann.raw_file, _lanes_from_annotation(ann), ann.h_samples))
    if cfg.input:
        es = embed.read_embeddings(cfg.input)
        hs = scenegen.default_h_samples(cam)
        jobs.append((cfg.raw_file or os.path.basename(cfg.input), _lanes_from_embeddings(es), hs))
    if not jobs:
        raise LaneFitError("fit needs --annotations or --input")

    def run(job):
        return predict_image(job[1], job[2], cfg, cam, job[0])

    with ThreadPoolExecutor(max_workers=max(1, cfg.threads)) as pool:
        results = list(pool.map(run, jobs))
    preds = [r[0] for r in results]
    evalkit.write_annotations(preds, cfg.out or "predictions.json")
    n_lanes = sum(len(p.lanes) for p in preds)
    misses = sum(r[1] for r in results)
    lines = [f"images = {len(preds)}", f"lanes = {n_lanes}", f"misses = {misses}",
             f"miss_per_lane = {misses / n_lanes if n_lanes else 0.0:.6f}"]
    if cfg.timing:
        t = np.median([hot_median(lambda j=j: run(j), cfg.repeats, cfg.warmup) for j in jobs[:5]])
        lines += [f"fit_ms_median_per_image = {t * 1e3:.3f}", f"machine = {machine_descriptor()}"]
    _write_text(cfg.report, "\n".join(lines + config_lines(cfg)) + "\n")
    return 0


# -- optimize-h ------------------------------------------------------------------------

def cmd_optimize_h(cfg: Settings) -> int:
    cam = camera_from(cfg)
    anns = evalkit.read_annotations(cfg.annotations)
    init_H = None
    if cfg.init == "fixed":
        init_H = fixed_homography_from_calibration(scenegen.calibration_scene(cam))

    def run(ann):
        lanes = [np.column_stack([p[:, 0], rows_to_plane(p[:, 1], cam.image_height)])
                 for p in _lanes_from_annotation(ann)]
        lanes = [p for p in lanes if np.unique(p[:, 1]).size > cfg.degree]
        hc = HOptimConfig(degree=cfg.degree, init=cfg.init, init_H=init_H, seed=cfg.seed)
        try:
            return ann.raw_file, optimize_homography(lanes, hc, image_width=cam.width), None
        except LaneFitError as exc:
            return ann.raw_file, None, str(exc)

    with ThreadPoolExecutor(max_workers=max(1, cfg.threads)) as pool:
        results = list(pool.map(run, anns))
    rows = ["raw_file,a,b,c,d,e,f,loss_px2,iterations"]
    failed = 0
    for name, res, err in results:
        if res is None:
            failed += 1
            log.error("%s: %s", name, err)
            continue
        vals = ",".join(f"{v:.12g}" for v in res.H.params)
        rows.append(f"{name},{vals},{res.loss:.9g},{res.iterations}")
    _write_text(cfg.out, "\n".join(rows) + "\n")
    print(f"images = {len(anns)}\nfailed = {failed}")
    return 1 if failed else 0


# -- eval ----------------------------------------------------------------------------

def cmd_eval(cfg: Settings) -> int:
    pred = evalkit.read_annotations(cfg.pred)
    gt = evalkit.read_annotations(cfg.gt)
    rep = evalkit.lane_metrics(pred, gt, cfg.threshold_px, cfg.lane_match, strict=cfg.strict)
    text = rep.as_text() + "\n".join(config_lines(cfg)) + "\n"
    _write_text(cfg.out, text)
    return 0


# -- bench-table3 ----------------------------------------------------------------------

def table3_checks(rep):
    """Ordering and miss-pattern assertions; returns ``[(name, passed)]``."""
    m = rep.mse
    checks = [
        ("mse3 conditional < fixed", m("conditional", 3) < m("fixed", 3)),
        ("mse3 fixed < none", m("fixed", 3) < m("none", 3)),
    ]
    for mode in ("none", "fixed", "conditional"):
        checks.append((f"mse3 <= mse2 ({mode})", m(mode, 3) <= m(mode, 2)))
    for deg in (2, 3):
        checks.append((f"miss/lane none == 0 (deg {deg})", rep.miss_per_lane("none", deg) == 0))
        checks.append((f"miss/lane conditional == 0 (deg {deg})",
                       rep.miss_per_lane("conditional", deg) == 0))
        checks.append((f"miss/lane fixed > 0 (deg {deg})", rep.miss_per_lane("fixed", deg) > 0))
    return checks


def cmd_bench_table3(cfg: Settings) -> int:
    cam = camera_from(cfg)
    t0 = time.perf_counter()
    scenes = scenegen.generate_corpus(cfg.scenes, seed=cfg.seed, max_slope=cfg.slope,
                                      max_curvature=cfg.curvature, camera=cam,
                                      flat_fraction=cfg.flat_fraction)
    fixed_H = fixed_homography_from_calibration(scenegen.calibration_scene(cam))
    rep = evalkit.fit_error_benchmark(scenes, fixed_H=fixed_H, threads=max(1, cfg.threads))
    elapsed = time.perf_counter() - t0
    checks = table3_checks(rep)
    out_dir = cfg.out or "."
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "table3.csv"), "w") as fh:
        fh.write(rep.to_csv())
    lines = [rep.as_text().rstrip("\n")]
    lines += [f"check.{name.replace(' ', '_')} = {'pass' if ok else 'FAIL'}" for name, ok in checks]
    lines.append(f"runtime_s = {elapsed:.2f}")
    # wall time depends on the machine, so it stays out of the deterministic report
    with open(os.path.join(out_dir, "table3_report.txt"), "w") as fh:
        fh.write("\n".join(lines[:-1] + config_lines(cfg)) + "\n")
    sys.stdout.write(rep.to_csv())
    print("\n".join(lines[1:]))
    return 0 if (not cfg.check or all(ok for _, ok in checks)) else 1


# -- gradcheck -------------------------------------------------------------------------

def cmd_gradcheck(cfg: Settings) -> int:
    from .gradcheck import check_embedding_gradients, check_reprojection_gradients
    from .hoptim import PARAM_NAMES

    margins = ClusterMargins(cfg.delta_v, cfg.delta_d)
    res = [check_embedding_gradients(cfg.instances, cfg.seed, cfg.tol, margins),
           check_reprojection_gradients(cfg.instances, cfg.seed, cfg.tol)]
    lines = []
    for r in res:
        idx = PARAM_NAMES[r.worst_index] if r.name == "reprojection_loss" else r.worst_index
        lines.append(f"{r.name}: {'PASS' if r.passed else 'FAIL'} instances={r.instances} "
                     f"worst_rel_err={r.worst_rel_err:.3e} worst_instance={r.worst_instance} "
                     f"worst_param={idx} tol={r.tolerance:g}")
    _write_text(cfg.out, "\n".join(lines + config_lines(cfg)) + "\n")
    return 0 if all(r.passed for r in res) else 1


# -- parser ------------------------------------------------------------------------------

def _common(p):
    g = p.add_argument_group("common")
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int)
    g.add_argument("--config")
    g.add_argument("--out")
    g.add_argument("--degree", type=int, choices=(2, 3))
    g.add_argument("--mode", choices=("none", "fixed", "conditional"))
    g.add_argument("--delta-v", dest="delta_v", type=float)
    g.add_argument("--delta-d", dest="delta_d", type=float)
    g.add_argument("--dim", type=int)
    g.add_argument("--threshold-px", dest="threshold_px", type=float)
    g.add_argument("--focal", type=float)
    g.add_argument("--width", type=int)
    g.add_argument("--height", type=int)
    g.add_argument("--camera-height", dest="camera_height", type=float)
    g.add_argument("--pitch", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="lanefit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scenes")
    _common(p)
    p.add_argument("--scenes", type=int)
    p.add_argument("--slope", type=float, help="max |slope| (rad) after the hinge")
    p.add_argument("--curvature", type=float, help="max |quadratic lateral coefficient| (1/m)")
    p.add_argument("--flat-fraction", dest="flat_fraction", type=float)
    p.add_argument("--embeddings-dir", dest="embeddings_dir")
    p.add_argument("--emb-format", dest="emb_format", choices=("csv", "bin"))
    p.add_argument("--separation", type=float)
    p.add_argument("--radius", type=float)
    p.add_argument("--mask-dir", dest="mask_dir")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cluster", help="cluster an embedding file into lane instances")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--report")
    p.add_argument("--min-size", dest="min_size", type=int, default=1)
    p.add_argument("--timing", action="store_true")
    p.add_argument("--repeats", type=int)
    p.add_argument("--warmup", type=int)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("fit", help="fit lanes and write predictions")
    _common(p)
    p.add_argument("--input", help="labeled embedding file (one image)")
    p.add_argument("--annotations", help="annotation file whose lanes are fitted")
    p.add_argument("--raw-file", dest="raw_file")
    p.add_argument("--report")
    p.add_argument("--timing", action="store_true")
    p.add_argument("--repeats", type=int)
    p.add_argument("--warmup", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("optimize-h", help="optimize a transform per annotated image")
    _common(p)
    p.add_argument("--annotations", required=True)
    p.add_argument("--init", choices=("identity", "fixed"), default="identity")
    p.set_defaults(func=cmd_optimize_h)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    _common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--lane-match", dest="lane_match", type=float)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-table3", help="fit-error benchmark over transform modes")
    _common(p)
    p.add_argument("--scenes", type=int)
    p.add_argument("--slope", type=float)
    p.add_argument("--curvature", type=float)
    p.add_argument("--flat-fraction", dest="flat_fraction", type=float)
    p.add_argument("--no-check", dest="check", action="store_false")
    p.set_defaults(func=cmd_bench_table3, check=True)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    _common(p)
    p.add_argument("--instances", type=int)
    p.add_argument("--tol", type=float)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = resolve(args)
    try:
        return args.func(cfg)
    except (LaneFitError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
