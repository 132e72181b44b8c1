import numpy as np

from lanefit import scenegen
from lanefit.cli import load_config, main
from lanefit.embed import read_embeddings, write_embeddings
from lanefit.evalkit import SceneAnnotation, read_annotations, write_annotations


def run(*argv):
    return main([str(a) for a in argv])


def test_synth_count_and_determinism(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run("synth", "--scenes", 100, "--slope", 0.05, "--seed", 7, "--out", a) == 0
    assert run("synth", "--scenes", 100, "--slope", 0.05, "--seed", 7, "--out", b) == 0
    assert len(read_annotations(a)) == 100
    assert a.read_bytes() == b.read_bytes()


def test_synth_flat_scenes_linear(tmp_path):
    out = tmp_path / "f.json"
    run("synth", "--scenes", 5, "--slope", 0, "--curvature", 0, "--seed", 1, "--out", out)
    for rec in read_annotations(out):
        hs = np.asarray(rec.h_samples, float)
        for lane in rec.lanes:
            x = np.asarray(lane, float)
            ok = x != -2
            if ok.sum() < 3:
                continue
            # zero curvature keeps a linear term in Z, which images to a straight line too
            k = np.polyfit(hs[ok], x[ok], 1)
            assert np.max(np.abs(np.polyval(k, hs[ok]) - x[ok])) < 1e-6


def test_synth_embeddings_and_cluster(tmp_path, capsys):
    emb = tmp_path / "emb"
    run("synth", "--scenes", 2, "--seed", 3, "--out", tmp_path / "g.json",
        "--embeddings-dir", emb, "--emb-format", "bin")
    src = emb / "scene_00000.bin"
    lab = tmp_path / "lab.csv"
    rep = tmp_path / "rep.txt"
    assert run("cluster", "--input", src, "--out", lab, "--report", rep) == 0
    text = rep.read_text()
    assert "K = 4" in text and "matches_input_labels = True" in text
    assert "config.delta_v = 0.5" in text
    back = read_embeddings(lab)
    assert back.labels is not None and set(back.labels.tolist()) == {1, 2, 3, 4}


def test_cluster_empty(tmp_path, capsys):
    p = tmp_path / "e.csv"
    p.write_text("x,y,e1,e2,e3,e4\n")
    assert run("cluster", "--input", p) == 0
    assert "K = 0" in capsys.readouterr().out


def test_cluster_bad_input(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("a,b\n")
    assert run("cluster", "--input", p) == 2


def test_fit_identity_polynomial_fixture(tmp_path):
    hs = list(range(100, 256, 4))
    y = np.asarray(hs, float)
    lanes = [(60 + 120 * k + 0.1 * (y - 100) + 2e-3 * (y - 100) ** 2).tolist() for k in range(3)]
    gt = tmp_path / "gt.json"
    write_annotations([SceneAnnotation("img", hs, lanes)], gt)
    out = tmp_path / "p.json"
    assert run("fit", "--annotations", gt, "--mode", "none", "--degree", 2, "--out", out,
               "--report", tmp_path / "r.txt") == 0
    (pred,) = read_annotations(out)
    assert np.allclose(pred.lanes, lanes, atol=1e-6)


def test_fit_conditional_slope_no_misses(tmp_path):
    cam = scenegen.CameraModel()
    scenes = [scenegen.generate_scene(cam, scenegen.RoadModel(curvature=((0, 4e-4),), z0=25,
                                                              slope=s), raw_file=f"s{s}")
              for s in (0.03, 0.05)]
    gt = tmp_path / "gt.json"
    write_annotations([s.annotation for s in scenes], gt)
    rep = tmp_path / "r.txt"
    assert run("fit", "--annotations", gt, "--mode", "conditional", "--out", tmp_path / "c.json",
               "--report", rep) == 0
    assert "misses = 0\n" in rep.read_text()
    run("fit", "--annotations", gt, "--mode", "fixed", "--out", tmp_path / "f.json", "--report", rep)
    assert "misses = 0\n" not in rep.read_text()


def test_fit_from_labeled_embeddings(tmp_path):
    sc = scenegen.generate_scene(scenegen.CameraModel(), scenegen.RoadModel(), raw_file="x.jpg")
    es = scenegen.synth_embeddings(sc, 4, 4.0, 0.3, seed=0)
    p = tmp_path / "l.csv"
    write_embeddings(es, p)
    out = tmp_path / "p.json"
    assert run("fit", "--input", p, "--raw-file", "x.jpg", "--mode", "none", "--out", out,
               "--report", tmp_path / "r.txt") == 0
    gt = tmp_path / "gt.json"
    write_annotations([sc.annotation], gt)
    res = tmp_path / "m.txt"
    run("eval", "--pred", out, "--gt", gt, "--out", res)
    assert "acc = 1.000000" in res.read_text()


def test_fit_needs_input():
    assert run("fit", "--mode", "none") == 2


def test_eval_self_and_threshold(tmp_path):
    gt = tmp_path / "gt.json"
    run("synth", "--scenes", 3, "--seed", 2, "--out", gt)
    out = tmp_path / "m.txt"
    assert run("eval", "--pred", gt, "--gt", gt, "--out", out) == 0
    assert "acc = 1.000000" in out.read_text()
    recs = read_annotations(gt)
    shifted = [SceneAnnotation(r.raw_file, r.h_samples,
                               [[v + 7 if v != -2 else v for v in l] for l in r.lanes]) for r in recs]
    pr = tmp_path / "p.json"
    write_annotations(shifted, pr)
    accs = []
    for thr in (5, 8, 20):
        run("eval", "--pred", pr, "--gt", gt, "--threshold-px", thr, "--out", out)
        accs.append(float(out.read_text().split("\n")[0].split("=")[1]))
    assert accs == sorted(accs) and accs[0] == 0.0 and accs[-1] == 1.0


def test_eval_hand_fixture(tmp_path):
    hs = [160, 170, 180, 190]
    gt = SceneAnnotation("a", hs, [[10, 20, 30, 40], [300, 310, 320, 330]])
    pr = SceneAnnotation("a", hs, [[10, 20, 30, 40], [600, 600, 600, 600]])
    write_annotations([gt], tmp_path / "g.json")
    write_annotations([pr], tmp_path / "p.json")
    run("eval", "--pred", tmp_path / "p.json", "--gt", tmp_path / "g.json", "--out", tmp_path / "m")
    txt = (tmp_path / "m").read_text()
    assert "fp = 0.500000" in txt and "fn = 0.500000" in txt


def test_optimize_h(tmp_path):
    gt = tmp_path / "gt.json"
    run("synth", "--scenes", 2, "--seed", 5, "--out", gt)
    out = tmp_path / "h.csv"
    assert run("optimize-h", "--annotations", gt, "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("raw_file,a,b,c,d,e,f") and len(lines) == 3


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("# comment\ndelta-v = 0.25\nthreshold_px = 9\n")
    assert load_config(cfg) == {"delta_v": "0.25", "threshold_px": "9"}
    gt = tmp_path / "gt.json"
    run("synth", "--scenes", 1, "--out", gt)
    out = tmp_path / "m.txt"
    run("eval", "--pred", gt, "--gt", gt, "--config", cfg, "--threshold-px", 4, "--out", out)
    txt = out.read_text()
    assert "config.threshold_px = 4.0" in txt and "config.delta_v = 0.25" in txt


def test_bench_table3_small(tmp_path, capsys):
    out = tmp_path / "bench"
    rc = run("bench-table3", "--scenes", 12, "--seed", 1, "--out", out, "--no-check")
    assert rc == 0
    csv = (out / "table3.csv").read_text().splitlines()
    assert csv[0] == "mode,degree,mse_px2,miss_per_lane" and len(csv) == 7
    rep = (out / "table3_report.txt").read_text()
    assert "config.seed = 1" in rep and "config.scenes = 12" in rep
    first = rep
    run("bench-table3", "--scenes", 12, "--seed", 1, "--out", out, "--no-check", "--threads", 3)
    assert (out / "table3_report.txt").read_text().replace("config.threads = 3", "") == \
        first.replace("config.threads = 1", "")


def test_gradcheck(tmp_path):
    out = tmp_path / "g.txt"
    assert run("gradcheck", "--instances", 5, "--out", out) == 0
    txt = out.read_text()
    assert txt.count("PASS") == 2 and "worst_param=" in txt and "instances=5" in txt


def test_gradcheck_failure_exit(tmp_path):
    assert run("gradcheck", "--instances", 3, "--tol", 1e-30, "--out", tmp_path / "g.txt") == 1
