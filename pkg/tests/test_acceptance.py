"""Acceptance suite: one test per headline criterion.

Each test prints a single ``PASS``/``FAIL`` line with the measured values
and wall time, then asserts. Run with ``pytest tests/test_acceptance.py -v``.
"""

import itertools
import json
import math
import random
import sys
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import DATA, FIXTURES, DEBRIS_CLASSES, as_tuples, grid_box, micro_dataset
from detkit.bench import SubprocessAdapter, benchmark
from detkit.cli import main
from detkit.geometry import BBox, giou, iou, to_corners
from detkit.losses import LossWeights, MatchedPair, focal_cls_loss, giou_loss, total_loss
from detkit.matching import hungarian
from detkit.metrics import (
    IOU_THRESHOLDS,
    Detection,
    GroundTruth,
    average_precision,
    confusion_matrix,
    evaluate,
    match_detections,
)
from reference_eval import THRESHOLDS, naive_evaluate, naive_match

GOLDEN = DATA / "golden"
STUB = FIXTURES / "sleep_adapter.py"


@pytest.fixture
def verdict(capsys):
    def record(name: str, ok: bool, detail: str, started: float | None = None):
        took = f" [{time.perf_counter() - started:.2f}s]" if started is not None else ""
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'}  {name}: {detail}{took}")
        return ok

    return record


def test_efficiency_table(tmp_path, capsys, verdict):
    t0 = time.perf_counter()
    models = tmp_path / "models.json"
    models.write_text(json.dumps([
        {"name": "RT-DETR-L", "params_m": 32.9, "gflops": 108.0, "latency_ms": 20.1},
        {"name": "RT-DETR-X", "params_m": 67.3, "gflops": 234.4, "latency_ms": 34.5},
    ]))
    code = main(["report", str(models)])
    out = capsys.readouterr().out
    elapsed = time.perf_counter() - t0
    tokens = ["2.05×", "2.17×", "+71.6%", "49.75", "28.99"]
    missing = [t for t in tokens if t not in out]
    ok = code == 0 and not missing and elapsed < 1.0
    verdict("Efficiency table", ok, f"missing={missing or 'none'} runtime={elapsed:.3f}s (< 1 s)")
    assert ok


def _brute_force(cost):
    n = cost.shape[0]
    best = math.inf
    for cols in itertools.permutations(range(n)):
        s = 0.0
        for r, c in enumerate(cols):
            s += float(cost[r, c])
        best = min(best, s)
    return best


def test_hungarian_exactness(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240601)
    mismatches = 0
    for k in range(1000):
        n = 1 + k % 7
        cost = rng.uniform(-10, 10, size=(n, n))
        if hungarian(cost).total_cost != _brute_force(cost):
            mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 10.0
    verdict("Hungarian exactness", ok, f"1000 matrices 1x1..7x7, mismatches={mismatches}", t0)
    assert ok


def _random_box(rng):
    x1, x2 = sorted(rng.uniform(0, 1, 2))
    y1, y2 = sorted(rng.uniform(0, 1, 2))
    return BBox.checked((x1 + x2) / 2, (y1 + y2) / 2, max(x2 - x1, 1e-6), max(y2 - y1, 1e-6))


def _mc_iou(rng, a, b, n):
    """Uniform samples over the enclosing box; returns (estimate, union hits)."""
    ca, cb = to_corners(a), to_corners(b)
    ax1, ay1, ax2, ay2 = ca.x1, ca.y1, ca.x2, ca.y2
    bx1, by1, bx2, by2 = cb.x1, cb.y1, cb.x2, cb.y2
    ex1, ey1, ex2, ey2 = min(ax1, bx1), min(ay1, by1), max(ax2, bx2), max(ay2, by2)
    x = rng.uniform(ex1, ex2, n)
    y = rng.uniform(ey1, ey2, n)
    in_a = (x >= ax1) & (x <= ax2) & (y >= ay1) & (y <= ay2)
    in_b = (x >= bx1) & (x <= bx2) & (y >= by1) & (y <= by2)
    n_union = int(np.count_nonzero(in_a | in_b))
    n_inter = int(np.count_nonzero(in_a & in_b))
    return n_inter / n_union, n_union


def test_geometry_properties(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    violations = []
    for _ in range(10_000):
        a, b = _random_box(rng), _random_box(rng)
        i_ab, g_ab = iou(a, b), giou(a, b)
        if not 0.0 <= i_ab <= 1.0:
            violations.append(("iou range", a, b))
        if not -1.0 < g_ab <= i_ab <= 1.0:
            violations.append(("giou order", a, b))
        if iou(b, a) != i_ab or giou(b, a) != g_ab:
            violations.append(("symmetry", a, b))
        # translate both boxes by the same offset, keeping them inside the image
        lo_x = -min(a.cx - a.w / 2, b.cx - b.w / 2)
        hi_x = 1 - max(a.cx + a.w / 2, b.cx + b.w / 2)
        lo_y = -min(a.cy - a.h / 2, b.cy - b.h / 2)
        hi_y = 1 - max(a.cy + a.h / 2, b.cy + b.h / 2)
        dx, dy = rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)
        ta = BBox.checked(a.cx + dx, a.cy + dy, a.w, a.h)
        tb = BBox.checked(b.cx + dx, b.cy + dy, b.w, b.h)
        if abs(iou(ta, tb) - i_ab) > 1e-9 or abs(giou(ta, tb) - g_ab) > 1e-9:
            violations.append(("translation", a, b))

    # Conditional on landing in the union, a sample lands in the intersection
    # with probability IoU, so n_inter ~ Binomial(n_union, IoU).
    n_pairs, n_samples = 1000, 20_000
    within, zs = 0, []
    for _ in range(n_pairs):
        # b is a perturbed copy of a, so most pairs overlap
        a = BBox.checked(*rng.uniform([0.3, 0.3, 0.05, 0.05], [0.7, 0.7, 0.4, 0.4]))
        b = BBox.checked(*np.clip(np.array(a.as_tuple()) + rng.normal(0, 0.08, 4), [0.3, 0.3, 0.02, 0.02], [0.7, 0.7, 0.5, 0.5]))
        exact = iou(a, b)
        est, n_union = _mc_iou(rng, a, b, n_samples)
        sigma = math.sqrt(exact * (1 - exact) / n_union)
        if sigma == 0.0:
            within += est == exact
            continue
        z = (est - exact) / sigma
        zs.append(z)
        within += abs(z) <= 3.0
    pooled = sum(zs) / math.sqrt(len(zs))
    frac = within / n_pairs
    elapsed = time.perf_counter() - t0
    ok = not violations and frac >= 0.99 and abs(pooled) <= 3.0 and elapsed < 30.0
    verdict("Geometry properties", ok,
            f"10000 pairs, violations={len(violations)}; Monte-Carlo within 3σ {within}/{n_pairs} "
            f"(need >= 99%), pooled z={pooled:+.2f}", t0)
    assert ok, violations[:3]


def test_loss_fidelity(verdict):
    w = LossWeights(alpha=0.25, gamma=2.0)
    focal = focal_cls_loss(0.5, w)
    tl, br = BBox(0.25, 0.25, 0.5, 0.5), BBox(0.75, 0.75, 0.5, 0.5)
    g = giou_loss(tl, br)
    pair = [MatchedPair(tl, tl, (0.2, 0.7, 0.1), 1)]
    diff = total_loss(pair, w, "verbatim").giou_term - total_loss(pair, w, "corrected").giou_term
    ok = abs(focal - (-0.086643)) <= 1e-6 and g == 1.5 and diff == 2.0 == w.lambda_giou
    verdict("Loss fidelity", ok, f"focal(0.5)={focal:.6f} giou_loss={g} verbatim-corrected GIoU term={diff}")
    assert ok


def test_evaluator_oracle_equivalence(verdict):
    t0 = time.perf_counter()
    rng = random.Random(500)
    label_mismatch = 0
    ap_err = 0.0
    n_tp = n_fp = 0
    for _ in range(500):
        dets, gts, k = micro_dataset(rng)
        td, tg = as_tuples(dets, gts)
        for c in range(k):
            for thr_f, thr_q in zip(IOU_THRESHOLDS, THRESHOLDS):
                got = match_detections(dets, gts, c, thr_f)
                want, n_gt = naive_match(td, tg, c, thr_q)
                label_mismatch += list(got.records) != want or got.n_gt != n_gt
                n_tp += sum(tp for _, tp in want)
                n_fp += sum(not tp for _, tp in want)
        names = [f"c{i}" for i in range(k)]
        for method in ("coco101", "allpoint"):
            rep = evaluate(dets, gts, names, method=method)
            for c, (ap50, ap5095) in naive_evaluate(td, tg, k, method).items():
                m = rep.per_class[names[c]]
                ap_err = max(ap_err, abs(m.ap50 - float(ap50)), abs(m.ap50_95 - float(ap5095)))
    elapsed = time.perf_counter() - t0
    ok = label_mismatch == 0 and ap_err <= 1e-9 and elapsed < 60.0
    verdict("Evaluator oracle equivalence", ok,
            f"500 datasets, label mismatches={label_mismatch} (TP={n_tp}, FP={n_fp}), max AP error={ap_err:.1e}", t0)
    assert ok


def test_zero_instance_classes(verdict):
    rng = random.Random(8)
    present = [c for c, name in enumerate(DEBRIS_CLASSES) if name not in ("Wood", "Clothes")]
    gts = [GroundTruth(f"img{i}", c, grid_box(rng)) for i, c in enumerate(present * 3)]
    dets = [Detection(g.image_id, g.class_id, g.box, 0.9) for g in gts[::2]]
    dets.append(Detection("img0", DEBRIS_CLASSES.index("Wood"), grid_box(rng), 0.7))
    rep = evaluate(dets, gts, DEBRIS_CLASSES)
    mean50 = sum(rep.per_class[n].ap50 for n in rep.evaluated_classes) / 5
    ok = (rep.skipped_classes == ["Clothes", "Wood"] and len(rep.evaluated_classes) == 5
          and rep.aggregate.map50 == pytest.approx(mean50, abs=1e-15))
    verdict("Zero-instance classes", ok,
            f"skipped={rep.skipped_classes} evaluated={len(rep.evaluated_classes)} mAP@50={rep.aggregate.map50:.4f}")
    assert ok


def test_ap_spot_values(verdict):
    single = average_precision([True], 1)
    two = average_precision([True, False], 2)
    # brute force: the envelope is 1 for recall <= 1/2 (grid points 0..50), 0 above
    expected = Fraction(sum(1 for i in range(101) if Fraction(i, 100) <= Fraction(1, 2)), 101)
    ok = single == 1.0 and expected == Fraction(51, 101) and abs(two - 51 / 101) <= 1e-12
    verdict("AP spot values", ok, f"[TP]/1 gt -> {single}; [TP, FP]/2 gts -> {two:.9f} (51/101 = {51 / 101:.9f})")
    assert ok


def test_confusion_matrix(verdict):
    rng = random.Random(9)
    gts = [GroundTruth(f"img{i % 4}", c, grid_box(rng)) for i, c in enumerate([0, 2, 3, 4, 5] * 4)]
    # keep boxes non-overlapping across classes within an image so matching is unambiguous
    gts = [GroundTruth(g.image_id, g.class_id, BBox(0.05 + 0.09 * (i // 4), 0.5, 0.08, 0.5)) for i, g in enumerate(gts)]
    perfect = [Detection(g.image_id, g.class_id, g.box, 0.9) for g in gts]
    cm_perfect = confusion_matrix(perfect, gts, DEBRIS_CLASSES)
    cm_silent = confusion_matrix([], gts, DEBRIS_CLASSES)
    k = len(DEBRIS_CLASSES)
    present = sorted({g.class_id for g in gts})
    identity = all(cm_perfect.normalized[c][j] == (1.0 if j == c else 0.0) for c in present for j in range(k + 1))
    silent_bg = all(cm_silent.normalized[c][k] == 1.0 for c in present)
    row_err = 0.0
    for cm in (cm_perfect, cm_silent, _golden_confusion()):
        for row, counts in zip(cm.normalized, cm.counts):
            if sum(counts):
                row_err = max(row_err, abs(sum(row) - 1.0))
    ok = identity and silent_bg and row_err <= 1e-9
    verdict("Confusion matrix", ok, f"identity rows={identity} silent->background={silent_bg} max row-sum error={row_err:.1e}")
    assert ok


def _golden_confusion():
    from detkit.dataset import ClassList, load_labels, load_predictions

    classes = ClassList.load(GOLDEN / "classes.txt")
    split = load_labels(GOLDEN / "labels", classes)
    dets = load_predictions(GOLDEN / "preds", classes, split.image_ids)
    return confusion_matrix(dets, split.ground_truths, classes.names)


def test_bench_harness(verdict):
    t0 = time.perf_counter()
    stats = {}
    for ms in (20, 34.5):
        with SubprocessAdapter([sys.executable, str(STUB), str(ms)]) as adapter:
            stats[ms] = benchmark(adapter, ["frame.jpg"], warmup=3, iterations=30)
    s20, s345 = stats[20], stats[34.5]
    ok = (20.0 <= s20.mean_ms <= 25.0 and abs(s20.fps * s20.mean_ms - 1000.0) <= 1e-9
          and abs(s345.fps * s345.mean_ms - 1000.0) <= 1e-9 and s20.fps > s345.fps)
    verdict("Bench harness", ok,
            f"20 ms stub mean={s20.mean_ms:.2f} ms fps={s20.fps:.2f}; 34.5 ms stub mean={s345.mean_ms:.2f} ms "
            f"fps={s345.fps:.2f}", t0)
    assert ok


def test_golden_report(capsys, verdict):
    expected = (GOLDEN / "expected.md").read_text(encoding="utf-8")
    outputs = []
    for workers in (1, 1, 2, 4):
        code = main(["evaluate", str(GOLDEN / "labels"), str(GOLDEN / "preds"), "--classes",
                     str(GOLDEN / "classes.txt"), "--name", "golden", "--workers", str(workers)])
        outputs.append((code, capsys.readouterr().out))
    identical = all(code == 0 and out == expected for code, out in outputs)
    verdict("Golden report", identical, f"{len(outputs)} runs (workers 1, 1, 2, 4) byte-identical to expected.md")
    assert identical
