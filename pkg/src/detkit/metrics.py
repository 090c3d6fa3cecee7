"""COCO-style detection metrics: PR curves, AP, mAP@50, mAP@50-95, confusion.

Ordering contract
-----------------
Results never depend on the order in which images or detections are
supplied. Inside an image, detections are processed by descending
confidence, then by (class, box) content, then input position. Across
images, records are merged by descending confidence, then image id, then
the within-image rank. Ground truths are likewise put in (class, box)
order before matching.
"""

from __future__ import annotations

import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

from detkit.errors import UsageError, ValidationError
from detkit.geometry import BBox, iou

#: IoU thresholds 0.50, 0.55, ..., 0.95. Computed as k/100 so each value is
#: the correctly rounded double of its decimal.
IOU_THRESHOLDS = tuple((50 + 5 * k) / 100 for k in range(10))
RECALL_GRID = np.arange(101) / 100
AP_METHODS = ("coco101", "allpoint")


@dataclass(frozen=True)
class Detection:
    image_id: Hashable
    class_id: int
    box: BBox
    confidence: float

    def __post_init__(self):
        c = float(self.confidence)
        if not (0.0 <= c <= 1.0):
            raise ValidationError(f"confidence {self.confidence!r} outside [0, 1]")
        object.__setattr__(self, "confidence", c)


@dataclass(frozen=True)
class GroundTruth:
    image_id: Hashable
    class_id: int
    box: BBox


@dataclass(frozen=True)
class MatchResult:
    """Per-class matching outcome at one IoU threshold, in ranked order."""

    records: tuple[tuple[float, bool], ...]
    unmatched_gt: int
    n_gt: int

    @property
    def tp_flags(self) -> list[bool]:
        return [tp for _, tp in self.records]

    @property
    def confidences(self) -> list[float]:
        return [c for c, _ in self.records]


@dataclass(frozen=True)
class ClassMetrics:
    instances: int
    precision: float
    recall: float
    ap50: float
    ap50_95: float
    confidence: float | None  # operating point chosen by max F1
    ap_by_threshold: tuple[float, ...] = ()


@dataclass(frozen=True)
class Aggregate:
    precision: float
    recall: float
    map50: float
    map50_95: float


@dataclass
class EvalReport:
    class_names: tuple[str, ...]
    per_class: dict[str, ClassMetrics]
    aggregate: Aggregate
    evaluated_classes: list[str]
    skipped_classes: list[str]
    interpolation: str = "coco101"
    # IoU-0.5 curves per evaluated class: (confidence, precision, recall) arrays
    curves: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=dict, repr=False)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts indexed ``[true label, predicted label]``; background is the last label."""

    labels: tuple[str, ...]
    counts: np.ndarray
    conf_threshold: float
    iou_threshold: float

    @property
    def normalized(self) -> np.ndarray:
        sums = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        out = np.zeros(self.counts.shape, dtype=np.float64)
        np.divide(self.counts, sums, out=out, where=sums > 0)
        return out


# -- ordering helpers -------------------------------------------------------

def _det_key(item: tuple[int, Detection]):
    idx, d = item
    return (-d.confidence, d.class_id, d.box.as_tuple(), idx)


def _gt_key(g: GroundTruth):
    return (g.class_id, g.box.as_tuple())


def _image_key(image_id) -> tuple[str, str]:
    return (type(image_id).__name__, str(image_id))


def _group_by_image(dets: Iterable[Detection], gts: Iterable[GroundTruth]):
    det_map: dict = defaultdict(list)
    gt_map: dict = defaultdict(list)
    for i, d in enumerate(dets):
        det_map[d.image_id].append((i, d))
    for g in gts:
        gt_map[g.image_id].append(g)
    images = sorted(set(det_map) | set(gt_map), key=_image_key)
    out = []
    for img in images:
        ds = [d for _, d in sorted(det_map.get(img, []), key=_det_key)]
        gs = sorted(gt_map.get(img, []), key=_gt_key)
        out.append((img, ds, gs))
    return out


def _iou_matrix(dets: Sequence[Detection], gts: Sequence[GroundTruth]) -> np.ndarray:
    m = np.zeros((len(dets), len(gts)), dtype=np.float64)
    for i, d in enumerate(dets):
        for j, g in enumerate(gts):
            m[i, j] = iou(d.box, g.box)
    return m


def _greedy_flags(ious: np.ndarray, thresholds: Sequence[float]) -> np.ndarray:
    """TP flags, shape (len(thresholds), n_dets), for dets already in rank order."""
    n_det, n_gt = ious.shape
    flags = np.zeros((len(thresholds), n_det), dtype=bool)
    if n_det == 0 or n_gt == 0:
        return flags
    for t, thr in enumerate(thresholds):
        claimed = np.zeros(n_gt, dtype=bool)
        for i in range(n_det):
            cand = np.where(claimed | (ious[i] < thr), -1.0, ious[i])
            j = int(np.argmax(cand))
            if cand[j] >= 0.0:
                claimed[j] = True
                flags[t, i] = True
    return flags


def _class_records(grouped, class_id: int, thresholds: Sequence[float]):
    """Merged, ranked (confidence, flags-per-threshold) for one class."""
    keyed = []
    n_gt = 0
    for img, ds, gs in grouped:
        cd = [d for d in ds if d.class_id == class_id]
        cg = [g for g in gs if g.class_id == class_id]
        n_gt += len(cg)
        if not cd:
            continue
        flags = _greedy_flags(_iou_matrix(cd, cg), thresholds)
        ik = _image_key(img)
        for rank, d in enumerate(cd):
            keyed.append(((-d.confidence, ik, rank), d.confidence, flags[:, rank]))
    keyed.sort(key=lambda r: r[0])
    conf = np.array([r[1] for r in keyed], dtype=np.float64)
    flags = (
        np.stack([r[2] for r in keyed], axis=1)
        if keyed
        else np.zeros((len(thresholds), 0), dtype=bool)
    )
    return conf, flags, n_gt


def match_detections(
    dets: Iterable[Detection],
    gts: Iterable[GroundTruth],
    class_id: int,
    iou_threshold: float = 0.5,
) -> MatchResult:
    """Greedy confidence-ordered matching for one class.

    Each detection claims the unclaimed same-image ground truth of highest
    IoU at or above the threshold; unclaiming detections are false
    positives.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValidationError(f"iou_threshold must be in (0, 1), got {iou_threshold}")
    conf, flags, n_gt = _class_records(_group_by_image(dets, gts), class_id, [iou_threshold])
    records = tuple((float(c), bool(f)) for c, f in zip(conf, flags[0]))
    n_tp = int(flags[0].sum())
    return MatchResult(records=records, unmatched_gt=n_gt - n_tp, n_gt=n_gt)


def pr_curve(tp_flags: Sequence[bool], total_gt: int) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative (precision, recall) after each ranked detection."""
    tp = np.asarray(tp_flags, dtype=bool)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    precision = ctp / np.maximum(ctp + cfp, 1)
    recall = ctp / total_gt
    return precision, recall


def average_precision(tp_flags: Sequence[bool], total_gt: int, method: str = "coco101") -> float:
    """Area under the monotone precision envelope.

    ``coco101`` samples the envelope at recall 0.00, 0.01, ..., 1.00 and
    averages; ``allpoint`` integrates the step function exactly.
    """
    if method not in AP_METHODS:
        raise UsageError(f"unknown AP method {method!r}; expected one of {AP_METHODS}")
    if total_gt < 1:
        raise ValidationError("average precision is undefined without ground truths; skip the class")
    if len(tp_flags) == 0:
        return 0.0
    precision, recall = pr_curve(tp_flags, total_gt)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    if method == "coco101":
        idx = np.searchsorted(recall, RECALL_GRID, side="left")
        hit = idx < len(recall)
        sampled = np.where(hit, envelope[np.minimum(idx, len(recall) - 1)], 0.0)
        return float(math.fsum(sampled) / len(RECALL_GRID))
    steps = np.diff(np.concatenate(([0.0], recall)))
    return float(math.fsum(steps * envelope))


def best_f1_point(confidences: np.ndarray, tp_flags: np.ndarray, total_gt: int) -> tuple[float, float, float | None]:
    """(precision, recall, confidence) at the max-F1 confidence cut.

    Only cuts between distinct confidence values are considered, so tied
    detections enter or leave together. Ties in F1 go to the higher
    confidence.
    """
    if len(tp_flags) == 0:
        return 0.0, 0.0, None
    precision, recall = pr_curve(tp_flags, total_gt)
    conf = np.asarray(confidences)
    ends = np.append(conf[1:] != conf[:-1], True)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(denom), where=denom > 0)
    f1 = np.where(ends, f1, -1.0)
    k = int(np.argmax(f1))
    return float(precision[k]), float(recall[k]), float(conf[k])


def _evaluate_class(args):
    grouped, class_id, method = args
    conf, flags, n_gt = _class_records(grouped, class_id, IOU_THRESHOLDS)
    aps = tuple(average_precision(flags[t], n_gt, method) for t in range(len(IOU_THRESHOLDS)))
    p, r, c = best_f1_point(conf, flags[0], n_gt)
    precision, recall = pr_curve(flags[0], n_gt) if len(conf) else (np.zeros(0), np.zeros(0))
    metrics = ClassMetrics(
        instances=n_gt,
        precision=p,
        recall=r,
        ap50=aps[0],
        ap50_95=math.fsum(aps) / len(aps),
        confidence=c,
        ap_by_threshold=aps,
    )
    return metrics, (conf, precision, recall)


def _check_classes(items, n_classes: int, what: str):
    for it in items:
        if not 0 <= it.class_id < n_classes:
            raise ValidationError(
                f"{what} in image {it.image_id!r} has class {it.class_id}, "
                f"outside the {n_classes}-class list"
            )


def evaluate(
    dets: Iterable[Detection],
    gts: Iterable[GroundTruth],
    class_list: Sequence[str],
    method: str = "coco101",
    workers: int = 1,
) -> EvalReport:
    """Per-class and aggregate precision, recall, mAP@50 and mAP@50-95.

    Classes without ground-truth instances are listed in ``skipped_classes``
    and left out of every aggregate. ``workers > 1`` spreads classes over
    processes; results are identical for any worker count.
    """
    names = tuple(class_list)
    if not names:
        raise UsageError("class list is empty")
    if method not in AP_METHODS:
        raise UsageError(f"unknown AP method {method!r}; expected one of {AP_METHODS}")
    dets = list(dets)
    gts = list(gts)
    _check_classes(dets, len(names), "detection")
    _check_classes(gts, len(names), "ground truth")
    if not gts:
        raise UsageError("no ground-truth instances at all; nothing to evaluate")

    present = {g.class_id for g in gts}
    evaluated = [c for c in range(len(names)) if c in present]
    skipped = [names[c] for c in range(len(names)) if c not in present]
    grouped = _group_by_image(dets, gts)
    jobs = [(grouped, c, method) for c in evaluated]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_evaluate_class, jobs))
    else:
        results = [_evaluate_class(j) for j in jobs]

    per_class = {}
    curves = {}
    for c, (m, curve) in zip(evaluated, results):
        per_class[names[c]] = m
        curves[names[c]] = curve
    ms = list(per_class.values())
    aggregate = Aggregate(
        precision=math.fsum(m.precision for m in ms) / len(ms),
        recall=math.fsum(m.recall for m in ms) / len(ms),
        map50=math.fsum(m.ap50 for m in ms) / len(ms),
        map50_95=math.fsum(m.ap50_95 for m in ms) / len(ms),
    )
    return EvalReport(
        class_names=names,
        per_class=per_class,
        aggregate=aggregate,
        evaluated_classes=[names[c] for c in evaluated],
        skipped_classes=skipped,
        interpolation=method,
        curves=curves,
    )


def confusion_matrix(
    dets: Iterable[Detection],
    gts: Iterable[GroundTruth],
    class_list: Sequence[str],
    confidence_threshold: float = 0.25,
    iou_threshold: float = 0.45,
) -> ConfusionMatrix:
    """Class-agnostic matching tallied into a (K+1)x(K+1) matrix.

    Detections under ``confidence_threshold`` are dropped. Within each image
    the remaining (gt, det) pairs with IoU at or above ``iou_threshold`` are
    accepted greedily by descending IoU, each box used once. Missed ground
    truths land in the background column, spurious detections in the
    background row.
    """
    for name, t in (("confidence_threshold", confidence_threshold), ("iou_threshold", iou_threshold)):
        if not 0.0 < t < 1.0:
            raise ValidationError(f"{name} must be in (0, 1), got {t}")
    names = tuple(class_list)
    k = len(names)
    dets = [d for d in dets if d.confidence >= confidence_threshold]
    gts = list(gts)
    _check_classes(dets, k, "detection")
    _check_classes(gts, k, "ground truth")
    counts = np.zeros((k + 1, k + 1), dtype=np.int64)
    for _, ds, gs in _group_by_image(dets, gts):
        ious = _iou_matrix(ds, gs)
        cand = [
            (-ious[i, j], j, i)
            for i in range(len(ds))
            for j in range(len(gs))
            if ious[i, j] >= iou_threshold
        ]
        cand.sort()
        det_used = [False] * len(ds)
        gt_used = [False] * len(gs)
        for _, j, i in cand:
            if det_used[i] or gt_used[j]:
                continue
            det_used[i] = gt_used[j] = True
            counts[gs[j].class_id, ds[i].class_id] += 1
        for j, g in enumerate(gs):
            if not gt_used[j]:
                counts[g.class_id, k] += 1
        for i, d in enumerate(ds):
            if not det_used[i]:
                counts[k, d.class_id] += 1
    return ConfusionMatrix(
        labels=names + ("background",),
        counts=counts,
        conf_threshold=confidence_threshold,
        iou_threshold=iou_threshold,
    )
