"""Set-prediction loss terms: focal classification, L1 box, GIoU and the total.

The focal term is evaluated exactly in its printed two-term form, where the
negative-class term is *subtracted*; it can therefore be negative. The total
loss comes in two modes:

``verbatim``
    First term sums GIoU itself (not ``1 - GIoU``); the classification term
    uses ``(q log p + (1 - q) log(1 - p)) * (alpha p^gamma (1 - p) + q p)``
    with the unhatted probability read as the predicted probability.
``corrected``
    First term sums ``1 - GIoU``; the classification term is the IoU-aware
    (varifocal) binary cross entropy
    ``-(q log p + (1 - q) log(1 - p)) * (alpha p^gamma (1 - y) + q y)``
    with ``y`` the one-hot target.

Both modes report the three weighted terms alongside their sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from detkit.errors import DomainError, UsageError, ValidationError
from detkit.geometry import BBox, giou, iou

MODES = ("verbatim", "corrected")

#: Default clamp half-width used when loading probabilities from files.
PROB_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Focal parameters and term weights. Defaults are the matching-cost values."""

    alpha: float = 0.25
    gamma: float = 2.0
    lambda_cls: float = 1.0
    lambda_bbox: float = 5.0
    lambda_giou: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.gamma < 0:
            raise ValidationError(f"gamma must be >= 0, got {self.gamma}")
        for name in ("lambda_cls", "lambda_bbox", "lambda_giou"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class MatchedPair:
    """One prediction matched to one ground truth.

    ``q`` defaults to the IoU of the two boxes when omitted.
    """

    pred_box: BBox
    gt_box: BBox
    pred_probs: tuple[float, ...]
    gt_class: int
    q: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "pred_probs", tuple(float(p) for p in self.pred_probs))
        if not 0 <= self.gt_class < len(self.pred_probs):
            raise ValidationError(
                f"gt_class {self.gt_class} outside probability vector of length {len(self.pred_probs)}"
            )
        if self.q is None:
            object.__setattr__(self, "q", iou(self.pred_box, self.gt_box))
        elif not 0.0 <= self.q <= 1.0:
            raise ValidationError(f"q must be in [0, 1], got {self.q}")


@dataclass(frozen=True)
class LossBreakdown:
    mode: str
    giou_term: float
    l1_term: float
    cls_term: float
    n_pairs: int
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total", self.giou_term + self.l1_term + self.cls_term)

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "n_pairs": self.n_pairs,
            "giou_term": self.giou_term,
            "l1_term": self.l1_term,
            "cls_term": self.cls_term,
            "total": self.total,
        }


def clamp_probability(p: float, eps: float = PROB_EPS) -> float:
    """Pull ``p`` into ``[eps, 1 - eps]`` so logs stay finite."""
    return min(max(float(p), eps), 1.0 - eps)


def _check_prob(p: float, eps: float | None) -> float:
    if eps is not None:
        return clamp_probability(p, eps)
    p = float(p)
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie strictly inside (0, 1), got {p!r}")
    return p


def focal_cls_loss(p_hat: float, w: LossWeights = LossWeights(), eps: float | None = None) -> float:
    """Focal classification cost for the probability of the target class.

    Raises DomainError at 0 or 1 unless ``eps`` is given, in which case the
    probability is clamped first.
    """
    p = _check_prob(p_hat, eps)
    pos = w.alpha * (1.0 - p) ** w.gamma * -math.log(p)
    neg = (1.0 - w.alpha) * p**w.gamma * -math.log1p(-p)
    return pos - neg


def box_l1(a: BBox, b: BBox) -> float:
    """L1 distance between two boxes over (cx, cy, w, h)."""
    return abs(a.cx - b.cx) + abs(a.cy - b.cy) + abs(a.w - b.w) + abs(a.h - b.h)


def l1_box_loss(pred_boxes: Sequence[BBox], gt_boxes: Sequence[BBox] | None = None) -> float:
    """Summed L1 distance over (cx, cy, w, h).

    Accepts either two equal-length box lists or one list of ``(pred, gt)``
    tuples.
    """
    if gt_boxes is None:
        pairs = list(pred_boxes)
    else:
        if len(pred_boxes) != len(gt_boxes):
            raise ValidationError(f"length mismatch: {len(pred_boxes)} predictions vs {len(gt_boxes)} targets")
        pairs = list(zip(pred_boxes, gt_boxes))
    if not pairs:
        raise ValidationError("l1_box_loss needs at least one pair")
    return math.fsum(box_l1(p, g) for p, g in pairs)


def giou_loss(pred_box: BBox, gt_box: BBox) -> float:
    return 1.0 - giou(pred_box, gt_box)


def _cls_term_verbatim(pair: MatchedPair, w: LossWeights, eps: float | None) -> float:
    acc = []
    for c, p_raw in enumerate(pair.pred_probs):
        p = _check_prob(p_raw, eps)
        q = pair.q if c == pair.gt_class else 0.0
        log_term = q * math.log(p) + (1.0 - q) * math.log1p(-p)
        weight = w.alpha * p**w.gamma * (1.0 - p) + q * p
        acc.append(log_term * weight)
    return math.fsum(acc)


def _cls_term_corrected(pair: MatchedPair, w: LossWeights, eps: float | None) -> float:
    acc = []
    for c, p_raw in enumerate(pair.pred_probs):
        p = _check_prob(p_raw, eps)
        y = 1.0 if c == pair.gt_class else 0.0
        q = pair.q * y
        bce = -(q * math.log(p) + (1.0 - q) * math.log1p(-p))
        weight = w.alpha * p**w.gamma * (1.0 - y) + q * y
        acc.append(bce * weight)
    return math.fsum(acc)


def total_loss(
    pairs: Sequence[MatchedPair],
    w: LossWeights = LossWeights(),
    mode: str = "corrected",
    eps: float | None = None,
) -> LossBreakdown:
    """Weighted, pair-averaged total loss with its per-term breakdown."""
    if mode not in MODES:
        raise UsageError(f"unknown loss mode {mode!r}; expected one of {MODES}")
    if not pairs:
        raise ValidationError("total_loss needs at least one matched pair")
    n = len(pairs)
    if mode == "verbatim":
        g = math.fsum(giou(p.pred_box, p.gt_box) for p in pairs)
        cls = math.fsum(_cls_term_verbatim(p, w, eps) for p in pairs)
    else:
        g = math.fsum(giou_loss(p.pred_box, p.gt_box) for p in pairs)
        cls = math.fsum(_cls_term_corrected(p, w, eps) for p in pairs)
    l1 = math.fsum(box_l1(p.pred_box, p.gt_box) for p in pairs)
    return LossBreakdown(
        mode=mode,
        giou_term=w.lambda_giou * g / n,
        l1_term=w.lambda_bbox * l1 / n,
        cls_term=w.lambda_cls * cls / n,
        n_pairs=n,
    )
