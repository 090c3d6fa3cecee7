"""Minimum-cost bipartite assignment of predictions to ground truths.

``hungarian`` is the O(n^3) shortest-augmenting-path variant of Kuhn-Munkres
with row/column potentials. Potentials make it indifferent to the sign of
the costs, so negative entries (the printed focal term can go below zero)
need no shifting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from detkit.errors import ValidationError
from detkit.geometry import BBox
from detkit.losses import LossWeights, box_l1, focal_cls_loss, giou_loss


@dataclass(frozen=True)
class Assignment:
    """Matched ``(prediction, ground_truth)`` index pairs, sorted by prediction."""

    pairs: tuple[tuple[int, int], ...]
    total_cost: float

    def as_dict(self) -> dict:
        return {"pairs": [list(p) for p in self.pairs], "total_cost": self.total_cost}


def as_cost_matrix(cost) -> np.ndarray:
    """Validate and convert to a float64 2-D array."""
    try:
        arr = np.array(cost, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"cost matrix is not a rectangular numeric array: {exc}") from None
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError(f"cost matrix must be 2-D with at least one row and column, got shape {arr.shape}")
    bad = np.argwhere(~np.isfinite(arr))
    if len(bad):
        r, c = bad[0]
        raise ValidationError(f"non-finite cost {arr[r, c]!r} at row {r}, col {c}")
    return arr


def hungarian(cost) -> Assignment:
    """Optimal one-to-one assignment of size ``min(N, M)``.

    Rectangular inputs are padded to square with ``max + 1``; pairs touching
    padding are dropped. Ties resolve toward the lowest column index while
    rows are inserted in index order, so results are reproducible.
    """
    arr = as_cost_matrix(cost)
    n_rows, n_cols = arr.shape
    n = max(n_rows, n_cols)
    if n_rows != n_cols:
        square = np.full((n, n), arr.max() + 1.0)
        square[:n_rows, :n_cols] = arr
    else:
        square = arr
    a = square.tolist()

    inf = math.inf
    # 1-based; index 0 is the virtual source column.
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    owner = [0] * (n + 1)  # owner[j]: row matched to column j
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = owner[j0]
            row = a[i0 - 1]
            ui0 = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - ui0 - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1

    col_of_row = [0] * n
    for j in range(1, n + 1):
        col_of_row[owner[j] - 1] = j - 1
    pairs = tuple((r, c) for r, c in enumerate(col_of_row) if r < n_rows and c < n_cols)
    total = 0.0
    for r, c in pairs:
        total += float(arr[r, c])
    return Assignment(pairs=pairs, total_cost=total)


def pair_cost(pred_prob: float, pred_box: BBox, gt_box: BBox, weights: LossWeights = LossWeights(), eps: float | None = None) -> float:
    """Matching cost of one prediction against one ground truth.

    ``pred_prob`` is the probability the prediction assigns to the ground
    truth's class.
    """
    return (
        weights.lambda_cls * focal_cls_loss(pred_prob, weights, eps=eps)
        + weights.lambda_bbox * box_l1(pred_box, gt_box)
        + weights.lambda_giou * giou_loss(pred_box, gt_box)
    )


@dataclass(frozen=True)
class QueryPrediction:
    """One decoder output slot: class probabilities and a box."""

    probs: tuple[float, ...]
    box: BBox

    def __post_init__(self):
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))


def build_cost_matrix(
    preds: Sequence[QueryPrediction | tuple],
    gts: Sequence,
    weights: LossWeights = LossWeights(),
    eps: float | None = None,
) -> np.ndarray:
    """Pairwise matching costs, predictions on rows and ground truths on columns.

    ``preds`` holds :class:`QueryPrediction` or ``(probs, box)`` tuples; ``gts``
    holds objects with ``class_id`` and ``box`` attributes.
    """
    preds = [p if isinstance(p, QueryPrediction) else QueryPrediction(*p) for p in preds]
    if not preds or not gts:
        raise ValidationError("need at least one prediction and one ground truth")
    out = np.empty((len(preds), len(gts)), dtype=np.float64)
    for j, gt in enumerate(gts):
        for i, pred in enumerate(preds):
            if not 0 <= gt.class_id < len(pred.probs):
                raise ValidationError(
                    f"ground truth {j} has class {gt.class_id}, outside prediction {i}'s "
                    f"{len(pred.probs)}-class probability vector"
                )
            out[i, j] = pair_cost(pred.probs[gt.class_id], pred.box, gt.box, weights, eps=eps)
    return out
