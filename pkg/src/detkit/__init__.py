"""Detection evaluation, set-prediction losses and latency benchmarking."""

from detkit.errors import DetkitError, DomainError, ParseError, UsageError, ValidationError
from detkit.geometry import BBox, CornerBox, giou, iou, to_corners
from detkit.losses import LossWeights, MatchedPair, focal_cls_loss, giou_loss, l1_box_loss, total_loss
from detkit.matching import Assignment, build_cost_matrix, hungarian, pair_cost
from detkit.metrics import Detection, EvalReport, GroundTruth, average_precision, confusion_matrix, evaluate

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "BBox",
    "CornerBox",
    "Detection",
    "DetkitError",
    "DomainError",
    "EvalReport",
    "GroundTruth",
    "LossWeights",
    "MatchedPair",
    "ParseError",
    "UsageError",
    "ValidationError",
    "average_precision",
    "build_cost_matrix",
    "confusion_matrix",
    "evaluate",
    "focal_cls_loss",
    "giou",
    "giou_loss",
    "hungarian",
    "iou",
    "l1_box_loss",
    "pair_cost",
    "to_corners",
    "total_loss",
]
