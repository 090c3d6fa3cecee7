"""Box representations, conversions and the IoU / GIoU kernels.

Boxes come in two forms. :class:`BBox` is the normalized center format used
by YOLO label files (cx, cy, w, h as fractions of the image size).
:class:`CornerBox` is (x1, y1, x2, y2) and is what the overlap arithmetic
works on. Everything is plain double-precision Python floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

from detkit.errors import ValidationError

#: Annotation rounding noise accepted (and clamped away) at construction.
BOX_TOLERANCE = 1e-6


def _check_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value!r}")
    return value


def _clamp_unit(name: str, value: float, tol: float) -> float:
    if value < -tol or value > 1.0 + tol:
        raise ValidationError(f"{name}={value!r} outside [0, 1] (tolerance {tol:g})")
    return min(max(value, 0.0), 1.0)


@dataclass(frozen=True)
class BBox:
    """Normalized center-format box.

    Construction validates the fields: each must lie in [0, 1] up to
    ``BOX_TOLERANCE`` (values inside the tolerance band are clamped) and the
    extents ``cx +/- w/2``, ``cy +/- h/2`` may leave the unit square by at
    most the same tolerance. Use :meth:`checked` for a different tolerance.
    """

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        _validate_into(self, BOX_TOLERANCE)

    @classmethod
    def checked(cls, cx: float, cy: float, w: float, h: float, tol: float = BOX_TOLERANCE) -> "BBox":
        """Build a box, clamping rounding noise up to ``tol``."""
        box = object.__new__(cls)
        object.__setattr__(box, "cx", cx)
        object.__setattr__(box, "cy", cy)
        object.__setattr__(box, "w", w)
        object.__setattr__(box, "h", h)
        _validate_into(box, tol)
        return box

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)

    @property
    def area(self) -> float:
        return self.w * self.h


def _validate_into(box: BBox, tol: float) -> None:
    vals = {}
    for name in ("cx", "cy", "w", "h"):
        vals[name] = _clamp_unit(name, _check_finite(name, getattr(box, name)), tol)
    for center, size in (("cx", "w"), ("cy", "h")):
        lo = vals[center] - vals[size] / 2
        hi = vals[center] + vals[size] / 2
        if lo < -tol or hi > 1.0 + tol:
            raise ValidationError(
                f"box extent [{lo:.9g}, {hi:.9g}] along {center[1]} leaves the image "
                f"by more than {tol:g}"
            )
    for name, value in vals.items():
        object.__setattr__(box, name, value)


@dataclass(frozen=True)
class CornerBox:
    """Corner-format box ``(x1, y1, x2, y2)`` with ``x1 <= x2`` and ``y1 <= y2``."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            object.__setattr__(self, name, _check_finite(name, getattr(self, name)))
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValidationError(f"corner box has negative extent: {self}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


AnyBox = Union[BBox, CornerBox]


def to_corners(b: BBox) -> CornerBox:
    """Convert a center-format box to corners."""
    if isinstance(b, CornerBox):
        return b
    return CornerBox(b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2)


def _intersection_union(a: CornerBox, b: CornerBox) -> tuple[float, float]:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    return inter, a.area + b.area - inter


def iou(a: AnyBox, b: AnyBox) -> float:
    """Intersection over union. Returns 0 when the union has zero area."""
    a, b = to_corners(a), to_corners(b)
    inter, union = _intersection_union(a, b)
    if union <= 0.0:
        return 0.0
    return min(inter / union, 1.0)


def giou(a: AnyBox, b: AnyBox) -> float:
    """Generalized IoU: IoU minus the uncovered fraction of the enclosing box.

    Falls back to plain IoU when the enclosing box is degenerate.
    """
    a, b = to_corners(a), to_corners(b)
    inter, union = _intersection_union(a, b)
    value = min(inter / union, 1.0) if union > 0.0 else 0.0
    enclose = (max(a.x2, b.x2) - min(a.x1, b.x1)) * (max(a.y2, b.y2) - min(a.y1, b.y1))
    if enclose <= 0.0:
        return value
    return value - max(enclose - union, 0.0) / enclose
