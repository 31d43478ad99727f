"""Axis-aligned bounding boxes in pixel coordinates."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class BBox:
    """Rectangle given by its top-left corner ``(x, y)`` and size ``(w, h)``."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"BBox.{name} must be finite, got {value!r}")
            object.__setattr__(self, name, value)
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"BBox needs positive size, got w={self.w}, h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


def intersection_area(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def union_area(a: BBox, b: BBox) -> float:
    return a.area + b.area - intersection_area(a, b)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; touching boxes give 0."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    # x2 - x can differ from w in the last ulp
    return min(inter / (a.area + b.area - inter), 1.0)


def _offsets(d) -> tuple[float, float]:
    if hasattr(d, "dx"):
        return float(d.dx), float(d.dy)
    dx, dy = d
    return float(dx), float(dy)


def translate(box: BBox, d) -> BBox:
    """Shift ``box`` by a displacement (anything with ``dx``/``dy``, or a pair)."""
    dx, dy = _offsets(d)
    return BBox(box.x + dx, box.y + dy, box.w, box.h)
