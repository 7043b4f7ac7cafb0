"""Bounding-box arithmetic and overlap metrics.

Boxes are center-size parameterized; corner coordinates are derived on
demand and never stored. Coordinates are continuous (sub-pixel) and are
not clamped to any image: predictions may legitimately leave the frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


def _require_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: center (cx, cy) and positive extent (w, h), in pixels."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        _require_finite("BBox coordinates", self.cx, self.cy, self.w, self.h)
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"BBox extent must be positive, got w={self.w} h={self.h}")

    @property
    def x1(self) -> float:
        return self.cx - self.w / 2.0

    @property
    def x2(self) -> float:
        return self.cx + self.w / 2.0

    @property
    def y1(self) -> float:
        return self.cy - self.h / 2.0

    @property
    def y2(self) -> float:
        return self.cy + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class Vec2:
    """2-D displacement in pixels (or pixels/frame when used as a velocity)."""

    dx: float
    dy: float

    def __post_init__(self):
        _require_finite("Vec2 components", self.dx, self.dy)

    @property
    def norm(self) -> float:
        return math.hypot(self.dx, self.dy)

    def unit(self) -> "Vec2":
        n = self.norm
        if n == 0.0:
            raise ValueError("cannot normalize a zero vector")
        return Vec2(self.dx / n, self.dy / n)

    def scaled(self, s: float) -> "Vec2":
        return Vec2(self.dx * s, self.dy * s)

    def dot(self, other: "Vec2") -> float:
        return self.dx * other.dx + self.dy * other.dy

    def __neg__(self) -> "Vec2":
        return Vec2(-self.dx, -self.dy)


@dataclass(frozen=True)
class PatchRegion:
    """Rectangular region of the image plane reachable by the adversarial patch."""

    bounds: BBox


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes, in [0, 1]. Zero when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    if ix <= 0.0:
        return 0.0
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iy <= 0.0:
        return 0.0
    inter = ix * iy
    # Areas from the same corner arithmetic as the intersection, so that
    # iou(b, b) is exactly 1.0.
    area_a = (a.x2 - a.x1) * (a.y2 - a.y1)
    area_b = (b.x2 - b.x1) * (b.y2 - b.y1)
    return inter / (area_a + area_b - inter)


def translate(b: BBox, d: Vec2) -> BBox:
    """Shift a box's center by d; extent unchanged."""
    return BBox(b.cx + d.dx, b.cy + d.dy, b.w, b.h)


def contains_center(candidate: BBox, point: tuple[float, float]) -> bool:
    """True iff the point lies within the candidate's extent.

    Both axes use closed intervals, so points exactly on the boundary count.
    """
    px, py = point
    return candidate.x1 <= px <= candidate.x2 and candidate.y1 <= py <= candidate.y2
