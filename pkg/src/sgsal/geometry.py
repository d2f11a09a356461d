"""Axis-aligned bounding-box algebra on normalized center-format boxes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Box", "iou", "giou", "pairwise_iou", "box_encoding",
           "boxes_to_array", "boxes_to_corners"]

_MIN_AREA = 1e-12


@dataclass(frozen=True)
class Box:
    """Normalized (cx, cy, w, h) box. Degenerate sizes are rejected at
    construction rather than clamped later."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"degenerate box size w={self.w}, h={self.h}")
        if self.w * self.h < _MIN_AREA:
            raise ValueError(f"box area below {_MIN_AREA}")

    def corners(self):
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0,
                self.cx + self.w / 2.0, self.cy + self.h / 2.0)

    @property
    def area(self):
        return self.w * self.h

    @staticmethod
    def from_corners(x1, y1, x2, y2):
        return Box((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)


def box_encoding(b):
    """(cx, cy, w, h) feature slice for concatenation into pair features."""
    return np.array([b.cx, b.cy, b.w, b.h], dtype=np.float64)


def boxes_to_array(boxes):
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([[b.cx, b.cy, b.w, b.h] for b in boxes], dtype=np.float64)


def boxes_to_corners(boxes):
    arr = boxes_to_array(boxes)
    out = np.empty_like(arr)
    out[:, 0] = arr[:, 0] - arr[:, 2] / 2.0
    out[:, 1] = arr[:, 1] - arr[:, 3] / 2.0
    out[:, 2] = arr[:, 0] + arr[:, 2] / 2.0
    out[:, 3] = arr[:, 1] + arr[:, 3] / 2.0
    return out


def _intersection(a, b):
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a, b):
    """Intersection over union; 0 for disjoint boxes."""
    inter = _intersection(a, b)
    union = a.area + b.area - inter
    return inter / union


def giou(a, b):
    """Generalized IoU: IoU - (hull - union) / hull. In (-1, 1]."""
    inter = _intersection(a, b)
    union = a.area + b.area - inter
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    hull = (max(ax2, bx2) - min(ax1, bx1)) * (max(ay2, by2) - min(ay1, by1))
    return inter / union - (hull - union) / hull


def pairwise_iou(boxes_a, boxes_b):
    """N x K matrix of IoUs, vectorized; matches the scalar op elementwise."""
    n, k = len(boxes_a), len(boxes_b)
    if n == 0 or k == 0:
        return np.zeros((n, k), dtype=np.float64)
    ca = boxes_to_corners(boxes_a)
    cb = boxes_to_corners(boxes_b)
    iw = (np.minimum(ca[:, None, 2], cb[None, :, 2])
          - np.maximum(ca[:, None, 0], cb[None, :, 0]))
    ih = (np.minimum(ca[:, None, 3], cb[None, :, 3])
          - np.maximum(ca[:, None, 1], cb[None, :, 1]))
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    # Areas from w*h, matching the scalar op bit for bit (corner differences
    # would round differently).
    aa = boxes_to_array(boxes_a)
    ab = boxes_to_array(boxes_b)
    area_a = aa[:, 2] * aa[:, 3]
    area_b = ab[:, 2] * ab[:, 3]
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union
