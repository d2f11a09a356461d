"""Box algebra: IoU, GIoU, and the vectorized pairwise IoU."""

import numpy as np
import pytest

from sgsal.geometry import Box, iou, giou, pairwise_iou, box_encoding


def test_iou_half_overlap_hand_value():
    a = Box.from_corners(0.0, 0.0, 1.0, 1.0)
    b = Box.from_corners(0.5, 0.0, 1.5, 1.0)
    assert abs(iou(a, b) - 1.0 / 3.0) < 1e-12


def test_iou_identical_and_disjoint():
    a = Box(0.3, 0.3, 0.2, 0.2)
    assert abs(iou(a, a) - 1.0) < 1e-12
    b = Box(0.8, 0.8, 0.1, 0.1)
    assert iou(a, b) == 0.0


def test_iou_symmetric_and_bounded():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = Box(*rng.uniform(0.2, 0.8, 2), *rng.uniform(0.05, 0.4, 2))
        b = Box(*rng.uniform(0.2, 0.8, 2), *rng.uniform(0.05, 0.4, 2))
        v = iou(a, b)
        assert 0.0 <= v <= 1.0
        assert v == iou(b, a)
        assert giou(a, b) <= v + 1e-12


def test_giou_touching_boxes_is_zero():
    a = Box.from_corners(0.0, 0.0, 1.0, 1.0)
    b = Box.from_corners(1.0, 0.0, 2.0, 1.0)
    assert abs(giou(a, b)) < 1e-12


def test_giou_identical_is_one():
    a = Box(0.5, 0.5, 0.3, 0.3)
    assert abs(giou(a, a) - 1.0) < 1e-12


def test_degenerate_box_rejected():
    with pytest.raises(ValueError):
        Box(0.5, 0.5, 0.0, 0.1)
    with pytest.raises(ValueError):
        Box(0.5, 0.5, 1e-7, 1e-7)


def test_pairwise_iou_matches_scalar_oracle():
    rng = np.random.default_rng(1)
    boxes_a = [Box(*rng.uniform(0.2, 0.8, 2), *rng.uniform(0.05, 0.4, 2))
               for _ in range(40)]
    boxes_b = [Box(*rng.uniform(0.2, 0.8, 2), *rng.uniform(0.05, 0.4, 2))
               for _ in range(25)]
    mat = pairwise_iou(boxes_a, boxes_b)
    assert mat.shape == (40, 25)
    # 1000 pairs, exact agreement with the scalar op
    for i in range(40):
        for j in range(25):
            assert mat[i, j] == iou(boxes_a[i], boxes_b[j])


def test_pairwise_iou_diagonal_of_ones():
    rng = np.random.default_rng(2)
    boxes = [Box(*rng.uniform(0.2, 0.8, 2), *rng.uniform(0.05, 0.4, 2))
             for _ in range(10)]
    mat = pairwise_iou(boxes, boxes)
    assert np.allclose(np.diag(mat), np.ones(10), atol=1e-12)


def test_pairwise_iou_empty():
    assert pairwise_iou([], [Box(0.5, 0.5, 0.1, 0.1)]).shape == (0, 1)


def test_box_encoding_order():
    assert np.array_equal(box_encoding(Box(0.1, 0.2, 0.3, 0.4)),
                          [0.1, 0.2, 0.3, 0.4])


def test_corner_roundtrip():
    a = Box(0.4, 0.6, 0.2, 0.1)
    b = Box.from_corners(*a.corners())
    assert abs(b.cx - a.cx) < 1e-12 and abs(b.cy - a.cy) < 1e-12
    assert abs(b.w - a.w) < 1e-12 and abs(b.h - a.h) < 1e-12
