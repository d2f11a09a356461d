"""Bottom-up triplet salience labels and matched predicate labels.

Salience labels are semantic-agnostic: a detected pair (i, j) is salient
iff, for some annotated triplet, the subject box of the pair overlaps the
annotated subject and the object box overlaps the annotated object, both at
IoU >= the threshold. Entity and predicate classes are never consulted.
"""

from __future__ import annotations

import numpy as np

from .geometry import pairwise_iou

__all__ = ["DEFAULT_SALIENCE_THRESHOLD", "build_salience_labels",
           "build_predicate_labels", "sample_predicate_pairs"]

DEFAULT_SALIENCE_THRESHOLD = 0.6


def build_salience_labels(det_boxes, gt, thresh=DEFAULT_SALIENCE_THRESHOLD):
    """N_e x N_e binary salience labels. Diagonal (self-pairs) is forced 0.
    An empty GT triplet list yields all zeros."""
    if not (0.0 < thresh <= 1.0):
        raise ValueError("salience threshold must be in (0, 1]")
    n = len(det_boxes)
    labels = np.zeros((n, n), dtype=np.int8)
    if n == 0 or not gt.triplets:
        return labels
    m_sub = pairwise_iou(det_boxes, gt.subject_boxes()) >= thresh
    m_obj = pairwise_iou(det_boxes, gt.object_boxes()) >= thresh
    hit = np.any(m_sub[:, None, :] & m_obj[None, :, :], axis=2)
    labels[hit] = 1
    np.fill_diagonal(labels, 0)
    return labels


def build_predicate_labels(assignment, gt, n_det):
    """N_e x N_e integer labels: 0 = no relation, otherwise GT predicate
    class + 1 for detection pairs whose matched GT entities form an
    annotated triplet. Multi-predicate GT pairs collapse to the smallest
    class id."""
    adjacency = {}
    for s, p, o in gt.triplets:
        key = (s, o)
        if key not in adjacency or p < adjacency[key]:
            adjacency[key] = p
    det_to_gt = assignment.row_to_col()
    labels = np.zeros((n_det, n_det), dtype=np.int64)
    for i, x in det_to_gt.items():
        for j, y in det_to_gt.items():
            if i == j:
                continue
            p = adjacency.get((x, y))
            if p is not None:
                labels[i, j] = p + 1
    return labels


def sample_predicate_pairs(pred_labels, rng, neg_ratio=3):
    """Training pairs for the predicate loss: every positive pair plus up to
    neg_ratio times as many randomly sampled no-relation pairs (off-diagonal).
    Returns (pairs array (B, 2), label array (B,))."""
    n = pred_labels.shape[0]
    pos = np.argwhere(pred_labels > 0)
    off_diag = ~np.eye(n, dtype=bool)
    neg = np.argwhere((pred_labels == 0) & off_diag)
    n_neg = min(len(neg), max(1, neg_ratio * max(1, len(pos))))
    if len(neg) > 0:
        picked = rng.choice(len(neg), size=n_neg, replace=False)
        neg = neg[picked]
    pairs = np.concatenate([pos, neg], axis=0) if len(pos) else neg
    labels = pred_labels[pairs[:, 0], pairs[:, 1]] if len(pairs) else \
        np.zeros(0, dtype=np.int64)
    return pairs, labels
