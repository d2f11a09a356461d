"""Optimal bipartite assignment for attaching GT labels to detections."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import giou, box_encoding

__all__ = ["Assignment", "solve", "detr_match_cost", "DEFAULT_COST_WEIGHTS"]

# (class, L1, GIoU) cost weights; the deformable-DETR convention.
DEFAULT_COST_WEIGHTS = (2.0, 5.0, 2.0)


@dataclass(frozen=True)
class Assignment:
    """One-to-one (row, col) pairs; rows/cols not listed are unmatched."""

    pairs: tuple

    def row_to_col(self):
        return {r: c for r, c in self.pairs}

    def total_cost(self, cost):
        return float(sum(cost[r][c] for r, c in self.pairs))


def _optimum(cost, rows, cols):
    """Minimum assignment cost over the given row/col index subsets."""
    k = min(len(rows), len(cols))
    if k == 0:
        return 0.0
    sub = cost[np.ix_(rows, cols)]
    r, c = linear_sum_assignment(sub)
    return float(sub[r, c].sum())


def solve(cost):
    """Minimum-cost assignment over an N x M matrix; |pairs| = min(N, M).

    Among equally optimal assignments the lexicographically smallest
    (row, col) pair list wins, found by fixing pairs greedily in index
    order and re-solving the remainder. Totals within a tiny relative
    tolerance of the optimum count as ties.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if np.isnan(cost).any():
        raise ValueError("NaN in cost matrix")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix must be finite")
    n, m = cost.shape
    if n == 0 or m == 0:
        return Assignment(())
    tol = 1e-9 * max(1.0, float(np.abs(cost).max())) * min(n, m)
    best = _optimum(cost, list(range(n)), list(range(m)))
    pairs = []
    spent = 0.0
    cols_left = list(range(m))
    for r in range(n):
        needed = min(n, m) - len(pairs)
        if needed == 0:
            break
        rows_after = list(range(r + 1, n))
        chosen = None
        for c in cols_left:
            rest = [x for x in cols_left if x != c]
            if min(len(rows_after), len(rest)) < needed - 1:
                continue
            total = spent + cost[r, c] + _optimum(cost, rows_after, rest)
            if total <= best + tol:
                chosen = c
                break
        if chosen is None:
            # leaving row r unmatched must still be optimal
            continue
        pairs.append((r, chosen))
        spent += cost[r, chosen]
        cols_left.remove(chosen)
    return Assignment(tuple(pairs))


def detr_match_cost(det, gt, weights=DEFAULT_COST_WEIGHTS):
    """DETR-style matching cost between detections and GT entities:
    cost[i][k] = w_cls*(1 - C[i][c_k]) + w_l1*||b_i - b_k||_1
               + w_giou*(1 - giou(b_i, b_k))."""
    w_cls, w_l1, w_giou = weights
    n = det.n
    k = len(gt.entities)
    cost = np.zeros((n, k), dtype=np.float64)
    det_enc = [box_encoding(b) for b in det.boxes]
    for j, (gb, gc) in enumerate(gt.entities):
        genc = box_encoding(gb)
        for i in range(n):
            c_term = 1.0 - det.class_probs[i][gc]
            l1_term = float(np.abs(det_enc[i] - genc).sum())
            g_term = 1.0 - giou(det.boxes[i], gb)
            cost[i, j] = w_cls * c_term + w_l1 * l1_term + w_giou * g_term
    return cost
