"""Triplet candidate ranking, with optional salience re-ranking.

The base score of a pair (i, j) with predicate p is
max_c C[i][c] * max_c C[j][c] * softmax(G[i][j])[p]; when a salience matrix
is supplied the score is additionally multiplied by M[i][j]. Candidates are
graph-constrained: only the argmax non-background predicate of each ordered
pair enters the pool.
"""

from __future__ import annotations

import json

import numpy as np

from .geometry import Box, iou
from .metrics import ScoredTriplet

__all__ = ["score_triplets", "rerank_external",
           "write_salience_dump", "read_salience_dump"]


def score_triplets(det, g_logits, m=None, k_out=100):
    """Rank triplet candidates for one image. m=None is the baseline mode
    (equivalent to an all-ones salience matrix). Ties break by (i, j, p)."""
    if k_out <= 0:
        raise ValueError("k_out must be positive")
    n = det.n
    if n < 2:
        return []
    g = np.asarray(g_logits, dtype=np.float64)
    shifted = g - g.max(axis=2, keepdims=True)
    sm = np.exp(shifted)
    sm /= sm.sum(axis=2, keepdims=True)
    rel = sm[:, :, 1:]  # class 0 is "no relation"
    best_p = rel.argmax(axis=2)
    best_prob = rel.max(axis=2)
    conf = det.class_probs.max(axis=1)
    cls = det.class_probs.argmax(axis=1)
    score = conf[:, None] * conf[None, :] * best_prob
    if m is not None:
        score = score * np.asarray(m, dtype=np.float64)
    np.fill_diagonal(score, -np.inf)
    ii, jj = np.nonzero(np.isfinite(score))
    ss = score[ii, jj]
    pp = best_p[ii, jj]
    order = np.lexsort((pp, jj, ii, -ss))[:k_out]
    return [ScoredTriplet(det.boxes[ii[k]], int(cls[ii[k]]),
                          det.boxes[jj[k]], int(cls[jj[k]]),
                          int(pp[k]), float(ss[k]))
            for k in order]


def _lookup_salience(triplet, pairs, iou_thr=0.5):
    best = None
    for sbox, obox, value in pairs:
        q = min(iou(triplet.sbox, sbox), iou(triplet.obox, obox))
        if q >= iou_thr and (best is None or q > best[0]):
            best = (q, value)
    return None if best is None else best[1]


def rerank_external(per_image, salience, iou_thr=0.5):
    """Re-rank externally produced predictions by multiplying scores with
    matched salience values. salience maps image_id to a list of
    (sbox, obox, value) entries; images without an entry pass through."""
    out = []
    for image_id, preds in per_image:
        pairs = salience.get(image_id)
        if not pairs:
            out.append((image_id, list(preds)))
            continue
        rescored = []
        for t in preds:
            value = _lookup_salience(t, pairs, iou_thr)
            score = t.score if value is None else t.score * value
            rescored.append(ScoredTriplet(t.sbox, t.sclass, t.obox, t.oclass,
                                          t.pred, score))
        rescored.sort(key=lambda t: -t.score)  # stable
        out.append((image_id, rescored))
    return out


def write_salience_dump(path, per_image):
    """per_image: iterable of (image_id, list[(sbox, obox, value)])."""
    with open(path, "w") as fh:
        for image_id, pairs in per_image:
            row = {"image_id": image_id, "pairs": [{
                "sbox": [s.cx, s.cy, s.w, s.h],
                "obox": [o.cx, o.cy, o.w, o.h],
                "m": float(v),
            } for s, o, v in pairs]}
            fh.write(json.dumps(row) + "\n")


def read_salience_dump(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            out[row["image_id"]] = [(Box(*p["sbox"]), Box(*p["obox"]),
                                     float(p["m"])) for p in row["pairs"]]
    return out
