"""Scene-graph evaluation: R@K, mR@K, F@K, and pairwise-localization AP.

Evaluation is graph-constrained (at most one predicate per ordered entity
pair in the ranked list; the ranking module enforces this at candidate
construction). All matchers are greedy in score order with a stable
tie-break by input order, so permuting equal-score predictions never
changes a metric.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .geometry import iou

__all__ = ["ScoredTriplet", "MetricReport", "recall_at_k", "per_class_counts",
           "mean_recall_at_k", "f_at_k", "pl_ap", "pl_ap_dataset",
           "evaluate_dataset", "write_predictions", "read_predictions"]

DEFAULT_KS = (20, 50, 100)


@dataclass(frozen=True)
class ScoredTriplet:
    """One ranked prediction; pred is the 0-based dataset predicate id."""

    sbox: object
    sclass: int
    obox: object
    oclass: int
    pred: int
    score: float


def _sorted_desc(preds):
    # Stable: equal scores keep input order.
    return sorted(preds, key=lambda t: -t.score)


def _match(preds, gt, k, iou_thr):
    """Greedy top-k matching; returns per-GT-triplet matched flags."""
    matched = [False] * len(gt.triplets)
    for t in _sorted_desc(preds)[:k]:
        best = None
        for idx, (s, p, o) in enumerate(gt.triplets):
            if matched[idx] or p != t.pred:
                continue
            sb, sc = gt.entities[s]
            ob, oc = gt.entities[o]
            if sc != t.sclass or oc != t.oclass:
                continue
            i_s = iou(t.sbox, sb)
            i_o = iou(t.obox, ob)
            if i_s < iou_thr or i_o < iou_thr:
                continue
            quality = min(i_s, i_o)
            if best is None or quality > best[0]:
                best = (quality, idx)
        if best is not None:
            matched[best[1]] = True
    return matched


def recall_at_k(preds, gt, k, iou_thr=0.5):
    """Percent of GT triplets matched by a top-k prediction with correct
    subject/object/predicate classes and both box IoUs >= iou_thr."""
    if not gt.triplets:
        return 100.0
    matched = _match(preds, gt, k, iou_thr)
    return 100.0 * sum(matched) / len(matched)


def per_class_counts(preds, gt, k, iou_thr=0.5):
    """Per-predicate-class (matched, total) counts for one instance."""
    matched = _match(preds, gt, k, iou_thr)
    counts = {}
    for flag, (_, p, _) in zip(matched, gt.triplets):
        got, tot = counts.get(p, (0, 0))
        counts[p] = (got + int(flag), tot + 1)
    return counts


def mean_recall_at_k(preds, gt, k, iou_thr=0.5):
    """Per-predicate-class recall averaged over classes present in the GT."""
    counts = per_class_counts(preds, gt, k, iou_thr)
    if not counts:
        return 100.0
    recalls = [100.0 * got / tot for got, tot in counts.values()]
    return sum(recalls) / len(recalls)


def f_at_k(r, mr):
    """Harmonic mean of R@K and mR@K; 0 when both are 0."""
    if r + mr == 0:
        return 0.0
    return 2.0 * r * mr / (r + mr)


def _dedup_gt_pairs(gt):
    """Category-agnostic GT pairs, deduplicated by exact box equality."""
    seen = set()
    pairs = []
    for s, _, o in gt.triplets:
        sb, ob = gt.entities[s][0], gt.entities[o][0]
        key = ((sb.cx, sb.cy, sb.w, sb.h), (ob.cx, ob.cy, ob.w, ob.h))
        if key not in seen:
            seen.add(key)
            pairs.append((sb, ob))
    return pairs


def _pl_entries(preds, gt, top_n, iou_thr):
    """(score, is_tp) per top-n prediction (score order) + GT pair count."""
    pairs = _dedup_gt_pairs(gt)
    taken = [False] * len(pairs)
    entries = []
    for t in _sorted_desc(preds)[:top_n]:
        best = None
        for idx, (sb, ob) in enumerate(pairs):
            if taken[idx]:
                continue
            i_s = iou(t.sbox, sb)
            i_o = iou(t.obox, ob)
            if i_s < iou_thr or i_o < iou_thr:
                continue
            quality = min(i_s, i_o)
            if best is None or quality > best[0]:
                best = (quality, idx)
        if best is not None:
            taken[best[1]] = True
            entries.append((t.score, True))
        else:
            entries.append((t.score, False))
    return entries, len(pairs)


def _ap_from_entries(entries, n_gt):
    """Step-wise area under the precision-recall curve, in percent."""
    if n_gt == 0:
        return 100.0
    entries = sorted(entries, key=lambda e: -e[0])
    tp = 0
    area = 0.0
    prev_recall = 0.0
    for rank, (_, is_tp) in enumerate(entries, start=1):
        if not is_tp:
            continue
        tp += 1
        precision = tp / rank
        recall = tp / n_gt
        area += precision * (recall - prev_recall)
        prev_recall = recall
    return 100.0 * area


def pl_ap(preds, gt, top_n=100, iou_thr=0.5):
    """Category-agnostic AP over the top-n predictions: a prediction is a
    true positive when both its boxes overlap an unmatched GT pair at
    IoU >= iou_thr."""
    entries, n_gt = _pl_entries(preds, gt, top_n, iou_thr)
    return _ap_from_entries(entries, n_gt)


def pl_ap_dataset(per_image, top_n=100, iou_thr=0.5):
    """Dataset pl-AP: pool each image's top-n predictions (TP assignment
    stays per-image) and trace one global PR curve."""
    entries = []
    n_gt = 0
    for preds, gt in per_image:
        e, g = _pl_entries(preds, gt, top_n, iou_thr)
        entries.extend(e)
        n_gt += g
    return _ap_from_entries(entries, n_gt)


@dataclass
class MetricReport:
    recall: dict = field(default_factory=dict)       # K -> percent
    mean_recall: dict = field(default_factory=dict)  # K -> percent
    f_score: dict = field(default_factory=dict)      # K -> percent
    pl_ap: float = 0.0
    per_predicate: dict = field(default_factory=dict)  # class -> percent

    def to_json(self):
        return json.dumps({
            "R": {str(k): v for k, v in self.recall.items()},
            "mR": {str(k): v for k, v in self.mean_recall.items()},
            "F": {str(k): v for k, v in self.f_score.items()},
            "pl_AP": self.pl_ap,
            "per_predicate_R100": {str(k): v
                                   for k, v in self.per_predicate.items()},
        }, sort_keys=True)

    def table(self):
        ks = sorted(self.recall)
        lines = ["metric " + "".join(f"{('@' + str(k)):>10}" for k in ks)]
        for name, vals in (("R", self.recall), ("mR", self.mean_recall),
                           ("F", self.f_score)):
            lines.append(f"{name:<7}" + "".join(f"{vals[k]:>10.2f}"
                                                for k in ks))
        lines.append(f"pl-AP  {self.pl_ap:>10.2f}")
        return "\n".join(lines)


def evaluate_dataset(per_image, ks=DEFAULT_KS, iou_thr=0.5, top_n=100):
    """Aggregate metrics over (predictions, GT) pairs.

    R@K averages per-image recall over images with at least one GT triplet.
    mR@K aggregates per-class matched/total over the whole set, then
    averages over classes present in the GT."""
    report = MetricReport()
    for k in ks:
        image_recalls = []
        class_counts = {}
        for preds, gt in per_image:
            if not gt.triplets:
                continue
            image_recalls.append(recall_at_k(preds, gt, k, iou_thr))
            for cls, (got, tot) in per_class_counts(preds, gt, k,
                                                    iou_thr).items():
                g0, t0 = class_counts.get(cls, (0, 0))
                class_counts[cls] = (g0 + got, t0 + tot)
        r = sum(image_recalls) / len(image_recalls) if image_recalls else 0.0
        per_cls = {cls: 100.0 * got / tot
                   for cls, (got, tot) in sorted(class_counts.items())}
        mr = sum(per_cls.values()) / len(per_cls) if per_cls else 0.0
        report.recall[k] = r
        report.mean_recall[k] = mr
        report.f_score[k] = f_at_k(r, mr)
        if k == max(ks):
            report.per_predicate = per_cls
    report.pl_ap = pl_ap_dataset(per_image, top_n=top_n, iou_thr=iou_thr)
    return report


# ---------------------------------------------------------------------------
# Prediction dump files (JSON-lines, one image per line)

def write_predictions(path, per_image):
    """per_image: iterable of (image_id, list[ScoredTriplet])."""
    with open(path, "w") as fh:
        for image_id, preds in per_image:
            row = {"image_id": image_id, "triplets": [{
                "sbox": [t.sbox.cx, t.sbox.cy, t.sbox.w, t.sbox.h],
                "sclass": t.sclass,
                "obox": [t.obox.cx, t.obox.cy, t.obox.w, t.obox.h],
                "oclass": t.oclass,
                "pred": t.pred,
                "score": t.score,
            } for t in preds]}
            fh.write(json.dumps(row) + "\n")


def read_predictions(path):
    from .geometry import Box
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            preds = [ScoredTriplet(Box(*t["sbox"]), int(t["sclass"]),
                                   Box(*t["obox"]), int(t["oclass"]),
                                   int(t["pred"]), float(t["score"]))
                     for t in row["triplets"]]
            out.append((row["image_id"], preds))
    return out
