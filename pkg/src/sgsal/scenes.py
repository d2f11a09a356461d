"""Synthetic scene generation and the frozen detector stub.

Scenes are desk-scale: a handful of entities whose annotated predicates are
deterministic functions of box geometry (and, for the two rarest predicates,
of a specific rare class pair). Predicate frequencies follow a configurable
power law, which is what gives the data its long tail.

Each scene is organized around an anchor: one large entity whose surrounding
structure is what the annotations describe. Annotated pairs are built inside
the anchor's footprint; the remaining entities are scattered across the rest
of the scene window and fire the same geometric rules incidentally. Pair
geometry alone therefore says little about whether a pair is annotated; what
matters is where the pair sits relative to the anchor, which is a property
of the scene as a whole rather than of the pair in isolation.

The detector stub emits jittered copies of the ground-truth entities plus
distractor boxes, with features from a projection frozen per seed.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from .geometry import Box, box_encoding, iou

__all__ = [
    "SceneConfig",
    "GroundTruthGraph",
    "DetectedEntities",
    "PREDICATE_NAMES",
    "classify_pair",
    "predicate_weights",
    "generate_scene",
    "generate_scenes",
    "frozen_projection",
    "detector_stub",
    "write_scenes",
    "read_scenes",
    "write_detections",
    "read_detections",
]

# Real predicate classes, in dataset id order (most to least frequent under
# the power law). Ids 5 and 6 are gated on the rare entity class pair and
# only ever appear there.
PREDICATE_NAMES = ["near", "above", "left_of", "overlapping", "inside",
                   "paired", "linked"]


@dataclass(frozen=True)
class SceneConfig:
    n_entity_classes: int = 10
    n_predicate_classes: int = 8  # includes class 0 = no relation
    entities_min: int = 4
    entities_max: int = 10
    skew: float = 1.5
    jitter: float = 0.02
    distractors_min: int = 0
    distractors_max: int = 4
    feat_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.n_entity_classes < 4:
            raise ValueError("need at least 4 entity classes")
        if not 2 <= self.n_predicate_classes - 1 <= len(PREDICATE_NAMES):
            raise ValueError("unsupported predicate class count")
        if self.entities_min < 2 or self.entities_max < self.entities_min:
            raise ValueError("bad entity count range")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")

    @property
    def n_real_predicates(self):
        return self.n_predicate_classes - 1

    @property
    def rare_subject_class(self):
        return self.n_entity_classes - 2

    @property
    def rare_object_class(self):
        return self.n_entity_classes - 1

    def to_dict(self):
        return asdict(self)

    @staticmethod
    def from_dict(d):
        return SceneConfig(**d)


@dataclass
class GroundTruthGraph:
    """Annotated entities (box, class) and (subject, predicate, object)
    triplets with 0-based predicate ids."""

    entities: list  # list[(Box, int)]
    triplets: list  # list[(int, int, int)]

    def __post_init__(self):
        n = len(self.entities)
        for s, p, o in self.triplets:
            if s == o:
                raise ValueError("triplet subject equals object")
            if not (0 <= s < n and 0 <= o < n):
                raise ValueError("triplet entity index out of range")
            if p < 0:
                raise ValueError("negative predicate id")

    def boxes(self):
        return [b for b, _ in self.entities]

    def classes(self):
        return [c for _, c in self.entities]

    def subject_boxes(self):
        return [self.entities[s][0] for s, _, _ in self.triplets]

    def object_boxes(self):
        return [self.entities[o][0] for _, _, o in self.triplets]


@dataclass
class DetectedEntities:
    """Frozen detector output: boxes, class probability rows, features."""

    boxes: list                 # list[Box], length N_e
    class_probs: np.ndarray     # (N_e, N_c), rows sum to 1
    feats: np.ndarray           # (N_e, d)

    def __post_init__(self):
        n = len(self.boxes)
        if self.class_probs.shape[0] != n or self.feats.shape[0] != n:
            raise ValueError("inconsistent detection row counts")
        if n and not np.allclose(self.class_probs.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("class probability rows must sum to 1")

    @property
    def n(self):
        return len(self.boxes)


def predicate_weights(cfg):
    """Power-law frequencies over real predicate ids: w_p ~ (p+1)^-skew."""
    k = cfg.n_real_predicates
    w = np.array([(p + 1) ** -cfg.skew for p in range(k)], dtype=np.float64)
    return w / w.sum()


def _x_overlap(a, b):
    ax1, _, ax2, _ = a.corners()
    bx1, _, bx2, _ = b.corners()
    return min(ax2, bx2) - max(ax1, bx1)


def _y_overlap(a, b):
    _, ay1, _, ay2 = a.corners()
    _, by1, _, by2 = b.corners()
    return min(ay2, by2) - max(ay1, by1)


def _containment(inner, outer):
    ix1, iy1, ix2, iy2 = inner.corners()
    ox1, oy1, ox2, oy2 = outer.corners()
    iw = min(ix2, ox2) - max(ix1, ox1)
    ih = min(iy2, oy2) - max(iy1, oy1)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih / inner.area


def _center_dist(a, b):
    return math.hypot(a.cx - b.cx, a.cy - b.cy)


RULE_DIST = 1.0  # distance gate shared by the directional/nearby rules


def classify_pair(bs, bo, cs, co, cfg):
    """The single source of truth for synthetic predicates: returns the
    0-based real predicate id for a (subject, object) pair, or -1 when no
    rule fires. Rules are checked in a fixed priority order so the result
    is unique, and symmetric configurations are canonically directed
    (subject left of / above the object) so direction is never ambiguous."""
    k = cfg.n_real_predicates
    if k > 5 and cs == cfg.rare_subject_class and co == cfg.rare_object_class \
            and _center_dist(bs, bo) <= 0.15:
        return 5
    if k > 6 and cs == cfg.rare_object_class and co == cfg.rare_subject_class \
            and iou(bs, bo) >= 0.05:
        return 6
    if k > 4 and _containment(bs, bo) >= 0.9:
        return 4
    if k > 3 and iou(bs, bo) >= 0.2 and (bs.cx, bs.cy) <= (bo.cx, bo.cy):
        return 3
    d = _center_dist(bs, bo)
    if k > 1 and _y_overlap(bs, bo) <= 0 and bs.cy < bo.cy \
            and _x_overlap(bs, bo) > 0 and d <= RULE_DIST:
        return 1
    if k > 2 and _x_overlap(bs, bo) <= 0 and bs.cx < bo.cx \
            and _y_overlap(bs, bo) > 0 and d <= RULE_DIST:
        return 2
    # Proximity is symmetric, so "near" fires for both orderings of a
    # disjoint pair; the annotated direction is whichever the scene sampler
    # chose.
    if iou(bs, bo) == 0.0 and d <= RULE_DIST:
        return 0
    return -1


def _rand_box_in(rng, win, smin, smax):
    x0, y0, x1, y1 = win
    w = rng.uniform(smin, smax)
    h = rng.uniform(smin, smax)
    w = min(w, x1 - x0)
    h = min(h, y1 - y0)
    # The clamp above can collapse the center range to a point.
    cx = rng.uniform(x0 + w / 2.0, max(x0 + w / 2.0, x1 - w / 2.0))
    cy = rng.uniform(y0 + h / 2.0, max(y0 + h / 2.0, y1 - h / 2.0))
    return Box(cx, cy, w, h)


# Annotated pairs are drawn from the same distribution as incidental ones:
# for the frequent rules the sampler draws uniform box pairs and rejects
# until the requested rule fires, so an annotated pair's own geometry is
# statistically identical to that of the incidental pairs firing the same
# rule elsewhere in the scene. The constructors below remain as direct
# samplers for the rules too rare to hit by rejection (inside, the two
# class-gated predicates) and as a fallback. The annotation signal lives in
# where the pair sits (on the anchor), not in how the pair is shaped.

MEMBER_SIZE = (0.04, 0.14)  # box side range shared by pair members, fillers


def _construct_inside(rng, win):
    bo = _rand_box_in(rng, win, 0.10, 0.14)
    w = bo.w * rng.uniform(0.22, 0.6)
    h = bo.h * rng.uniform(0.22, 0.6)
    x1, y1, x2, y2 = bo.corners()
    cx = rng.uniform(x1 + w / 2.0, x2 - w / 2.0)
    cy = rng.uniform(y1 + h / 2.0, y2 - h / 2.0)
    return Box(cx, cy, w, h), bo


def _construct_above(rng, win):
    ws, hs = rng.uniform(*MEMBER_SIZE), rng.uniform(*MEMBER_SIZE)
    wo, ho = rng.uniform(*MEMBER_SIZE), rng.uniform(*MEMBER_SIZE)
    gap = rng.uniform(0.004, 0.18)
    x0, y0, x1, y1 = win
    cys = rng.uniform(y0 + hs / 2.0, max(y0 + hs / 2.0 + 1e-6,
                                         y1 - hs / 2.0 - gap - ho))
    cyo = cys + hs / 2.0 + gap + ho / 2.0
    cxs = rng.uniform(x0 + ws / 2.0, x1 - ws / 2.0)
    shift = rng.uniform(-0.9, 0.9) * (ws + wo) / 2.0
    cxo = min(max(cxs + shift, x0 + wo / 2.0), x1 - wo / 2.0)
    return Box(cxs, cys, ws, hs), Box(cxo, cyo, wo, ho)


def _construct_left_of(rng, win):
    hs, ws = rng.uniform(*MEMBER_SIZE), rng.uniform(*MEMBER_SIZE)
    ho, wo = rng.uniform(*MEMBER_SIZE), rng.uniform(*MEMBER_SIZE)
    gap = rng.uniform(0.004, 0.18)
    x0, y0, x1, y1 = win
    cxs = rng.uniform(x0 + ws / 2.0, max(x0 + ws / 2.0 + 1e-6,
                                         x1 - ws / 2.0 - gap - wo))
    cxo = cxs + ws / 2.0 + gap + wo / 2.0
    cys = rng.uniform(y0 + hs / 2.0, y1 - hs / 2.0)
    shift = rng.uniform(-0.9, 0.9) * (hs + ho) / 2.0
    cyo = min(max(cys + shift, y0 + ho / 2.0), y1 - ho / 2.0)
    return Box(cxs, cys, ws, hs), Box(cxo, cyo, wo, ho)


def _overlapping_boxes(rng, win):
    ws, hs = rng.uniform(0.05, 0.16), rng.uniform(0.05, 0.16)
    wo, ho = rng.uniform(0.05, 0.16), rng.uniform(0.05, 0.16)
    dx = rng.uniform(0.0, 0.8) * (ws + wo) / 2.0
    dy = rng.uniform(0.0, 0.5) * (hs + ho) / 2.0
    x0, y0, x1, y1 = win
    cxs = rng.uniform(x0 + ws / 2.0, max(x0 + ws / 2.0 + 1e-6,
                                         x1 - ws / 2.0 - dx))
    cys = rng.uniform(y0 + hs / 2.0, max(y0 + hs / 2.0 + 1e-6,
                                         y1 - hs / 2.0 - dy))
    return Box(cxs, cys, ws, hs), Box(cxs + dx, cys + dy, wo, ho)


def _construct_near(rng, win):
    # Diagonal offset keeps the pair disjoint on both axes, so the
    # directional rules cannot fire first.
    ws, hs = rng.uniform(*MEMBER_SIZE), rng.uniform(*MEMBER_SIZE)
    wo, ho = rng.uniform(*MEMBER_SIZE), rng.uniform(*MEMBER_SIZE)
    dx = (ws + wo) / 2.0 + rng.uniform(0.004, 0.12)
    dy = (hs + ho) / 2.0 + rng.uniform(0.004, 0.12)
    x0, y0, x1, y1 = win
    cxs = rng.uniform(x0 + ws / 2.0, max(x0 + ws / 2.0 + 1e-6,
                                         x1 - ws / 2.0 - dx))
    cys = rng.uniform(y0 + hs / 2.0, max(y0 + hs / 2.0 + 1e-6,
                                         y1 - hs / 2.0 - dy))
    return Box(cxs, cys, ws, hs), Box(cxs + dx, cys + dy, wo, ho)


def _construct_paired(rng, win):
    ws, hs = rng.uniform(*MEMBER_SIZE), rng.uniform(*MEMBER_SIZE)
    wo, ho = rng.uniform(*MEMBER_SIZE), rng.uniform(*MEMBER_SIZE)
    dist = rng.uniform(0.02, 0.145)
    ang = rng.uniform(0.0, 2.0 * math.pi)
    x0, y0, x1, y1 = win
    cxs = rng.uniform(x0 + 0.15, max(x0 + 0.15 + 1e-6, x1 - 0.15))
    cys = rng.uniform(y0 + 0.15, max(y0 + 0.15 + 1e-6, y1 - 0.15))
    return (Box(cxs, cys, ws, hs),
            Box(cxs + dist * math.cos(ang), cys + dist * math.sin(ang), wo, ho))


_CONSTRUCTORS = {
    0: _construct_near,
    1: _construct_above,
    2: _construct_left_of,
    3: _overlapping_boxes,
    4: _construct_inside,
    5: _construct_paired,
    6: _overlapping_boxes,
}


def _sample_triplet(p, cfg, rng, win):
    if p == 5:
        cs, co = cfg.rare_subject_class, cfg.rare_object_class
    elif p == 6:
        cs, co = cfg.rare_object_class, cfg.rare_subject_class
    else:
        cs = int(rng.integers(0, cfg.n_entity_classes - 2))
        co = int(rng.integers(0, cfg.n_entity_classes - 2))
    if p <= 3:
        # Rejection from the incidental-pair distribution: two independent
        # uniform boxes, kept only when the requested rule fires. This
        # makes annotated pair geometry match incidental pair geometry.
        for _ in range(400):
            bs = _rand_box_in(rng, win, *MEMBER_SIZE)
            bo = _rand_box_in(rng, win, *MEMBER_SIZE)
            if classify_pair(bs, bo, cs, co, cfg) == p:
                return bs, cs, bo, co
    for _ in range(100):
        bs, bo = _CONSTRUCTORS[p](rng, win)
        if classify_pair(bs, bo, cs, co, cfg) == p:
            return bs, cs, bo, co
    raise RuntimeError(f"could not construct a pair for predicate {p}")


ANCHOR_FRAC = (0.42, 0.58)  # anchor share of the window along the split
ANCHOR_INSET = 0.012        # gap between the anchor box and its region


def _split_window(win, rng):
    """Split the scene window into an anchor half and a filler half along
    a random axis at a random fraction."""
    x0, y0, x1, y1 = win
    frac = rng.uniform(*ANCHOR_FRAC)
    if rng.integers(2):  # vertical split
        xm = x0 + frac * (x1 - x0)
        a, b = (x0, y0, xm, y1), (xm, y0, x1, y1)
    else:                # horizontal split
        ym = y0 + frac * (y1 - y0)
        a, b = (x0, y0, x1, ym), (x0, ym, x1, y1)
    if rng.integers(2):
        a, b = b, a
    return a, b


def _region_box(region, inset):
    x0, y0, x1, y1 = region
    return Box((x0 + x1) / 2.0, (y0 + y1) / 2.0,
               (x1 - x0) - 2.0 * inset, (y1 - y0) - 2.0 * inset)


def _filler_box(rng, region, anchor):
    """A background entity in the filler half, never touching the anchor."""
    for _ in range(60):
        b = _rand_box_in(rng, region, *MEMBER_SIZE)
        if _x_overlap(b, anchor) <= 0 or _y_overlap(b, anchor) <= 0:
            return b
    return b


def generate_scene(cfg, rng):
    """Sample one scene: entities plus geometry-consistent triplets whose
    predicate frequencies follow the configured power law.

    Each scene window is split into two halves. One half is covered by a
    single large anchor entity; the annotated triplet pairs live on the
    anchor's footprint, while filler entities occupy the other half and
    fire the same geometric rules purely incidentally. Because annotated
    pairs are rejection-sampled from the same box distribution as fillers,
    a pair in isolation carries almost no evidence of being annotated;
    resolving the ambiguity requires relating the pair to the rest of the
    scene, which is what the salience labels supervise."""
    n = int(rng.integers(cfg.entities_min, cfg.entities_max + 1))
    weights = predicate_weights(cfg)
    s = rng.uniform(0.5, 0.7)
    wx = rng.uniform(0.0, 1.0 - s)
    wy = rng.uniform(0.0, 1.0 - s)
    win = (wx, wy, wx + s, wy + s)
    # One annotated triplet per scene: the anchor relation is then the only
    # contextual difference between the annotated pair and the indistinct
    # crowd in the filler half.
    t = 1
    anchor_half, filler_half = _split_window(win, rng)
    anchor = _region_box(anchor_half, ANCHOR_INSET)
    entities = [(anchor, int(rng.integers(0, cfg.n_entity_classes)))]
    triplets = []
    local = anchor.corners()
    for _ in range(t):
        p = int(rng.choice(cfg.n_real_predicates, p=weights))
        bs, cs, bo, co = _sample_triplet(p, cfg, rng, local)
        triplets.append((len(entities), p, len(entities) + 1))
        entities.append((bs, cs))
        entities.append((bo, co))
    while len(entities) < n:
        entities.append((_filler_box(rng, filler_half, anchor),
                         int(rng.integers(0, cfg.n_entity_classes))))
    perm = rng.permutation(len(entities))
    inv = np.argsort(perm)
    entities = [entities[i] for i in perm]
    triplets = [(int(inv[s]), p, int(inv[o])) for s, p, o in triplets]
    gt = GroundTruthGraph(entities, triplets)
    for s, p, o in gt.triplets:
        bs, cs = gt.entities[s]
        bo, co = gt.entities[o]
        assert classify_pair(bs, bo, cs, co, cfg) == p, "rule self-validation"
    return gt


def generate_scenes(cfg, count, split_seed):
    """Deterministic scene list: scene i uses rng seeded by (split_seed, i)."""
    return [generate_scene(cfg, np.random.default_rng([split_seed, i]))
            for i in range(count)]


def frozen_projection(cfg):
    """The stub detector's fixed feature projection, derived from the config
    seed only (mirrors a pretrained, frozen backbone)."""
    rng = np.random.default_rng([cfg.seed, 0xF407])
    fan_in = cfg.n_entity_classes + 4
    # Orthonormal columns keep the descriptor recoverable from the features
    # (well conditioned, unlike a plain Gaussian draw); the box-encoding
    # columns are emphasized so geometry is prominent in feature space.
    raw = rng.normal(size=(cfg.feat_dim, fan_in))
    if cfg.feat_dim >= fan_in:
        q, _ = np.linalg.qr(raw)
    else:
        q, _ = np.linalg.qr(raw.T)
        q = q.T
    scale = np.ones(fan_in)
    scale[cfg.n_entity_classes:] = 2.0
    return q * scale[None, :]


def _smoothed_probs(cls, n_classes, rng):
    probs = 0.05 + 0.1 * rng.random(n_classes)
    probs[cls] += 1.0
    return probs / probs.sum()


def detector_stub(gt, cfg, rng, w_frozen=None):
    """Emit one jittered detection per GT entity plus random distractors."""
    if w_frozen is None:
        w_frozen = frozen_projection(cfg)
    boxes = []
    classes = []
    for b, c in gt.entities:
        # Center jitter is relative to box size so small boxes keep
        # roughly the same IoU with their source as large ones.
        cx = b.cx + cfg.jitter * b.w * rng.normal()
        cy = b.cy + cfg.jitter * b.h * rng.normal()
        w = b.w * math.exp(cfg.jitter * rng.normal())
        h = b.h * math.exp(cfg.jitter * rng.normal())
        boxes.append(Box(cx, cy, w, h))
        classes.append(c)
    n_dis = int(rng.integers(cfg.distractors_min, cfg.distractors_max + 1))
    if n_dis:
        # Distractors land inside the occupied region of the scene so they
        # produce plausible-looking pairs rather than isolated boxes.
        corners = np.array([b.corners() for b, _ in gt.entities])
        win = (max(0.0, corners[:, 0].min()), max(0.0, corners[:, 1].min()),
               min(1.0, corners[:, 2].max()), min(1.0, corners[:, 3].max()))
        for _ in range(n_dis):
            boxes.append(_rand_box_in(rng, win, 0.04, 0.14))
            classes.append(int(rng.integers(0, cfg.n_entity_classes)))
    n = len(boxes)
    probs = np.stack([_smoothed_probs(c, cfg.n_entity_classes, rng)
                      for c in classes])
    feats = np.empty((n, cfg.feat_dim))
    for i in range(n):
        onehot = np.zeros(cfg.n_entity_classes)
        onehot[classes[i]] = 1.0
        desc = np.concatenate([onehot, box_encoding(boxes[i])])
        feats[i] = w_frozen @ desc + 0.05 * rng.normal(size=cfg.feat_dim)
    perm = rng.permutation(n)
    return DetectedEntities([boxes[i] for i in perm], probs[perm], feats[perm])


# ---------------------------------------------------------------------------
# JSON-lines dataset files

def _scene_to_json(gt):
    return {
        "entities": [{"box": [b.cx, b.cy, b.w, b.h], "class": c}
                     for b, c in gt.entities],
        "triplets": [[s, p, o] for s, p, o in gt.triplets],
    }


def _scene_from_json(obj):
    entities = [(Box(*e["box"]), int(e["class"])) for e in obj["entities"]]
    triplets = [tuple(t) for t in obj["triplets"]]
    return GroundTruthGraph(entities, triplets)


def write_scenes(path, scenes):
    with open(path, "w") as fh:
        for gt in scenes:
            fh.write(json.dumps(_scene_to_json(gt)) + "\n")


def read_scenes(path):
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(_scene_from_json(json.loads(line)))
    return out


def write_detections(path, detections):
    with open(path, "w") as fh:
        for det in detections:
            rows = []
            for i, b in enumerate(det.boxes):
                q = np.ascontiguousarray(det.feats[i], dtype="<f8")
                rows.append({
                    "box": [b.cx, b.cy, b.w, b.h],
                    "classes": det.class_probs[i].tolist(),
                    "feat": base64.b64encode(q.tobytes()).decode("ascii"),
                })
            fh.write(json.dumps({"entities": rows}) + "\n")


def read_detections(path):
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            boxes, probs, feats = [], [], []
            for row in obj["entities"]:
                boxes.append(Box(*row["box"]))
                probs.append(row["classes"])
                raw = base64.b64decode(row["feat"])
                feats.append(np.frombuffer(raw, dtype="<f8").astype(np.float64))
            out.append(DetectedEntities(
                boxes,
                np.array(probs, dtype=np.float64),
                np.stack(feats) if feats else np.zeros((0, 0)),
            ))
    return out
