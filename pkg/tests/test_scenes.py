"""Synthetic scene generator and frozen detector stub."""

import numpy as np
import pytest

from sgsal.geometry import Box, iou, pairwise_iou
from sgsal.scenes import (SceneConfig, GroundTruthGraph, DetectedEntities,
                          classify_pair, predicate_weights, generate_scene,
                          generate_scenes, detector_stub, frozen_projection,
                          write_scenes, read_scenes, write_detections,
                          read_detections)

CFG = SceneConfig()


def test_predicate_weights_power_law():
    w = predicate_weights(CFG)
    assert abs(w.sum() - 1.0) < 1e-12
    assert np.all(np.diff(w) < 0)
    assert abs(w[0] / w[3] - 4.0 ** 1.5) < 1e-9


def test_config_validation():
    with pytest.raises(ValueError):
        SceneConfig(n_entity_classes=3)
    with pytest.raises(ValueError):
        SceneConfig(entities_min=1)
    with pytest.raises(ValueError):
        SceneConfig(jitter=-0.1)
    with pytest.raises(ValueError):
        SceneConfig(n_predicate_classes=20)


def test_graph_validation():
    box = Box(0.5, 0.5, 0.1, 0.1)
    with pytest.raises(ValueError):
        GroundTruthGraph([(box, 0)], [(0, 0, 0)])  # self relation
    with pytest.raises(ValueError):
        GroundTruthGraph([(box, 0)], [(0, 0, 5)])  # index out of range


# -- rule semantics ----------------------------------------------------------

def test_rule_inside():
    outer = Box(0.5, 0.5, 0.3, 0.3)
    inner = Box(0.5, 0.5, 0.08, 0.08)
    assert classify_pair(inner, outer, 0, 1, CFG) == 4


def test_rule_above():
    top = Box(0.5, 0.3, 0.1, 0.1)
    bottom = Box(0.5, 0.5, 0.1, 0.1)
    assert classify_pair(top, bottom, 0, 1, CFG) == 1
    # reverse direction is not "above"; it falls through to "near"
    assert classify_pair(bottom, top, 0, 1, CFG) == 0


def test_rule_left_of():
    left = Box(0.3, 0.5, 0.1, 0.1)
    right = Box(0.5, 0.5, 0.1, 0.1)
    assert classify_pair(left, right, 0, 1, CFG) == 2
    assert classify_pair(right, left, 0, 1, CFG) == 0  # reverse reads as near


def test_rule_overlapping_canonical_direction():
    a = Box(0.45, 0.5, 0.2, 0.2)
    b = Box(0.52, 0.5, 0.2, 0.2)
    assert iou(a, b) >= 0.2
    assert classify_pair(a, b, 0, 1, CFG) == 3
    assert classify_pair(b, a, 0, 1, CFG) == -1


def test_rule_near_requires_disjoint():
    a = Box(0.40, 0.40, 0.08, 0.08)
    b = Box(0.52, 0.52, 0.08, 0.08)
    assert iou(a, b) == 0.0
    assert classify_pair(a, b, 0, 1, CFG) == 0
    # beyond the distance gate
    far = Box(1.5, 1.5, 0.05, 0.05)
    assert classify_pair(a, far, 0, 1, CFG) == -1


def test_rare_class_gated_rules():
    rs, ro = CFG.rare_subject_class, CFG.rare_object_class
    a = Box(0.5, 0.5, 0.1, 0.1)
    b = Box(0.58, 0.52, 0.1, 0.1)
    assert classify_pair(a, b, rs, ro, CFG) == 5
    assert classify_pair(a, b, ro, rs, CFG) == 6  # overlap, reversed classes
    c = Box(0.8, 0.8, 0.1, 0.1)
    assert classify_pair(a, c, rs, ro, CFG) != 5  # too distant


def test_rule_priority_is_total():
    """Every ordered pair maps to at most one predicate by construction."""
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = Box(*rng.uniform(0.3, 0.7, 2), *rng.uniform(0.05, 0.3, 2))
        b = Box(*rng.uniform(0.3, 0.7, 2), *rng.uniform(0.05, 0.3, 2))
        p = classify_pair(a, b, 0, 1, CFG)
        assert -1 <= p < CFG.n_real_predicates


# -- scene sampling ----------------------------------------------------------

def test_generation_is_deterministic():
    a = generate_scenes(CFG, 20, split_seed=5)
    b = generate_scenes(CFG, 20, split_seed=5)
    for ga, gb in zip(a, b):
        assert ga.entities == gb.entities
        assert ga.triplets == gb.triplets


def test_triplets_satisfy_their_rule():
    for seed in range(100):
        gt = generate_scene(CFG, np.random.default_rng(seed))
        for s, p, o in gt.triplets:
            bs, cs = gt.entities[s]
            bo, co = gt.entities[o]
            assert classify_pair(bs, bo, cs, co, CFG) == p


def test_entity_count_in_range():
    for seed in range(50):
        gt = generate_scene(CFG, np.random.default_rng(seed))
        assert CFG.entities_min <= len(gt.entities) <= CFG.entities_max
        assert len(gt.triplets) == 1


def test_predicate_histogram_tracks_power_law():
    """Over many scenes the observed predicate frequencies stay within 10%
    of the configured power law."""
    counts = np.zeros(CFG.n_real_predicates)
    for seed in range(8000):
        gt = generate_scene(CFG, np.random.default_rng([99, seed]))
        for _, p, _ in gt.triplets:
            counts[p] += 1
    freq = counts / counts.sum()
    want = predicate_weights(CFG)
    assert np.all(np.abs(freq - want) <= 0.10 * want), (freq, want)


def test_anchor_layout():
    """The largest box (the anchor) never appears in a triplet, annotated
    pair members overlap its footprint, and fillers never touch it."""
    for seed in range(50):
        gt = generate_scene(CFG, np.random.default_rng([7, seed]))
        areas = [b.area for b in gt.boxes()]
        anchor_idx = int(np.argmax(areas))
        anchor = gt.entities[anchor_idx][0]
        in_triplet = set()
        for s, _, o in gt.triplets:
            assert anchor_idx not in (s, o)
            for b in (gt.entities[s][0], gt.entities[o][0]):
                assert iou(b, anchor) > 0.0
            in_triplet |= {s, o}
        for i, (b, _) in enumerate(gt.entities):
            if i == anchor_idx or i in in_triplet:
                continue
            assert iou(b, anchor) == 0.0


# -- detector stub -----------------------------------------------------------

def test_stub_zero_jitter_reproduces_boxes():
    cfg = SceneConfig(jitter=0.0, distractors_min=0, distractors_max=0)
    gt = generate_scene(cfg, np.random.default_rng(1))
    det = detector_stub(gt, cfg, np.random.default_rng(2))
    got = sorted((b.cx, b.cy, b.w, b.h) for b in det.boxes)
    want = sorted((b.cx, b.cy, b.w, b.h) for b in gt.boxes())
    assert got == want


def test_stub_jittered_boxes_stay_close():
    ious = []
    for seed in range(50):
        cfg = SceneConfig(distractors_min=0, distractors_max=0)
        gt = generate_scene(cfg, np.random.default_rng(seed))
        det = detector_stub(gt, cfg, np.random.default_rng(seed + 100))
        overlap = pairwise_iou(gt.boxes(), det.boxes)
        ious.extend(overlap.max(axis=1).tolist())
    assert np.mean(ious) > 0.8


def test_stub_class_probs_valid_and_peaked():
    gt = generate_scene(CFG, np.random.default_rng(3))
    det = detector_stub(gt, CFG, np.random.default_rng(4))
    assert np.allclose(det.class_probs.sum(axis=1), 1.0, atol=1e-12)
    assert det.class_probs.min() > 0.0
    # each GT entity's class is the argmax of some detection row
    det_cls = set(det.class_probs.argmax(axis=1).tolist())
    assert {c for _, c in gt.entities} <= det_cls


def test_stub_distractor_count_range():
    cfg = SceneConfig(distractors_min=2, distractors_max=2)
    gt = generate_scene(cfg, np.random.default_rng(5))
    det = detector_stub(gt, cfg, np.random.default_rng(6))
    assert det.n == len(gt.entities) + 2


def test_stub_features_deterministic_given_rng():
    gt = generate_scene(CFG, np.random.default_rng(7))
    a = detector_stub(gt, CFG, np.random.default_rng(8))
    b = detector_stub(gt, CFG, np.random.default_rng(8))
    assert np.array_equal(a.feats, b.feats)
    assert np.array_equal(a.class_probs, b.class_probs)


def test_frozen_projection_depends_only_on_seed():
    a = frozen_projection(SceneConfig(seed=3, jitter=0.5))
    b = frozen_projection(SceneConfig(seed=3))
    c = frozen_projection(SceneConfig(seed=4))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.shape == (CFG.feat_dim, CFG.n_entity_classes + 4)


def test_detected_entities_validation():
    with pytest.raises(ValueError):
        DetectedEntities([Box(0.5, 0.5, 0.1, 0.1)],
                         np.array([[0.7, 0.2]]), np.zeros((1, 4)))


# -- file round trips --------------------------------------------------------

def test_scene_file_roundtrip(tmp_path):
    scenes = generate_scenes(CFG, 5, split_seed=11)
    path = tmp_path / "scenes.jsonl"
    write_scenes(path, scenes)
    back = read_scenes(path)
    assert len(back) == 5
    for a, b in zip(scenes, back):
        assert a.entities == b.entities
        assert a.triplets == b.triplets


def test_detection_file_roundtrip(tmp_path):
    gt = generate_scene(CFG, np.random.default_rng(12))
    det = detector_stub(gt, CFG, np.random.default_rng(13))
    path = tmp_path / "det.jsonl"
    write_detections(path, [det])
    back = read_detections(path)[0]
    assert np.array_equal(back.feats, det.feats)  # bit exact via base64
    assert back.boxes == det.boxes
    assert np.allclose(back.class_probs, det.class_probs, atol=1e-15)
