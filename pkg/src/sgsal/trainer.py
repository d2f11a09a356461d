"""Joint training of the predicate decoder and the salience decoder on
stub-detector outputs, plus evaluation over a scene list.

The detector is frozen: its outputs are a deterministic function of the
ground truth, the scene config, and a stub seed, so train and eval always
see identical detections for the same split.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint, load_checkpoint
from .decoder import PredicateDecoder
from .geometry import pairwise_iou
from .isd import IterativeSalienceDecoder
from .labels import (build_salience_labels, build_predicate_labels,
                     sample_predicate_pairs)
from .losses import SeesawState, total_loss
from .matching import detr_match_cost, solve
from .metrics import evaluate_dataset
from .optim import AdamW
from .geometry import boxes_to_array
from .ranking import score_triplets
from .scenes import (SceneConfig, DetectedEntities, detector_stub,
                     frozen_projection)

__all__ = ["TrainConfig", "SalienceModel", "PreparedScene", "prepare_scene",
           "prepare_scenes", "canonical_entity_order", "train", "evaluate",
           "save_model", "load_model"]


def canonical_entity_order(det):
    """Deterministic entity ordering derived from the detection content.

    The model computes in this internal order and maps results back, which
    makes every output an exact function of the detection set rather than
    of its row order (row position can otherwise leak into the last bits
    through blocked matrix-multiply kernels)."""
    arr = boxes_to_array(det.boxes)
    keys = [det.feats[:, k] for k in range(det.feats.shape[1] - 1, -1, -1)]
    keys += [arr[:, 3], arr[:, 2], arr[:, 1], arr[:, 0]]
    return np.lexsort(keys)


@dataclass(frozen=True)
class TrainConfig:
    layers: int = 4
    heads: int = 2
    embed_dim: int = 16
    salience_thresh: float = 0.6
    alpha: float = 1.0            # seesaw compensation exponent
    beta: float = 0.2             # seesaw mitigation exponent
    focal_gamma: float = 2.0
    # positives are a few percent of ordered pairs, so they get the heavy
    # side of the focal alpha split
    focal_alpha: float = 0.75
    use_isd: bool = True
    use_gesa: bool = True
    use_peca: bool = True
    iterative: bool = True
    epochs: int = 8
    batch_size: int = 8
    lr: float = 1e-3
    weight_decay: float = 1e-4
    neg_ratio: int = 3
    k_out: int = 100
    seed: int = 0

    def to_dict(self):
        return asdict(self)

    @staticmethod
    def from_dict(d):
        return TrainConfig(**d)


class SalienceModel:
    """Predicate decoder plus (optionally) the iterative salience decoder."""

    def __init__(self, scene_cfg, train_cfg):
        self.scene_cfg = scene_cfg
        self.train_cfg = train_cfg
        rng = np.random.default_rng([train_cfg.seed, 11])
        self.decoder = PredicateDecoder(
            scene_cfg.n_entity_classes, scene_cfg.n_predicate_classes,
            feat_dim=scene_cfg.feat_dim, embed_dim=train_cfg.embed_dim,
            rng=rng)
        self.isd = None
        if train_cfg.use_isd:
            self.isd = IterativeSalienceDecoder(
                scene_cfg.n_entity_classes, scene_cfg.n_predicate_classes,
                feat_dim=scene_cfg.feat_dim, heads=train_cfg.heads,
                layers=train_cfg.layers, rng=rng)

    def params(self):
        out = {f"decoder.{k}": v for k, v in self.decoder.params().items()}
        if self.isd is not None:
            out.update({f"isd.{k}": v for k, v in self.isd.params().items()})
        return out

    def forward_scene(self, det):
        """Returns (predicate logits tensor, list of per-layer salience
        matrices; empty when the salience decoder is disabled). Outputs are
        indexed in the input detection order but computed in the canonical
        order, so permuting the detections permutes the outputs exactly."""
        order = canonical_entity_order(det)
        det_c = DetectedEntities([det.boxes[i] for i in order],
                                 det.class_probs[order], det.feats[order])
        g = self.decoder.predict(det_c)
        m_list = []
        if self.isd is not None:
            u = pairwise_iou(det_c.boxes, det_c.boxes)
            m_list = self.isd.forward(
                T.const(det_c.feats), det_c.class_probs, g, u,
                use_gesa=self.train_cfg.use_gesa,
                use_peca=self.train_cfg.use_peca,
                iterative=self.train_cfg.iterative)
        n = det.n
        inv = np.argsort(order)
        idx = (inv[:, None] * n + inv[None, :]).ravel()
        n_p = self.decoder.n_predicate_classes
        g = T.reshape(T.take_rows(T.reshape(g, (n * n, n_p)), idx),
                      (n, n, n_p))
        m_list = [T.reshape(T.take_rows(T.reshape(m, (n * n,)), idx), (n, n))
                  for m in m_list]
        return g, m_list

    def predict_scene(self, det, use_salience=True):
        """Ranked triplets for one image, plus the final salience matrix
        (None when unavailable or disabled)."""
        g, m_list = self.forward_scene(det)
        m = m_list[-1].data if (m_list and use_salience) else None
        preds = score_triplets(det, g.data, m, k_out=self.train_cfg.k_out)
        final_m = m_list[-1].data if m_list else None
        return preds, final_m


@dataclass
class PreparedScene:
    gt: object
    det: object
    sal_labels: np.ndarray
    pred_labels: np.ndarray


def prepare_scene(gt, scene_cfg, stub_rng, w_frozen, thresh):
    det = detector_stub(gt, scene_cfg, stub_rng, w_frozen=w_frozen)
    sal = build_salience_labels(det.boxes, gt, thresh=thresh)
    assignment = solve(detr_match_cost(det, gt))
    g_prime = build_predicate_labels(assignment, gt, det.n)
    return PreparedScene(gt, det, sal, g_prime)


def prepare_scenes(scenes, scene_cfg, stub_seed, thresh):
    w_frozen = frozen_projection(scene_cfg)
    return [prepare_scene(gt, scene_cfg,
                          np.random.default_rng([stub_seed, i]),
                          w_frozen, thresh)
            for i, gt in enumerate(scenes)]


def _gather_pair_logits(g, pairs):
    """Differentiable gather of (B, N_p) rows from the (N, N, N_p) logits."""
    n = g.shape[0]
    flat = T.reshape(g, (n * n, g.shape[2]))
    sel = np.zeros((len(pairs), n * n))
    sel[np.arange(len(pairs)), pairs[:, 0] * n + pairs[:, 1]] = 1.0
    return T.matmul(T.const(sel), flat)


def scene_loss(model, prep, state, rng, cfg):
    """Total loss for one scene; seesaw counts are updated with the scene's
    sampled pair labels before the loss is computed."""
    pairs, labels = sample_predicate_pairs(prep.pred_labels, rng,
                                           neg_ratio=cfg.neg_ratio)
    g, m_list = model.forward_scene(prep.det)
    logits = _gather_pair_logits(g, pairs)
    state.update(labels)
    return total_loss(m_list, prep.sal_labels, logits, labels, state,
                      p_mit=cfg.beta, q_comp=cfg.alpha,
                      focal_gamma=cfg.focal_gamma,
                      focal_alpha=cfg.focal_alpha)


def train(scenes, scene_cfg, train_cfg, stub_seed, log_fn=None,
          val_scenes=None, val_stub_seed=None):
    """Train a model; deterministic given (scenes, configs, seeds).
    Returns (model, seesaw state)."""
    cfg = train_cfg
    model = SalienceModel(scene_cfg, cfg)
    opt = AdamW(model.params(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    state = SeesawState(scene_cfg.n_predicate_classes)
    prepared = prepare_scenes(scenes, scene_cfg, stub_seed,
                              cfg.salience_thresh)
    rng = np.random.default_rng([cfg.seed, 23])
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(prepared))
        sums = np.zeros(3)
        count = 0
        for start in range(0, len(order), cfg.batch_size):
            chunk = order[start:start + cfg.batch_size]
            opt.zero_grad()
            for idx in chunk:
                total, sal, pred = scene_loss(model, prepared[idx], state,
                                              rng, cfg)
                T.mul(total, 1.0 / len(chunk)).backward()
                sums += (total.data.item(), sal.data.item(), pred.data.item())
                count += 1
            opt.step()
        record = {"epoch": epoch, "loss": sums[0] / count,
                  "salience_loss": sums[1] / count,
                  "predicate_loss": sums[2] / count}
        if val_scenes is not None:
            report, _, _ = evaluate(model, val_scenes, scene_cfg,
                                    val_stub_seed)
            record["val"] = {"R@50": report.recall.get(50),
                             "mR@50": report.mean_recall.get(50),
                             "F@50": report.f_score.get(50),
                             "pl_AP": report.pl_ap}
        if log_fn is not None:
            log_fn(record)
    return model, state


def evaluate(model, scenes, scene_cfg, stub_seed, use_salience=True,
             ks=(20, 50, 100)):
    """Evaluate over a split. Returns (MetricReport, per-image predictions,
    per-image salience pair dumps)."""
    w_frozen = frozen_projection(scene_cfg)
    per_image = []
    salience_dump = []
    for i, gt in enumerate(scenes):
        det = detector_stub(gt, scene_cfg,
                            np.random.default_rng([stub_seed, i]),
                            w_frozen=w_frozen)
        preds, final_m = model.predict_scene(det, use_salience=use_salience)
        per_image.append((preds, gt))
        pairs = []
        if final_m is not None:
            n = det.n
            for a in range(n):
                for b in range(n):
                    if a != b:
                        pairs.append((det.boxes[a], det.boxes[b],
                                      float(final_m[a, b])))
        salience_dump.append(pairs)
    report = evaluate_dataset(per_image, ks=ks)
    return report, per_image, salience_dump


# ---------------------------------------------------------------------------
# Model persistence: binary checkpoint + JSON sidecar with the configs.

def save_model(path, model, state):
    tensors = dict(model.params())
    tensors["seesaw.counts"] = state.counts
    save_checkpoint(path, tensors)
    meta = {"scene_config": model.scene_cfg.to_dict(),
            "train_config": model.train_cfg.to_dict()}
    with open(str(path) + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_model(path):
    with open(str(path) + ".json") as fh:
        meta = json.load(fh)
    scene_cfg = SceneConfig.from_dict(meta["scene_config"])
    train_cfg = TrainConfig.from_dict(meta["train_config"])
    model = SalienceModel(scene_cfg, train_cfg)
    tensors = load_checkpoint(path)
    state = SeesawState(scene_cfg.n_predicate_classes)
    state.counts = tensors.pop("seesaw.counts")
    params = model.params()
    if set(params) != set(tensors):
        raise ValueError("checkpoint does not match model parameterization")
    for name, arr in tensors.items():
        if params[name].data.shape != arr.shape:
            raise ValueError(f"shape mismatch for {name}")
        params[name].data[...] = arr
    return model, state
