"""Lightweight predicate decoder.

Each ordered detection pair (i, j) gets a feature vector
[box_i, embed_i, q_i, box_j, embed_j, q_j] which a 2-layer MLP maps to
predicate logits. Class 0 of the output is the explicit "no relation"
class; class p+1 corresponds to dataset predicate id p. No refinement
happens here; pairwise reasoning stays strictly pointwise.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .geometry import box_encoding

__all__ = ["PredicateDecoder"]


class PredicateDecoder:
    def __init__(self, n_entity_classes, n_predicate_classes,
                 feat_dim=32, embed_dim=16, rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.n_entity_classes = n_entity_classes
        self.n_predicate_classes = n_predicate_classes
        self.feat_dim = feat_dim
        self.embed_dim = embed_dim
        self.pair_dim = 2 * (4 + embed_dim + feat_dim)
        hidden = 2 * self.pair_dim
        # Learned category embedding table stands in for pretrained word
        # vectors, which do not exist for the synthetic vocabulary.
        self.embed = T.param(rng.normal(0.0, 0.1,
                                        (n_entity_classes, embed_dim)))
        self.w1 = T.param(rng.normal(0.0, 1.0 / np.sqrt(self.pair_dim),
                                     (self.pair_dim, hidden)))
        self.b1 = T.param(np.zeros(hidden))
        self.w2 = T.param(rng.normal(0.0, 1.0 / np.sqrt(hidden),
                                     (hidden, n_predicate_classes)))
        self.b2 = T.param(np.zeros(n_predicate_classes))

    def params(self):
        return {"embed": self.embed, "w1": self.w1, "b1": self.b1,
                "w2": self.w2, "b2": self.b2}

    def pair_features(self, det, feats=None):
        """(N_e^2, D) pair feature matrix; row i*N_e + j describes the
        ordered pair (i, j). Differentiable into the embedding table and
        into feats when feats requires grad."""
        n = det.n
        if feats is None:
            feats = T.const(det.feats)
        cls = det.class_probs.argmax(axis=1)
        onehot = np.zeros((n, self.n_entity_classes))
        onehot[np.arange(n), cls] = 1.0
        embeds = T.matmul(T.const(onehot), self.embed)
        enc = np.stack([box_encoding(b) for b in det.boxes])
        # Constant selection matrices expand per-entity rows to per-pair rows.
        eye = np.eye(n)
        sel_sub = T.const(np.repeat(eye, n, axis=0))
        sel_obj = T.const(np.tile(eye, (n, 1)))
        parts = [
            T.const(np.repeat(enc, n, axis=0)),
            T.matmul(sel_sub, embeds),
            T.matmul(sel_sub, feats),
            T.const(np.tile(enc, (n, 1))),
            T.matmul(sel_obj, embeds),
            T.matmul(sel_obj, feats),
        ]
        return T.concat(parts, axis=1)

    def predict(self, det, feats=None):
        """(N_e, N_e, N_p) predicate logits G."""
        r = self.pair_features(det, feats=feats)
        h = T.relu(T.linear(r, self.w1, self.b1))
        logits = T.linear(h, self.w2, self.b2)
        n = det.n
        return T.reshape(logits, (n, n, self.n_predicate_classes))
