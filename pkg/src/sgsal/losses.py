"""Training objectives: focal salience loss and seesaw predicate loss.

The two losses are combined 1:1. The detector is frozen, so no entity loss
term enters the optimization. The seesaw re-weighting follows the usual
online formulation: cumulative per-class counts drive a mitigation factor
on frequent negative classes, and the (detached) predicted probabilities
drive a compensation factor that restores punishment on confident mistakes.

Hyperparameter mapping used throughout this package: the debiasing strength
knob (beta) is the mitigation exponent, and alpha is the compensation
exponent. Raising beta shifts weight toward rare predicate classes.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T

__all__ = ["focal_loss", "SeesawState", "seesaw_loss", "total_loss"]


def focal_loss(m, labels, gamma=2.0, alpha=0.25, exclude_diagonal=True):
    """Mean focal loss between predicted salience m (entries strictly in
    (0,1)) and binary labels. alpha weights positives, (1 - alpha)
    negatives. With gamma=0, alpha=0.5 this is exactly 0.5 * BCE."""
    y = np.asarray(labels, dtype=np.float64)
    if m.shape != y.shape:
        raise T.ShapeError(f"focal: shapes {m.shape} vs {y.shape}")
    ones = T.const(np.ones_like(y))
    p_t = T.add(T.mul(m, T.const(y)), T.mul(T.sub(ones, m), T.const(1.0 - y)))
    a_t = alpha * y + (1.0 - alpha) * (1.0 - y)
    modulator = T.power(T.sub(ones, p_t), gamma)
    # Saturated sigmoids can make p_t exactly 0 or 1 in float64; the clamp
    # keeps the log finite without touching unsaturated entries.
    elem = T.mul(T.mul(T.const(a_t), modulator),
                 T.log(T.clamp(p_t, 1e-300, 1.0)))
    if exclude_diagonal and y.ndim == 2 and y.shape[0] == y.shape[1]:
        mask = 1.0 - np.eye(y.shape[0])
    else:
        mask = np.ones_like(y)
    count = mask.sum()
    if count == 0:
        return T.const(0.0)
    return T.mul(T.sum_(T.mul(elem, T.const(mask))), -1.0 / count)


class SeesawState:
    """Cumulative per-class sample counts driving the seesaw re-weighting.
    Counts persist across epochs; a single trainer thread owns mutation."""

    def __init__(self, n_classes):
        self.counts = np.zeros(n_classes, dtype=np.float64)

    def update(self, labels):
        if len(labels):
            np.add.at(self.counts, np.asarray(labels, dtype=np.int64), 1.0)


def seesaw_loss(logits, labels, state, p_mit=0.2, q_comp=1.0):
    """Seesaw softmax cross-entropy over a (B, N_p) logit batch.

    For a sample of class i, the softmax term of negative class j is scaled
    by min(1, (count_j / count_i)^p_mit) * max(1, (prob_j / prob_i)^q_comp);
    both factors are treated as constants in the backward pass. With
    p_mit = q_comp = 0 this is exactly standard cross-entropy."""
    labels = np.asarray(labels, dtype=np.int64)
    b = len(labels)
    if b == 0:
        return T.const(0.0)
    if logits.shape[0] != b:
        raise T.ShapeError("seesaw: batch sizes differ")
    n_cls = logits.shape[1]
    if labels.min() < 0 or labels.max() >= n_cls:
        raise ValueError("seesaw: label out of range")
    counts = np.maximum(state.counts, 1.0)
    rows = np.arange(b)
    ratio = counts[None, :] / counts[labels][:, None]
    mitigation = np.minimum(1.0, ratio ** p_mit)
    z = logits.data
    z = z - z.max(axis=1, keepdims=True)
    sigma = np.exp(z)
    sigma /= sigma.sum(axis=1, keepdims=True)
    own = sigma[rows, labels][:, None]
    compensation = np.maximum(1.0, (sigma / np.maximum(own, 1e-300)) ** q_comp)
    scale = mitigation * compensation
    scale[rows, labels] = 1.0
    scale = np.maximum(scale, 1e-12)  # fully damped classes stay finite
    adjusted = T.add(logits, T.const(np.log(scale)))
    logp = T.log_softmax(adjusted, axis=1)
    onehot = np.zeros((b, n_cls))
    onehot[rows, labels] = 1.0
    return T.mul(T.sum_(T.mul(logp, T.const(onehot))), -1.0 / b)


def total_loss(m_list, sal_labels, pred_logits, pred_labels, state,
               p_mit=0.2, q_comp=1.0, focal_gamma=2.0, focal_alpha=0.25):
    """Salience loss (averaged over all supervised layers) plus predicate
    loss at 1:1 ratio. Returns (total, salience, predicate) tensors; the
    salience term is zero when no salience matrices are supervised."""
    if m_list:
        per_layer = [focal_loss(m, sal_labels, gamma=focal_gamma,
                                alpha=focal_alpha) for m in m_list]
        sal = per_layer[0]
        for term in per_layer[1:]:
            sal = T.add(sal, term)
        sal = T.mul(sal, 1.0 / len(per_layer))
    else:
        sal = T.const(0.0)
    pred = seesaw_loss(pred_logits, pred_labels, state,
                       p_mit=p_mit, q_comp=q_comp)
    return T.add(sal, pred), sal, pred
