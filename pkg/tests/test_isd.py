"""Iterative salience decoder: reductions, refinement algebra, and the
layer stack."""

import math

import numpy as np
import pytest

from sgsal import tensor as T
from sgsal.decoder import PredicateDecoder
from sgsal.geometry import pairwise_iou
from sgsal.isd import IterativeSalienceDecoder, refine, INVERSE_SIGMOID_EPS
from sgsal.scenes import SceneConfig, generate_scene, detector_stub

CFG = SceneConfig()


def make_setup(seed=0, layers=4):
    rng = np.random.default_rng(seed)
    gt = generate_scene(CFG, rng)
    det = detector_stub(gt, CFG, rng)
    dec = PredicateDecoder(CFG.n_entity_classes, CFG.n_predicate_classes,
                           feat_dim=CFG.feat_dim,
                           rng=np.random.default_rng(seed + 30))
    isd = IterativeSalienceDecoder(CFG.n_entity_classes,
                                   CFG.n_predicate_classes,
                                   feat_dim=CFG.feat_dim, layers=layers,
                                   rng=np.random.default_rng(seed + 60))
    u = pairwise_iou(det.boxes, det.boxes)
    g = dec.predict(det)
    return det, isd, g, u


def zero_bias_mlps(isd):
    for name, p in isd.params().items():
        if ".geo." in name or ".pred." in name:
            p.data[...] = 0.0


def run(isd, det, g, u, feat_scale=1.0, **kw):
    """Forward the stack; feat_scale < 1 keeps an untrained random stack
    away from sigmoid saturation where outputs pin to exactly 0/1."""
    feats = T.const(det.feats * feat_scale)
    return [m.data for m in
            isd.forward(feats, det.class_probs, g, u, **kw)]


def test_constructor_validation():
    with pytest.raises(ValueError):
        IterativeSalienceDecoder(10, 8, feat_dim=30, heads=4)
    with pytest.raises(ValueError):
        IterativeSalienceDecoder(10, 8, layers=0)


def test_forward_layer_count_and_shape():
    det, isd, g, u = make_setup()
    out = run(isd, det, g, u)
    assert len(out) == 4
    for m in out:
        assert m.shape == (det.n, det.n)
        assert np.all((m > 0) & (m < 1))


def test_layer_prefix_is_stable():
    """Requesting fewer layers reproduces the prefix of the full stack."""
    det, isd, g, u = make_setup(1)
    full = run(isd, det, g, u)
    short = run(isd, det, g, u, layers=2)
    assert np.array_equal(short[0], full[0])
    assert np.array_equal(short[1], full[1])
    with pytest.raises(ValueError):
        run(isd, det, g, u, layers=5)


def test_zeroed_bias_mlps_reduce_to_vanilla_attention():
    """With all bias-MLP parameters at zero, enabling the geometry and
    predicate biases changes nothing, bit for bit."""
    det, isd, g, u = make_setup(2)
    zero_bias_mlps(isd)
    plain = run(isd, det, g, u, use_gesa=False, use_peca=False)
    biased = run(isd, det, g, u, use_gesa=True, use_peca=True)
    for a, b in zip(plain, biased):
        assert np.array_equal(a, b)


def test_zeroed_geometry_bias_only():
    det, isd, g, u = make_setup(3)
    for name, p in isd.params().items():
        if ".geo." in name:
            p.data[...] = 0.0
    a = run(isd, det, g, u, use_gesa=False, use_peca=True)
    b = run(isd, det, g, u, use_gesa=True, use_peca=True)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_live_bias_mlps_change_the_output():
    det, isd, g, u = make_setup(4)
    a = run(isd, det, g, u, feat_scale=0.2, use_gesa=False, use_peca=False)
    b = run(isd, det, g, u, feat_scale=0.2, use_gesa=True, use_peca=True)
    assert not np.array_equal(a[-1], b[-1])


def test_vanilla_attention_matches_independent_oracle():
    """The zero-bias reduction equals a from-scratch multi-head attention
    implementation using the same weights."""
    det, isd, g, u = make_setup(5, layers=1)
    zero_bias_mlps(isd)
    got = run(isd, det, g, u)[0]

    # independent forward pass in plain numpy
    p = {k: v.data for k, v in isd.params().items()}
    feats = det.feats
    q_ent = feats + det.class_probs @ p["init.proj_c"] + p["init.proj_c_b"]
    q_sub = q_ent @ p["init.proj_s"] + p["init.proj_s_b"]
    q_obj = q_ent @ p["init.proj_o"] + p["init.proj_o_b"]
    n, d, h = feats.shape[0], isd.d, isd.heads
    dh = d // h

    def mha(q_in, kv_in, base):
        def split(x):
            return x.reshape(n, h, dh).transpose(1, 0, 2)
        q = split(q_in @ p[f"{base}.wq"] + p[f"{base}.wq_b"])
        k = split(kv_in @ p[f"{base}.wk"] + p[f"{base}.wk_b"])
        v = split(kv_in @ p[f"{base}.wv"] + p[f"{base}.wv_b"])
        logits = q @ k.transpose(0, 2, 1) / math.sqrt(dh)
        e = np.exp(logits - logits.max(axis=2, keepdims=True))
        attn = e / np.ascontiguousarray(np.sort(e, axis=2)).sum(
            axis=2, keepdims=True)
        prod = attn[:, :, :, None] * v[:, None, :, :]
        out = np.ascontiguousarray(np.sort(prod, axis=2)).sum(axis=2)
        out = out.transpose(1, 0, 2).reshape(n, d)
        return q_in + out @ p[f"{base}.wo"] + p[f"{base}.wo_b"]

    def ffn(x, base):
        hmid = np.maximum(x @ p[f"{base}.w1"] + p[f"{base}.b1"], 0.0)
        return x + hmid @ p[f"{base}.w2"] + p[f"{base}.b2"]

    qs = mha(q_sub, q_sub, "layer0.sub.self")
    qo = mha(q_obj, q_obj, "layer0.obj.self")
    qs2 = mha(qs, qo, "layer0.sub.cross")
    qo2 = mha(qo, qs, "layer0.obj.cross")
    qs3 = ffn(qs2, "layer0.sub.ffn")
    qo3 = ffn(qo2, "layer0.obj.ffn")
    eps = INVERSE_SIGMOID_EPS
    logit0 = np.log(eps / (1.0 - eps))
    fused = qs3 @ qo3.T / math.sqrt(d)
    want = 1.0 / (1.0 + np.exp(-(logit0 + fused)))
    assert np.allclose(got, want, atol=1e-12)


def test_refine_identity_with_zero_queries():
    rng = np.random.default_rng(6)
    m = T.const(rng.uniform(0.05, 0.95, size=(7, 7)))
    zeros = T.const(np.zeros((7, 4)))
    out = refine(m, zeros, zeros)
    assert np.allclose(out.data, m.data, atol=1e-10)


def test_refine_composes_additively_in_logit_space():
    rng = np.random.default_rng(7)
    for _ in range(50):
        m = T.const(rng.uniform(0.05, 0.95, size=(5, 5)))
        q1s = T.const(rng.normal(size=(5, 3)))
        q1o = T.const(rng.normal(size=(5, 3)))
        q2s = T.const(rng.normal(size=(5, 3)))
        q2o = T.const(rng.normal(size=(5, 3)))
        chained = refine(refine(m, q1s, q1o), q2s, q2o).data
        f1 = q1s.data @ q1o.data.T / math.sqrt(3)
        f2 = q2s.data @ q2o.data.T / math.sqrt(3)
        logit = np.log(m.data / (1.0 - m.data))
        direct = 1.0 / (1.0 + np.exp(-(logit + f1 + f2)))
        assert np.allclose(chained, direct, atol=1e-10)


def test_non_iterative_layers_share_first_layer():
    """The first layer starts from zero logits either way; later layers
    chain only in iterative mode."""
    det, isd, g, u = make_setup(10)
    it = run(isd, det, g, u, feat_scale=0.2, iterative=True)
    no = run(isd, det, g, u, feat_scale=0.2, iterative=False)
    assert np.array_equal(it[0], no[0])
    assert not np.array_equal(it[-1], no[-1])


def test_gradient_flows_into_predicate_logits():
    """The predicate bias path backpropagates into G (no detachment)."""
    det, isd, g, u = make_setup(9)
    glogits = T.param(g.data)
    out = isd.forward(T.const(det.feats * 0.2), det.class_probs, glogits, u)
    T.sum_(out[-1]).backward()
    assert glogits.grad is not None
    assert np.abs(glogits.grad).sum() > 0
