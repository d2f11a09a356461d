"""Iterative salience decoder.

L stacked layers, each running a subject branch and an object branch of
geometry-biased self-attention, predicate-biased cross-attention, and a
feed-forward block, then refining the pair salience matrix in logit space.
Residuals are bare (no layer norm), so disabling the bias MLPs reduces a
layer exactly to a vanilla transformer layer.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T

__all__ = ["IterativeSalienceDecoder", "refine", "INVERSE_SIGMOID_EPS"]

INVERSE_SIGMOID_EPS = 1e-5

_BRANCHES = ("sub", "obj")


def refine(m, q_sub, q_obj, eps=INVERSE_SIGMOID_EPS):
    """Logit-space salience update:
    sigmoid(inverse_sigmoid(m) + q_sub @ q_obj^T / sqrt(d))."""
    d = q_sub.shape[1]
    fused = T.mul(T.matmul(q_sub, T.transpose(q_obj)), 1.0 / math.sqrt(d))
    return T.sigmoid(T.add(T.inverse_sigmoid(m, eps), fused))


class IterativeSalienceDecoder:
    def __init__(self, n_entity_classes, n_predicate_classes,
                 feat_dim=32, heads=2, layers=4, bias_hidden=16, rng=None):
        if feat_dim % heads != 0:
            raise ValueError("feat_dim must be divisible by the head count")
        if layers < 1:
            raise ValueError("need at least one decoder layer")
        if rng is None:
            rng = np.random.default_rng(0)
        self.n_entity_classes = n_entity_classes
        self.n_predicate_classes = n_predicate_classes
        self.d = feat_dim
        self.heads = heads
        self.layers = layers
        self.bias_hidden = bias_hidden
        self._params = {}
        self._init_params(rng)

    def _add(self, name, shape, rng, fan_in=None):
        if fan_in is None:
            fan_in = shape[0]
        self._params[name] = T.param(
            rng.normal(0.0, 1.0 / math.sqrt(fan_in), shape))

    def _add_zero(self, name, shape):
        self._params[name] = T.param(np.zeros(shape))

    def _init_params(self, rng):
        d, h = self.d, self.bias_hidden
        # Query initialization: project class distributions into feature
        # space, then split into subject/object branches.
        self._add("init.proj_c", (self.n_entity_classes, d), rng)
        self._add_zero("init.proj_c_b", (d,))
        self._add("init.proj_s", (d, d), rng)
        self._add_zero("init.proj_s_b", (d,))
        self._add("init.proj_o", (d, d), rng)
        self._add_zero("init.proj_o_b", (d,))
        for l in range(self.layers):
            for br in _BRANCHES:
                base = f"layer{l}.{br}"
                for blk in ("self", "cross"):
                    for w in ("wq", "wk", "wv", "wo"):
                        self._add(f"{base}.{blk}.{w}", (d, d), rng)
                        self._add_zero(f"{base}.{blk}.{w}_b", (d,))
                # Small positive bias init keeps every head of the
                # relu-capped bias MLPs alive at the start of training.
                self._add(f"{base}.geo.w1", (1, h), rng)
                self._params[f"{base}.geo.b1"] = T.param(0.01 * np.ones(h))
                self._add(f"{base}.geo.w2", (h, self.heads), rng)
                self._params[f"{base}.geo.b2"] = T.param(
                    0.01 * np.ones(self.heads))
                self._add(f"{base}.pred.w1", (self.n_predicate_classes, h), rng)
                self._params[f"{base}.pred.b1"] = T.param(0.01 * np.ones(h))
                self._add(f"{base}.pred.w2", (h, self.heads), rng)
                self._params[f"{base}.pred.b2"] = T.param(
                    0.01 * np.ones(self.heads))
                self._add(f"{base}.ffn.w1", (d, 2 * d), rng)
                self._add_zero(f"{base}.ffn.b1", (2 * d,))
                self._add(f"{base}.ffn.w2", (2 * d, d), rng)
                self._add_zero(f"{base}.ffn.b2", (d,))

    def params(self):
        return dict(self._params)

    def p(self, name):
        return self._params[name]

    # -- building blocks ---------------------------------------------------

    def init_queries(self, feats, class_probs):
        """Q_ent = Q + proj(C); then branch projections. No extra learnable
        query vectors are created."""
        if not isinstance(feats, T.Tensor):
            feats = T.const(feats)
        c = T.const(class_probs)
        q_ent = T.add(feats, T.linear(c, self.p("init.proj_c"),
                                      self.p("init.proj_c_b")))
        q_sub = T.linear(q_ent, self.p("init.proj_s"), self.p("init.proj_s_b"))
        q_obj = T.linear(q_ent, self.p("init.proj_o"), self.p("init.proj_o_b"))
        return q_sub, q_obj

    def _attention(self, q_in, kv_in, base, bias):
        """Multi-head attention with residual; bias, when given, is a
        head-wise (H, N, N) additive term on the attention logits."""
        n = q_in.shape[0]
        dh = self.d // self.heads
        def split(x):
            return T.transpose(T.reshape(x, (n, self.heads, dh)), (1, 0, 2))
        q = split(T.linear(q_in, self.p(f"{base}.wq"), self.p(f"{base}.wq_b")))
        k = split(T.linear(kv_in, self.p(f"{base}.wk"), self.p(f"{base}.wk_b")))
        v = split(T.linear(kv_in, self.p(f"{base}.wv"), self.p(f"{base}.wv_b")))
        logits = T.mul(T.matmul(q, T.transpose(k, (0, 2, 1))),
                       1.0 / math.sqrt(dh))
        if bias is not None:
            logits = T.add(logits, bias)
        attn = T.softmax(logits, axis=2)
        # Order-invariant combine keeps the layer exactly equivariant to
        # entity permutations.
        out = T.weighted_sum(attn, v)
        out = T.reshape(T.transpose(out, (1, 0, 2)), (n, self.d))
        out = T.linear(out, self.p(f"{base}.wo"), self.p(f"{base}.wo_b"))
        return T.add(q_in, out)

    def _bias_mlp(self, x2d, base):
        """(N^2, F) -> relu MLP -> (H, N, N) head-wise attention bias.
        The trailing relu keeps the bias contribution non-negative."""
        h = T.relu(T.linear(x2d, self.p(f"{base}.w1"), self.p(f"{base}.b1")))
        out = T.relu(T.linear(h, self.p(f"{base}.w2"), self.p(f"{base}.b2")))
        n = int(math.isqrt(out.shape[0]))
        return T.transpose(T.reshape(out, (n, n, self.heads)), (2, 0, 1))

    def gesa(self, qx, u, layer, branch, enabled=True):
        """Geometry-enhanced self-attention over one branch's queries.
        u is the detected-entity pairwise IoU matrix."""
        base = f"layer{layer}.{branch}"
        bias = None
        if enabled:
            n = u.shape[0]
            u2d = T.const(np.asarray(u, dtype=np.float64).reshape(n * n, 1))
            bias = self._bias_mlp(u2d, f"{base}.geo")
        return self._attention(qx, qx, f"{base}.self", bias)

    def peca(self, q_from, q_to, g, layer, branch, enabled=True):
        """Predicate-enhanced cross-attention from q_from to q_to. g is the
        (N, N, N_p) predicate logit tensor, already transposed for the
        object branch. Gradients flow through g (no detachment)."""
        base = f"layer{layer}.{branch}"
        bias = None
        if enabled:
            n = g.shape[0]
            g2d = T.reshape(g, (n * n, self.n_predicate_classes))
            bias = self._bias_mlp(g2d, f"{base}.pred")
        return self._attention(q_from, q_to, f"{base}.cross", bias)

    def ffn(self, x, layer, branch):
        base = f"layer{layer}.{branch}.ffn"
        h = T.relu(T.linear(x, self.p(f"{base}.w1"), self.p(f"{base}.b1")))
        return T.add(x, T.linear(h, self.p(f"{base}.w2"), self.p(f"{base}.b2")))

    # -- full forward -------------------------------------------------------

    def forward(self, feats, class_probs, g_logits, u, layers=None,
                use_gesa=True, use_peca=True, iterative=True):
        """Run the decoder stack. Returns the list of per-layer salience
        matrices [M_1 .. M_L]; the last entry is the final estimate.

        With iterative=False each layer's matrix is refined from zero logits
        instead of chaining (the non-iterative ablation)."""
        n_layers = self.layers if layers is None else layers
        if n_layers < 1:
            raise ValueError("layer count must be >= 1")
        if n_layers > self.layers:
            raise ValueError("more layers requested than parameterized")
        q_sub, q_obj = self.init_queries(feats, class_probs)
        n = q_sub.shape[0]
        g_t = T.transpose(g_logits, (1, 0, 2))
        m_prev = T.const(np.zeros((n, n)))
        zero = T.const(np.zeros((n, n)))
        out = []
        for l in range(n_layers):
            q_sub_sa = self.gesa(q_sub, u, l, "sub", enabled=use_gesa)
            q_obj_sa = self.gesa(q_obj, u, l, "obj", enabled=use_gesa)
            q_sub_ca = self.peca(q_sub_sa, q_obj_sa, g_logits, l, "sub",
                                 enabled=use_peca)
            q_obj_ca = self.peca(q_obj_sa, q_sub_sa, g_t, l, "obj",
                                 enabled=use_peca)
            q_sub = self.ffn(q_sub_ca, l, "sub")
            q_obj = self.ffn(q_obj_ca, l, "obj")
            m = refine(m_prev if iterative else zero, q_sub, q_obj)
            out.append(m)
            m_prev = m
        return out
