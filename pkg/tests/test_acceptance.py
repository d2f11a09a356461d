"""Acceptance gate: one test per release criterion, each ending in a
single printed PASS line. Criteria 6-9 read the reference benchmark
results (10k train / 1k test scenes, 3 seeds) through the disk cache in
.bench_cache/; delete that directory to force a full recompute.
"""

import json
import math
import time
from pathlib import Path

import numpy as np

import _benchmark as bench
from sgsal import tensor as T
from sgsal.cli import main as cli_main
from sgsal.isd import refine
from sgsal.labels import build_salience_labels
from sgsal.losses import SeesawState, focal_loss, seesaw_loss
from sgsal.metrics import mean_recall_at_k, pl_ap, recall_at_k
from sgsal.scenes import (DetectedEntities, SceneConfig, detector_stub,
                          generate_scene)
from sgsal.trainer import SalienceModel, TrainConfig
from sgsal.verify import run_gradcheck

from test_isd import make_setup, run, zero_bias_mlps
from test_labels import salience_oracle
from test_matching import brute_force
from test_metrics import (oracle_mean_recall, oracle_pl_ap, oracle_recall,
                          random_instance)

ROOT = Path(__file__).resolve().parent.parent
MANIFEST = ROOT / "benchmark_manifest.json"


def report(n, detail):
    print(f"criterion {n:>2}: PASS - {detail}")


def test_criterion_01_gradient_suite():
    t0 = time.time()
    rows = run_gradcheck(seed=0)
    elapsed = time.time() - t0
    worst = max(err for _, err, _ in rows)
    assert all(passed for _, _, passed in rows)
    assert worst < 1e-4
    assert elapsed < 60.0
    report(1, f"{len(rows)} gradient checks, max rel err "
              f"{worst:.2e}, {elapsed:.1f}s")


def test_criterion_02_oracle_equivalence():
    from sgsal.matching import solve

    rng = np.random.default_rng(0)
    for trial in range(500):
        n = int(rng.integers(1, 8))
        m = int(rng.integers(1, 8))
        if trial % 2:
            cost = rng.uniform(0.0, 10.0, size=(n, m))
        else:
            cost = rng.integers(0, 6, size=(n, m)).astype(np.float64)
        got = solve(cost)
        want_total, want_pairs = brute_force(cost)
        assert abs(got.total_cost(cost) - want_total) < 1e-9
        assert got.pairs == want_pairs

    cfg = SceneConfig()
    for seed in range(500):
        srng = np.random.default_rng(seed)
        gt = generate_scene(cfg, srng)
        det = detector_stub(gt, cfg, srng)
        got = build_salience_labels(det.boxes, gt)
        assert np.array_equal(got, salience_oracle(det.boxes, gt, 0.6)), seed

    mrng = np.random.default_rng(0)
    for _ in range(200):
        preds, gt = random_instance(mrng)
        for k in (1, 3, 10, 50):
            assert recall_at_k(preds, gt, k) == oracle_recall(preds, gt, k)
            assert (mean_recall_at_k(preds, gt, k)
                    == oracle_mean_recall(preds, gt, k))
        assert pl_ap(preds, gt) == oracle_pl_ap(preds, gt)
    report(2, "assignment x500, salience labels x500, metrics x200, "
              "all exact")


def test_criterion_03_reductions():
    # zero bias MLPs: enabling the attention biases changes nothing, bitwise
    det, isd, g, u = make_setup(2)
    zero_bias_mlps(isd)
    plain = run(isd, det, g, u, use_gesa=False, use_peca=False)
    both = run(isd, det, g, u, use_gesa=True, use_peca=True)
    geo = run(isd, det, g, u, use_gesa=True, use_peca=False)
    prd = run(isd, det, g, u, use_gesa=False, use_peca=True)
    for variant in (both, geo, prd):
        for a, b in zip(plain, variant):
            assert np.array_equal(a, b)

    # degenerate seesaw == plain cross-entropy
    rng = np.random.default_rng(3)
    logits = T.const(rng.normal(size=(40, 8)))
    labels = rng.integers(0, 8, size=40)
    state = SeesawState(8)
    state.update(rng.integers(0, 8, size=300))
    got = seesaw_loss(logits, labels, state, p_mit=0.0, q_comp=0.0).data
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    want = -logp[np.arange(40), labels].mean()
    assert abs(got - want) <= 1e-12

    # focal(gamma=0, alpha=0.5) == 0.5 * BCE
    m = T.const(rng.uniform(0.05, 0.95, size=(6, 6)))
    y = (rng.random((6, 6)) < 0.3).astype(np.float64)
    got = focal_loss(m, y, gamma=0.0, alpha=0.5,
                     exclude_diagonal=False).data
    bce = -(y * np.log(m.data) + (1 - y) * np.log(1 - m.data)).mean()
    assert abs(got - 0.5 * bce) <= 1e-12
    report(3, "attention bias, seesaw, and focal reductions hold")


def test_criterion_04_refinement_algebra():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        n = int(rng.integers(2, 8))
        d = int(rng.integers(2, 6))
        m = T.const(rng.uniform(0.05, 0.95, size=(n, n)))
        zeros = T.const(np.zeros((n, d)))
        assert np.allclose(refine(m, zeros, zeros).data, m.data,
                           atol=1e-10)
        q1s, q1o, q2s, q2o = (T.const(rng.normal(size=(n, d)))
                              for _ in range(4))
        chained = refine(refine(m, q1s, q1o), q2s, q2o).data
        fused = (q1s.data @ q1o.data.T + q2s.data @ q2o.data.T) \
            / math.sqrt(d)
        logit = np.log(m.data / (1.0 - m.data))
        direct = 1.0 / (1.0 + np.exp(-(logit + fused)))
        assert np.allclose(chained, direct, atol=1e-10)
    report(4, "identity and additive composition on 1000 matrices "
              "(tol 1e-10)")


def test_criterion_05_permutation_equivariance():
    cfg = SceneConfig()
    model = SalienceModel(cfg, TrainConfig(seed=0, layers=2))
    rng = np.random.default_rng(5)
    for seed in range(8):
        gt = generate_scene(cfg, np.random.default_rng(seed))
        det = detector_stub(gt, cfg, np.random.default_rng(seed + 90))
        g, m_list = model.forward_scene(det)
        preds, _ = model.predict_scene(det)
        perm = rng.permutation(det.n)
        det_p = DetectedEntities([det.boxes[i] for i in perm],
                                 det.class_probs[perm], det.feats[perm])
        g_p, m_list_p = model.forward_scene(det_p)
        preds_p, _ = model.predict_scene(det_p)
        assert np.array_equal(g_p.data, g.data[perm][:, perm])
        for m, m_p in zip(m_list, m_list_p):
            assert np.array_equal(m_p.data, m.data[perm][:, perm])
        key = sorted((t.score, (t.sbox.cx, t.sbox.cy, t.sbox.w, t.sbox.h),
                      (t.obox.cx, t.obox.cy, t.obox.w, t.obox.h),
                      t.sclass, t.oclass, t.pred) for t in preds)
        key_p = sorted((t.score, (t.sbox.cx, t.sbox.cy, t.sbox.w, t.sbox.h),
                        (t.obox.cx, t.obox.cy, t.obox.w, t.obox.h),
                        t.sclass, t.oclass, t.pred) for t in preds_p)
        assert key == key_p
    report(5, "G, M, and the final ranking permute exactly on 8 scenes")


def _means(variant, metric, mode="with_salience"):
    vals = [bench.run_variant(variant, s)[mode][metric]
            for s in bench.SEEDS]
    return float(np.mean(vals)), float(np.std(vals))


def test_criterion_06_component_ablation():
    manifest = json.loads(MANIFEST.read_text())
    margin = manifest["f50_margin_full_vs_no_isd"]
    assert margin >= 2.0
    full, full_sd = _means("full", "F@50")
    gesa, _ = _means("gesa_only", "F@50")
    peca, _ = _means("peca_only", "F@50")
    none, none_sd = _means("no_isd", "F@50")
    assert full > gesa
    assert full > peca
    assert peca > none
    assert full - none >= margin
    for variant in ("full", "gesa_only", "peca_only", "no_isd"):
        for seed in bench.SEEDS:
            assert bench.run_variant(variant, seed)["runtime_s"] < 1800
    report(6, f"mean F@50 full={full:.2f}(+/-{full_sd:.2f}) > "
              f"gesa={gesa:.2f}, peca={peca:.2f} > no_isd={none:.2f}"
              f"(+/-{none_sd:.2f}); gap {full - none:.2f} >= {margin}")


def test_criterion_07_iterative_refinement():
    it, it_sd = _means("full", "F@50")
    no, no_sd = _means("non_iterative", "F@50")
    assert it >= no
    report(7, f"mean F@50 iterative={it:.2f}(+/-{it_sd:.2f}) >= "
              f"non-iterative={no:.2f}(+/-{no_sd:.2f})")


def test_criterion_08_salience_reranking_pl_ap():
    with_sal, _ = _means("full", "pl_AP", "with_salience")
    without, _ = _means("full", "pl_AP", "without_salience")
    assert with_sal >= without
    report(8, f"mean pl-AP with salience {with_sal:.2f} >= "
              f"without {without:.2f}")


def test_criterion_09_debiasing_tradeoff():
    betas = [("beta_0.0", 0.0), ("full", 0.2), ("beta_0.5", 0.5)]
    mr = [_means(v, "mR@50")[0] for v, _ in betas]
    r = [_means(v, "R@50")[0] for v, _ in betas]
    assert mr[0] <= mr[1] <= mr[2]
    assert r[0] >= r[1] >= r[2]
    report(9, "beta 0.0 -> 0.2 -> 0.5: mean mR@50 "
              f"{mr[0]:.2f} <= {mr[1]:.2f} <= {mr[2]:.2f}, mean R@50 "
              f"{r[0]:.2f} >= {r[1]:.2f} >= {r[2]:.2f}")


def test_criterion_10_determinism(tmp_path):
    data = tmp_path / "data"
    assert cli_main(["gen-data", "--out", str(data), "--scenes", "30",
                     "--seed", "0"]) == 0
    reports = []
    checkpoints = []
    for tag in ("a", "b"):
        ckpt = tmp_path / f"{tag}.bin"
        out = tmp_path / f"{tag}.json"
        assert cli_main(["train", "--data", str(data), "--out", str(ckpt),
                         "--epochs", "2", "--layers", "2", "--seed", "0"]
                        ) == 0
        assert cli_main(["eval", "--ckpt", str(ckpt), "--data", str(data),
                         "--out", str(out)]) == 0
        checkpoints.append(ckpt.read_bytes())
        reports.append(out.read_bytes())
    assert checkpoints[0] == checkpoints[1]
    assert reports[0] == reports[1]
    report(10, "same-seed checkpoints and metric reports are "
               "bit-identical")
