"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Training-based criteria share one module fixture that trains every
(variant, package op, seed) combination they need once at desk scale.
"""

import json
import statistics
import time

import numpy as np
import pytest
from sklearn.cluster import KMeans

from cian import kernels
from cian.cli import main
from cian.data import GeneratorConfig, build_pairs, generate_dataset, split_records
from cian.explainer import ExplainProblem, admm_solve, explain_merchant, explain_problem, top_features
from cian.learning import (
    TrainConfig,
    _batch_loss,
    evaluate,
    margin_at,
    mine_hardest_negatives,
    pair_scores_and_labels,
    select_threshold,
    train,
)
from cian.model import PACKAGE_KINDS, VARIANTS, ModelConfig, export_embeddings, init_params
from cian.numerics import finite_difference_check
from oracles import hardest_negative_oracle, planted_problem, support_oracle, threshold_oracle

SEEDS = (0, 1, 2)
SLACK = 0.02


def _purity(labels, clusters):
    total = 0
    for k in np.unique(clusters):
        total += np.bincount(labels[clusters == k]).max()
    return total / len(labels)


def _desk_run(variant, op, seed):
    records, gt = generate_dataset(GeneratorConfig(seed=seed))
    tr, va, te = split_records(records, seed=seed)
    config = ModelConfig(variant=variant, package_op=op, seed=seed)
    t0 = time.perf_counter()
    params, _ = train(config, build_pairs(tr, 1, seed), build_pairs(va, 1, seed + 1), TrainConfig(epochs=30, seed=seed))
    val = build_pairs(va, 1, seed + 1)
    thr = select_threshold(*pair_scores_and_labels(val, params, config))
    f1 = evaluate(build_pairs(te, 1, seed + 2), params, config, thr).f1
    return {"f1": f1, "seconds": time.perf_counter() - t0, "params": params, "config": config, "records": records}


@pytest.fixture(scope="module")
def runs():
    out = {}
    for seed in SEEDS:
        for v in VARIANTS:
            out[v, "dot", seed] = _desk_run(v, "dot", seed)
        for op in PACKAGE_KINDS:
            if op != "dot":
                out["both", op, seed] = _desk_run("both", op, seed)
    return out


def test_criterion_1_gradients(acceptance_report):
    records, _ = generate_dataset(GeneratorConfig(n_categories=3, merchants_per_category=2, t_dim=3, d_dim=4, n_informative=1))
    T = np.stack([r.t for r in records])
    D = np.stack([r.d for r in records])
    cats = np.array([r.category for r in records])
    t0 = time.perf_counter()
    worst, where = 0.0, None
    for variant in VARIANTS:
        for op in PACKAGE_KINDS:
            config = ModelConfig(t_dim=3, d_dim=4, common_dim=3, variant=variant, package_op=op)
            params = init_params(config)
            loss_fn, n, _ = _batch_loss(T, D, cats, params, config, margin_at(0, TrainConfig().schedule))
            assert n == len(records)
            err = finite_difference_check(loss_fn, params)
            if err > worst:
                worst, where = err, (variant, op)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 60
    acceptance_report(1, "gradient check, all variants x ops", ok, f"max rel err {worst:.2e} at {where}, {elapsed:.1f} s")
    assert ok


@pytest.mark.slow
def test_criterion_2_end_to_end(runs, acceptance_report):
    r = runs["both", "dot", 0]
    ok = r["f1"] >= 0.95 and r["seconds"] < 300
    acceptance_report(2, "Both test F1 >= 0.95 at desk scale", ok, f"F1 {r['f1']:.4f}, train {r['seconds']:.1f} s")
    assert ok


@pytest.mark.slow
def test_criterion_3_variant_ordering(runs, acceptance_report):
    med = {v: statistics.median(runs[v, "dot", s]["f1"] for s in SEEDS) for v in VARIANTS}
    order = ("both", "cross", "intra", "fc")
    ok = all(med[a] - med[b] >= -SLACK for a, b in zip(order, order[1:]))
    detail = ", ".join(f"{v}={med[v]:.4f}" for v in order)
    acceptance_report(3, "median F1 Both >= Cross >= Intra >= FC (slack 0.02)", ok, detail)
    assert ok


@pytest.mark.slow
def test_criterion_4_package_op_spread(runs, acceptance_report):
    med = {op: statistics.median(runs["both", op, s]["f1"] for s in SEEDS) for op in PACKAGE_KINDS}
    spread = max(med.values()) - min(med.values())
    ok = spread <= 0.05
    detail = ", ".join(f"{op}={f:.4f}" for op, f in med.items()) + f"; spread {spread:.4f}"
    acceptance_report(4, "F1 spread across package ops <= 0.05", ok, detail)
    assert ok


@pytest.mark.slow
def test_criterion_5_mask_constraints(runs, acceptance_report):
    rng = np.random.default_rng(5)
    masks = []
    for _ in range(200):
        m, n = rng.integers(2, 12, size=2)
        budget = float(rng.uniform(1.0, 1.5 * np.sqrt(n)))
        p = ExplainProblem(rng.normal(size=(m, n)), rng.normal(size=m), rng.normal(size=n), rng.normal(size=m), budget)
        masks.append((explain_problem(p).mask, budget))
    r = runs["both", "dot", 0]
    for rec in r["records"][::10]:
        for block, budget in (("cross", 10.0), ("intra", 3.0)):
            masks.append((explain_merchant(r["params"], r["config"], rec, block, budget).mask, budget))
    bad = sum(1 for mask, B in masks if abs(np.linalg.norm(mask) - 1) > 1e-6 or np.abs(mask).sum() > B + 1e-3)
    ok = bad == 0
    acceptance_report(5, "returned masks unit-L2 and within L1 budget", ok, f"{len(masks) - bad}/{len(masks)} satisfy")
    assert ok


def test_criterion_6_recovery(acceptance_report):
    rng = np.random.default_rng(6)
    t0 = time.perf_counter()
    hits = 0
    for _ in range(100):
        W, b, t, o, _ = planted_problem(rng, n=10, k=3)
        p = ExplainProblem(W, b, t, o)
        hits += set(top_features(admm_solve(p, 0.01).mask, 3)) == support_oracle(p.A, p.r)
    elapsed = time.perf_counter() - t0
    ok = hits >= 90 and elapsed < 30
    acceptance_report(6, "planted 3-sparse support recovery >= 90%", ok, f"{hits}/100 in {elapsed:.1f} s")
    assert ok


def test_criterion_7_oracle_equivalence(acceptance_report):
    rng = np.random.default_rng(7)
    backends = kernels.available_backends()
    miner_ok = thr_ok = 0
    for _ in range(1000):
        n = int(rng.integers(1, 20))
        cats = rng.integers(0, 4, size=n)
        scores = np.round(rng.uniform(-1, 1, size=(n, n)), 1)  # coarse grid forces ties
        want = hardest_negative_oracle(cats, scores)
        mined, _ = mine_hardest_negatives(cats, scores)
        miner_ok += mined == [(i, j) for i, j in enumerate(want) if j >= 0] and all(
            list(kernels.hardest_negatives(scores, cats, cats, impl=b)) == want for b in backends
        )
        m = int(rng.integers(2, 40))
        s = np.round(rng.uniform(-1, 1, size=m), 1)
        y = rng.random(m) < 0.5
        y[0], y[1] = True, False
        want_thr, want_f1 = threshold_oracle(list(s), list(y))
        thr_ok += select_threshold(s, y) == want_thr and all(
            kernels.best_threshold(s, y, impl=b) == (want_thr, want_f1) for b in backends
        )
    ok = miner_ok == 1000 and thr_ok == 1000
    detail = f"miner {miner_ok}/1000, threshold {thr_ok}/1000 (backends: {', '.join(backends)})"
    acceptance_report(7, "miner and threshold selector match brute force", ok, detail)
    assert ok


@pytest.mark.slow
def test_criterion_8_embedding_purity(runs, acceptance_report):
    r = runs["both", "dot", 0]
    rows = export_embeddings(r["records"], r["params"], r["config"])
    labels = np.array([row["category"] for row in rows])
    raw = np.stack([row["t"] for row in rows])
    emb = np.stack([row["e_t"] for row in rows])
    k = len(np.unique(labels))
    p_raw = _purity(labels, KMeans(k, n_init=10, random_state=0).fit_predict(raw))
    p_emb = _purity(labels, KMeans(k, n_init=10, random_state=0).fit_predict(emb))
    ok = p_emb > p_raw
    acceptance_report(8, "k-means purity of e_t exceeds raw t", ok, f"e_t {p_emb:.4f} vs t {p_raw:.4f}")
    assert ok


@pytest.mark.slow
def test_criterion_9_determinism(tmp_path, acceptance_report):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"train": {"epochs": 5}}))
    outputs = []
    for i in range(2):
        root = tmp_path / f"rep{i}"
        c = ["--config", str(cfg)]
        ckpt = str(root / "run" / "model.ckpt")
        assert main(["gen-data", *c, "--out", str(root / "data")]) == 0
        assert main(["train", *c, "--data", str(root / "data"), "--out", str(root / "run")]) == 0
        assert main(["eval", *c, "--checkpoint", ckpt, "--data", str(root / "data"), "--out", str(root / "ev")]) == 0
        assert main(["explain", *c, "--checkpoint", ckpt, "--data", str(root / "data"), "--out", str(root / "ex"), "m00000", "m00600"]) == 0
        assert main(["export-embeddings", *c, "--checkpoint", ckpt, "--data", str(root / "data"), "--out", str(root / "emb")]) == 0
        outputs.append({str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()})
    differing = sorted(k for k in outputs[0] if outputs[0][k] != outputs[1].get(k))
    ok = not differing and set(outputs[0]) == set(outputs[1])
    detail = f"{len(outputs[0])} files identical" if ok else f"differing: {differing}"
    acceptance_report(9, "reruns reproduce every output byte-for-byte", ok, detail)
    assert ok
