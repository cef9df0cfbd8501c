"""Acceptance suite: the ten end-to-end criteria at their stated tolerances.

Each test records one PASS/FAIL line; ``conftest.py`` prints them in the
terminal summary.  Run directly (``python tests/test_acceptance.py``) for the
same lines without pytest.
"""

from __future__ import annotations

import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from lesionkit import ingest
from lesionkit.balance import class_weights
from lesionkit.cropper import aggregate_mean, augment, crop_grid, extract_crops, flatten_crops
from lesionkit.ensemble import subset_search
from lesionkit.ingest import PredictionTensor, SampleManifest, class_counts
from lesionkit.meta import kkt_residuals, meta_cv, stratified_folds, svm_fit
from lesionkit.metrics import accuracy, confusion_matrix, mean_auc_ovr, wacc
from lesionkit.splits import fold_split, stratified_group_kfold
from lesionkit.trainer import (
    SoftmaxModel,
    TrainConfig,
    loss_gradient,
    predict_proba,
    train,
    weighted_ce_loss,
)

import oracles

RESULTS: list[str] = []


def record(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert passed, line


# ------------------------------------------------------------------ 1

def test_01_metric_correctness():
    rng = np.random.default_rng(2018)
    t0 = time.perf_counter()
    bad = 0
    worst_auc = 0.0
    for _ in range(1000):
        C = int(rng.integers(2, 8))
        S = int(rng.integers(C, 60))
        truth = np.concatenate([np.arange(C), rng.integers(0, C, S - C)])
        rng.shuffle(truth)
        pred = rng.integers(0, C, S)
        scores = np.round(oracles.random_stochastic(rng, (S, C)), 2)  # rounding forces ties
        m = confusion_matrix(truth, pred, C)
        if wacc(m) != oracles.brute_wacc(list(truth), list(pred), C):
            bad += 1
        if accuracy(m) != oracles.brute_accuracy(truth, pred):
            bad += 1
        worst_auc = max(worst_auc, abs(mean_auc_ovr(truth, scores) - oracles.brute_mean_auc(list(truth), scores)))
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and worst_auc < 1e-9 and elapsed < 10
    record(1, "metric correctness", ok,
           f"{bad} exact mismatches, max AUC error {worst_auc:.1e}, {elapsed:.1f}s (< 10s)")


# ------------------------------------------------------------------ 2

def test_02_weighting_trend():
    t0 = time.perf_counter()
    wins = 0
    for seed in range(10):
        X, y = oracles.imbalanced_gaussians(seed)
        manifest = SampleManifest.from_records([(f"s{i}", f"g{i}", int(c)) for i, c in enumerate(y)], 7)
        folds = stratified_group_kfold(manifest, 5, seed)
        counts = class_counts(manifest)
        cfg = TrainConfig(seed=seed)
        best = []
        for mode in ("none", "inverse_freq"):
            result = train(X, manifest, folds, 0, class_weights(counts, mode), cfg=cfg)
            best.append(max(w for _, w in result.history.evaluations))
        wins += best[1] > best[0]
    elapsed = time.perf_counter() - t0
    record(2, "weighting trend", wins >= 8 and elapsed < 120,
           f"inverse_freq beats none on {wins}/10 seeds, {elapsed:.1f}s (< 120s)")


# ------------------------------------------------------------------ 3

def _multicrop_seed(seed, n_train=200, n_val=120, per_image=8, H=40, crop=12):
    rng = np.random.default_rng(seed)
    y_train = rng.integers(0, 4, n_train)
    y_val = np.arange(n_val) % 4
    train_imgs = [oracles.blob_image(rng, c, H, H) for c in y_train]
    val_imgs = [oracles.blob_image(rng, c, H, H) for c in y_val]
    feats, labels = [], []
    for img, c in zip(train_imgs, y_train):
        for _ in range(per_image):
            feats.append(oracles.crop_features(augment(img, crop, rng, 0.05, (0.9, 1.1))))
            labels.append(int(c))
    F = np.array(feats)
    mu, sd = F.mean(axis=0), F.std(axis=0)
    manifest = SampleManifest.from_records(
        [(str(i), str(i // per_image), c) for i, c in enumerate(labels)], 4
    )
    cfg = TrainConfig(seed=seed, max_epochs=60, first_drop=30, drop_every=15)
    model = train((F - mu) / sd, manifest, cfg=cfg).best_model
    out = []
    for R in (4, 16, 36):
        grid = crop_grid(H, H, crop, R)
        pred = []
        for img in val_imgs:
            Xc = (np.array([oracles.crop_features(c) for c in extract_crops(img, grid)]) - mu) / sd
            pred.append(int(aggregate_mean(predict_proba(model, Xc)).argmax()))
        out.append(wacc(confusion_matrix(y_val, pred, 4)))
    return out


def test_03_multicrop_trend():
    t0 = time.perf_counter()
    ok = 0
    for seed in range(10):
        w4, w16, w36 = _multicrop_seed(seed)
        ok += w4 <= w16 <= w36
    elapsed = time.perf_counter() - t0
    record(3, "multi-crop trend", ok >= 8 and elapsed < 120,
           f"WACC non-decreasing over R=4,16,36 on {ok}/10 seeds, {elapsed:.1f}s (< 120s)")


# ------------------------------------------------------------------ 4

def test_04_meta_learner_trend():
    ok = 0
    gaps = []
    for seed in range(10):
        P, y = oracles.center_informative_crops(seed)
        X = np.stack([flatten_crops(p) for p in P])
        folds = stratified_folds(y, 10, seed)
        base = []
        for f in range(10):
            val = folds == f
            base.append(wacc(confusion_matrix(y[val], P[val].mean(axis=1).argmax(axis=1), 3)))
        svm = meta_cv(X, y, 10, seed=seed)
        ok += svm >= float(np.mean(base))
        gaps.append(svm - float(np.mean(base)))
    record(4, "meta-learner trend", ok >= 8,
           f"SVM >= mean-argmax on {ok}/10 seeds (10-fold CV), median gain {np.median(gaps):+.3f}")


# ------------------------------------------------------------------ 5

def test_05_ensemble_superiority():
    never_worse = 0
    strictly_better = 0
    for seed in range(10):
        P, y = oracles.complementary_models(seed)
        result = subset_search(P, y, top_k=15)
        best_single = max(result.individual_wacc)
        never_worse += result.wacc >= best_single
        strictly_better += result.wacc > best_single
    ok = never_worse == 10 and strictly_better >= 8
    record(5, "ensemble superiority", ok,
           f">= best single on {never_worse}/10, strictly better on {strictly_better}/10")


# ------------------------------------------------------------------ 6

def test_06_subset_search_oracle():
    rng = np.random.default_rng(6)
    mismatches = 0
    cases = 0
    for M in range(1, 11):
        for rule in ("average", "vote"):
            C = int(rng.integers(2, 5))
            S = 40
            truth = np.concatenate([np.arange(C), rng.integers(0, C, S - C)])
            P = oracles.random_stochastic(rng, (M, S, C))
            res = subset_search(P, truth, top_k=15, rule=rule)
            members, score = oracles.brute_subset_search(P, truth, C, rule)
            cases += 1
            mismatches += res.members != members or res.wacc != score
    P = oracles.random_stochastic(rng, (20, 2000, 7))
    truth = np.concatenate([np.arange(7), rng.integers(0, 7, 1993)])
    t0 = time.perf_counter()
    res = subset_search(P, truth, top_k=15)
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and res.n_evaluated == 32767 and elapsed < 30
    record(6, "subset-search oracle", ok,
           f"{cases - mismatches}/{cases} brute-force matches (M<=10), {res.n_evaluated} subsets "
           f"for top_k=15 in {elapsed:.1f}s (< 30s)")


# ------------------------------------------------------------------ 7

def test_07_smo_correctness():
    rng = np.random.default_rng(7)
    tol = 1e-3
    worst_gap = 0.0
    worst_kkt = 0.0
    unconverged = 0
    for _ in range(50):
        S = int(rng.integers(4, 13))
        F = int(rng.integers(1, 5))
        X = rng.normal(size=(S, F))
        y = np.where(rng.random(S) < 0.5, 1.0, -1.0)
        y[0], y[1] = 1.0, -1.0
        C_reg = float(10 ** rng.uniform(-1, 1))
        gamma = float(10 ** rng.uniform(-1, 0.5))
        model = svm_fit(X, y, C_reg, gamma, tol=tol, max_passes=1000)
        K = oracles.gaussian_gram(X, gamma)
        ay = model.alpha * y
        ours = float(model.alpha.sum() - 0.5 * ay @ K @ ay)
        _, ref = oracles.qp_dual(K, y, C_reg)
        worst_gap = max(worst_gap, abs(ours - ref))
        worst_kkt = max(worst_kkt, float(kkt_residuals(model.alpha, y, K, model.bias, C_reg).max()))
        unconverged += not model.converged
    ok = worst_gap < 1e-4 and worst_kkt <= tol * (1 + 1e-9) and unconverged == 0
    record(7, "SMO correctness", ok,
           f"max |dual - QP| {worst_gap:.1e} (< 1e-4), max KKT residual {worst_kkt:.2e} (<= {tol}), "
           f"{50 - unconverged}/50 converged")


# ------------------------------------------------------------------ 8

def test_08_gradient_check():
    rng = np.random.default_rng(8)
    eps = 1e-5
    worst = 0.0
    for _ in range(100):
        C = int(rng.integers(2, 8))
        D = int(rng.integers(1, 9))
        W = rng.normal(size=(C, D))
        b = rng.normal(size=C)
        x = rng.normal(size=D)
        label = int(rng.integers(0, C))
        w = float(rng.uniform(0.1, 90.0))
        gW, gb = loss_gradient(SoftmaxModel(W, b), x, label, w)
        analytic = np.concatenate([gW.ravel(), gb])
        theta = np.concatenate([W.ravel(), b])

        def loss(t):
            return weighted_ce_loss(t[: C * D].reshape(C, D) @ x + t[C * D:], label, w)

        numeric = np.empty_like(theta)
        for i in range(theta.size):
            up, dn = theta.copy(), theta.copy()
            up[i] += eps
            dn[i] -= eps
            numeric[i] = (loss(up) - loss(dn)) / (2 * eps)
        rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
        worst = max(worst, rel)
    record(8, "gradient check", worst < 1e-4, f"max relative error {worst:.1e} over 100 configurations (< 1e-4)")


# ------------------------------------------------------------------ 9

def test_09_split_invariants():
    rng = np.random.default_rng(9)
    failures = 0
    for _ in range(1000):
        k = int(rng.integers(2, 7))
        C = int(rng.integers(2, 6))
        n_groups = int(rng.integers(k, 40))
        records = oracles.random_manifest_records(rng, n_groups, C, secondary_frac=float(rng.uniform(0, 0.3)))
        primary_groups = {r[1] for r in records if r[4] == "primary"}
        if len(primary_groups) < k:
            records.extend((f"p{j}", f"p{j}", 0, "unknown", "primary") for j in range(k))
        manifest = SampleManifest.from_records(records, C)
        assignment = stratified_group_kfold(manifest, k, int(rng.integers(0, 2**31)))
        problems = oracles.check_split_invariants(manifest, assignment, k)
        n_primary = sum(s.dataset.value == "primary" for s in manifest.samples)
        for f in range(k):
            tr, va = fold_split(assignment, f, manifest)
            if set(tr) & set(va) or len(tr) + len(va) != n_primary:
                problems.append("fold_split is not a partition of the primary samples")
        failures += bool(problems)
    record(9, "split invariants", failures == 0, f"{1000 - failures}/1000 fuzzed manifests satisfy all invariants")


# ------------------------------------------------------------------ 10

def _write_final_fixture(root: Path, seed=10, S=40, R=36, C=7):
    rng = np.random.default_rng(seed)
    labels = np.concatenate([np.arange(C), rng.integers(0, C, S - C)])
    manifest = SampleManifest.from_records([(f"img{i:03d}", f"les{i // 2}", int(c)) for i, c in enumerate(labels)], C)
    ingest.save_manifest(manifest, root / "manifest.csv")
    ids = tuple(manifest.sample_ids)

    def tensor(prefix, n):
        logits = 1.5 * np.eye(C)[labels][None, :, None, :] + rng.normal(size=(n, S, R, C))
        p = np.exp(logits)
        return PredictionTensor(tuple(f"{prefix}{m}" for m in range(n)), ids, p / p.sum(axis=-1, keepdims=True))

    ingest.save_predictions(tensor("full", 1), root / "full.csv")
    ingest.save_predictions(tensor("cv", 5), root / "cv.csv")


def _run_pipeline(root: Path, workdir: Path, env_extra: dict) -> dict[str, bytes]:
    workdir.mkdir()
    env = dict(os.environ, **env_extra)
    steps = [
        ["ensemble-search", "--manifest", root / "manifest.csv", "--predictions", root / "cv.csv",
         "--top-k", "15", "--out", workdir / "ensemble.csv"],
        ["meta-train", "--manifest", root / "manifest.csv", "--predictions", root / "cv.csv",
         "--out", workdir / "meta.csv"],
        ["final", "--manifest", root / "manifest.csv", "--full", root / "full.csv", "--cv", root / "cv.csv",
         "--meta", workdir / "meta.csv", "--out-dir", workdir],
    ]
    for step in steps:
        proc = subprocess.run([sys.executable, "-m", "lesionkit", *map(str, step)], env=env,
                              capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
    return {p.name: p.read_bytes() for p in sorted(workdir.iterdir())}


def test_10_determinism(tmp_path):
    _write_final_fixture(tmp_path)
    runs = [
        _run_pipeline(tmp_path, tmp_path / "run_a", {"LESIONKIT_NUM_THREADS": "1"}),
        _run_pipeline(tmp_path, tmp_path / "run_b", {"LESIONKIT_NUM_THREADS": "1"}),
        _run_pipeline(tmp_path, tmp_path / "run_c", {"LESIONKIT_NUM_THREADS": "4"}),
        _run_pipeline(tmp_path, tmp_path / "run_d", {"LESIONKIT_PURE_PYTHON": "1"}),
    ]
    identical = all(r == runs[0] for r in runs[1:])
    final = (tmp_path / "run_a" / "final_predictions.csv").read_text().splitlines()
    rows_ok = len(final) == 41 and all(
        abs(sum(float(v) for v in line.split(",")[1:-1]) - 1.0) < 1e-6 for line in final[1:]
    )
    record(10, "determinism", identical and rows_ok,
           f"{len(runs[0])} artifacts byte-identical across 2 runs, 1 vs 4 threads and both backends; "
           f"stochastic rows: {rows_ok}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
