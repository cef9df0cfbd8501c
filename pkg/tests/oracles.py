"""Independent reference implementations and synthetic fixtures for the tests.

Nothing here imports the code under test except for building inputs.
"""

from __future__ import annotations

import itertools

import numpy as np

HAM_COUNTS = (1113, 6705, 514, 327, 1099, 115, 142)


# --------------------------------------------------------------- metrics

def brute_wacc(truth, pred, C):
    recalls = []
    for c in range(C):
        idx = [i for i, t in enumerate(truth) if t == c]
        recalls.append(sum(1 for i in idx if pred[i] == c) / len(idx))
    return sum(recalls) / C


def brute_accuracy(truth, pred):
    return sum(1 for t, p in zip(truth, pred) if t == p) / len(truth)


def brute_auc(positive, scores):
    pos = [s for s, p in zip(scores, positive) if p]
    neg = [s for s, p in zip(scores, positive) if not p]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def brute_mean_auc(truth, scores):
    C = scores.shape[1]
    return sum(brute_auc([t == c for t in truth], scores[:, c]) for c in range(C)) / C


# --------------------------------------------------------------- SVM dual

def project_box_hyperplane(v, y, C):
    """Euclidean projection onto {0 <= a <= C, y.a = 0} by exact breakpoint search."""
    bps = np.sort(np.concatenate([v / y, (v - C) / y]))
    vals = (y[None, :] * np.clip(v[None, :] - bps[:, None] * y[None, :], 0, C)).sum(axis=1)
    k = np.searchsorted(-vals, 0.0)
    if k == 0:
        nu = bps[0]
    elif k == len(bps):
        nu = bps[-1]
    else:
        a, b = bps[k - 1], bps[k]
        fa, fb = vals[k - 1], vals[k]
        nu = a if fa == fb else a + fa * (b - a) / (fa - fb)
    return np.clip(v - nu * y, 0, C)


def qp_dual(K, y, C, iters=4000):
    """Accelerated projected gradient on the soft-margin dual; returns (alpha, objective)."""
    Q = (y[:, None] * y[None, :]) * K
    L = np.linalg.eigvalsh(Q).max()
    a = np.zeros(len(y))
    z = a.copy()
    t = 1.0
    for _ in range(iters):
        an = project_box_hyperplane(z - (Q @ z - 1) / L, y, C)
        tn = (1 + np.sqrt(1 + 4 * t * t)) / 2
        z = an + (t - 1) / tn * (an - a)
        a, t = an, tn
    return a, float(a.sum() - 0.5 * a @ Q @ a)


def gaussian_gram(X, gamma):
    n = len(X)
    K = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            d = X[i] - X[j]
            K[i, j] = np.exp(-gamma * float(d @ d))
    return K


# --------------------------------------------------------------- subset search

def brute_subset_search(P, truth, C, rule="average"):
    """Best subset over all non-empty subsets; ties to smaller size, then lexicographic."""
    M = P.shape[0]
    best = None
    for size in range(1, M + 1):
        for combo in itertools.combinations(range(M), size):
            if rule == "average":
                acc = P[combo[0]].copy()
                for m in combo[1:]:
                    acc = acc + P[m]
                pred = (acc / float(len(combo))).argmax(axis=1)
            else:
                votes = np.zeros((P.shape[1], C), dtype=np.int64)
                for m in combo:
                    votes[np.arange(P.shape[1]), P[m].argmax(axis=1)] += 1
                pred = votes.argmax(axis=1)
            score = brute_wacc(list(truth), list(pred), C)
            key = (-score, size, combo)
            if best is None or key < best:
                best = key
    return best[2], -best[0]


# --------------------------------------------------------------- splits

def check_split_invariants(manifest, assignment, k):
    """Return a list of violated invariants (empty when all hold)."""
    problems = []
    primary = [s for s in manifest.samples if s.dataset.value == "primary"]
    fold_of = assignment.fold_of
    if set(fold_of) != {s.sample_id for s in primary}:
        problems.append("assignment does not cover exactly the primary samples")
    by_group = {}
    for s in primary:
        by_group.setdefault(s.group_id, set()).add(fold_of.get(s.sample_id))
    if any(len(f) != 1 for f in by_group.values()):
        problems.append("a group spans several folds")
    if any(not (0 <= f < k) for f in fold_of.values()):
        problems.append("fold index out of range")
    used = set(fold_of.values())
    if len(by_group) >= k and used != set(range(k)):
        problems.append("an empty fold")
    folds = assignment.folds()
    flat = [sid for f in folds for sid in f]
    if sorted(flat) != sorted(fold_of) or len(flat) != len(set(flat)):
        problems.append("folds do not partition the samples")
    return problems


def random_manifest_records(rng, n_groups, C, secondary_frac=0.0):
    records = []
    for g in range(n_groups):
        size = int(rng.integers(1, 5))
        label = int(rng.integers(0, C))
        dataset = "secondary" if rng.random() < secondary_frac else "primary"
        for j in range(size):
            records.append((f"g{g}_{j}", f"g{g}", label, "unknown", dataset))
    return records


# --------------------------------------------------------------- trend fixtures

def imbalanced_gaussians(seed, S=3000, D=6, sep=1.0):
    """Seven overlapping Gaussian classes in the HAM frequency profile."""
    rng = np.random.default_rng(seed)
    ham = np.array(HAM_COUNTS)
    n = np.maximum(np.round(ham / ham.sum() * S).astype(int), 1)
    means = rng.normal(scale=sep, size=(7, D))
    X = np.concatenate([rng.normal(size=(k, D)) + means[c] for c, k in enumerate(n)])
    y = np.concatenate([[c] * k for c, k in enumerate(n)])
    return X, y


BLOB_COLORS = np.array([[0.25, 0, 0], [0, 0.25, 0], [0, 0, 0.25], [0.18, 0.18, -0.18]])


def blob_image(rng, c, H=40, W=40, blob=8):
    """Noisy gray image with a class-tinted square at a random place."""
    base = rng.uniform(0.4, 0.6) + rng.normal(scale=0.03, size=3)
    img = base + rng.normal(scale=0.08, size=(H, W, 3))
    r, q = rng.integers(0, H - blob + 1), rng.integers(0, W - blob + 1)
    img[r:r + blob, q:q + blob] += BLOB_COLORS[c]
    return np.clip(img, 0, 1)


def crop_features(crop):
    p = crop.reshape(-1, 3)
    return np.concatenate([p.mean(axis=0), p.std(axis=0)])


def center_informative_crops(seed, S=150, C=3, R=9, border_bias=0.3):
    """Crop predictions where only the center crop knows the class.

    Border crops lean toward class 0, so averaging crops washes the signal
    out while the crop-wise pattern still identifies the class.
    """
    rng = np.random.default_rng(seed)
    y = np.arange(S) % C
    P = np.empty((S, R, C))
    for s in range(S):
        for r in range(R):
            logit = rng.normal(scale=0.5, size=C)
            if r == R // 2:
                logit[y[s]] += 2.0
            else:
                logit[0] += border_bias
            e = np.exp(logit - logit.max())
            P[s, r] = e / e.sum()
    return P, y


def complementary_models(seed, M=6, S=400, C=4, noise=1.0):
    """Models that each see the truth through independent noise."""
    rng = np.random.default_rng(seed)
    y = np.arange(S) % C
    onehot = np.eye(C)[y]
    P = np.empty((M, S, C))
    for m in range(M):
        logit = 1.2 * onehot + rng.normal(scale=noise, size=(S, C))
        e = np.exp(logit - logit.max(axis=1, keepdims=True))
        P[m] = e / e.sum(axis=1, keepdims=True)
    return P, y


def random_stochastic(rng, shape):
    x = rng.random(shape) + 1e-3
    return x / x.sum(axis=-1, keepdims=True)
