"""Pure-Python twins of the compiled kernels in ``_ext.pyx``.

Arithmetic is ordered exactly as in the compiled code so both backends give
bit-identical answers.  ``n_threads`` is accepted and ignored.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1


class _SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        return self.next() % n


def _wacc(pred: np.ndarray, truth: np.ndarray, support: np.ndarray) -> float:
    C = support.size
    correct = np.bincount(truth[pred == truth], minlength=C)
    total = 0.0
    for c in range(C):
        total = total + float(correct[c]) / float(support[c])
    return total / C


def subset_wacc_average(probs, truth, support, n_threads: int = 1) -> np.ndarray:
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    truth = np.ascontiguousarray(truth, dtype=np.int64)
    support = np.ascontiguousarray(support, dtype=np.float64)
    K = probs.shape[0]
    out = np.full(1 << K, np.nan)

    def visit(acc, depth, last, mask):
        for nxt in range(last + 1, K):
            cur = acc + probs[nxt]
            child = mask | (1 << nxt)
            out[child] = _wacc((cur / float(depth + 1)).argmax(axis=1), truth, support)
            visit(cur, depth + 1, nxt, child)

    for j in range(K):
        out[1 << j] = _wacc((probs[j] / 1.0).argmax(axis=1), truth, support)
        visit(probs[j], 1, j, 1 << j)
    return out


def subset_wacc_vote(winners, truth, support, n_classes: int, n_threads: int = 1) -> np.ndarray:
    winners = np.ascontiguousarray(winners, dtype=np.int64)
    truth = np.ascontiguousarray(truth, dtype=np.int64)
    support = np.ascontiguousarray(support, dtype=np.float64)
    K, S = winners.shape
    out = np.full(1 << K, np.nan)
    rows = np.arange(S)

    def visit(votes, last, mask):
        for nxt in range(last + 1, K):
            votes[rows, winners[nxt]] += 1
            child = mask | (1 << nxt)
            out[child] = _wacc(votes.argmax(axis=1), truth, support)
            visit(votes, nxt, child)
            votes[rows, winners[nxt]] -= 1

    for j in range(K):
        votes = np.zeros((S, n_classes), dtype=np.int64)
        votes[rows, winners[j]] += 1
        out[1 << j] = _wacc(votes.argmax(axis=1), truth, support)
        visit(votes, j, 1 << j)
    return out


def _take_step(i, j, K, y, alpha, E, b, Creg):
    ai, aj, yi, yj = alpha[i], alpha[j], y[i], y[j]
    if yi != yj:
        L = max(0.0, aj - ai)
        H = min(Creg, Creg + aj - ai)
    else:
        L = max(0.0, ai + aj - Creg)
        H = min(Creg, ai + aj)
    if L >= H:
        return None
    eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
    if eta >= 0.0:
        return None
    aj_new = aj - yj * (E[i] - E[j]) / eta
    if aj_new > H:
        aj_new = H
    elif aj_new < L:
        aj_new = L
    if aj_new < 1e-12 * Creg:
        aj_new = 0.0
    elif aj_new > Creg - 1e-12 * Creg:
        aj_new = Creg
    if abs(aj_new - aj) < 1e-12 * (aj_new + aj + 1e-12):
        return None
    ai_new = ai + yi * yj * (aj - aj_new)
    if ai_new < 1e-12 * Creg:
        ai_new = 0.0
    elif ai_new > Creg - 1e-12 * Creg:
        ai_new = Creg
    di = yi * (ai_new - ai)
    dj = yj * (aj_new - aj)
    b1 = b - E[i] - di * K[i, i] - dj * K[i, j]
    b2 = b - E[j] - di * K[i, j] - dj * K[j, j]
    if 0.0 < ai_new < Creg:
        bn = b1
    elif 0.0 < aj_new < Creg:
        bn = b2
    else:
        bn = (b1 + b2) / 2.0
    E += (di * K[i] + dj * K[j]) + (bn - b)
    alpha[i] = ai_new
    alpha[j] = aj_new
    return bn


def _bias_shift(alpha, E, y, Creg) -> float:
    # shift of b that satisfies KKT best: mean over free vectors, otherwise
    # the midpoint of the interval allowed by the bounded ones
    free_sum = 0.0
    n_free = 0
    lo = -math.inf
    hi = math.inf
    for i in range(len(y)):
        v = -E[i]
        if 0.0 < alpha[i] < Creg:
            free_sum = free_sum + v
            n_free += 1
        elif (alpha[i] == 0.0) == (y[i] > 0.0):
            lo = max(lo, v)
        else:
            hi = min(hi, v)
    if n_free:
        return free_sum / n_free
    if lo > -math.inf and hi < math.inf:
        return (lo + hi) / 2.0
    if lo > -math.inf:
        return lo
    if hi < math.inf:
        return hi
    return 0.0


def _violated(alpha, E, y, Creg, tol) -> bool:
    for i in range(len(y)):
        r = y[i] * E[i]
        if (r < -tol and alpha[i] < Creg) or (r > tol and alpha[i] > 0.0):
            return True
    return False


def smo(K, y, Creg: float, tol: float, max_passes: int, seed: int):
    K = np.ascontiguousarray(K, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n = y.size
    alpha = np.zeros(n)
    E = -y.copy()
    b = 0.0
    rng = _SplitMix64(seed)
    Kd = K.tolist()  # scalar reads from lists are much cheaper than from arrays

    class _Rows:
        # K[i, j] on the list copy, K[i] on the array (for the vectorized update)
        def __getitem__(self, key):
            if isinstance(key, tuple):
                return Kd[key[0]][key[1]]
            return K[key]

    Kv = _Rows()
    yl = y.tolist()
    sweeps = 0
    converged = False
    while sweeps < max_passes:
        changed = 0
        for i in range(n):
            r = yl[i] * E[i]
            if (r < -tol and alpha[i] < Creg) or (r > tol and alpha[i] > 0.0):
                j = rng.below(n - 1)
                if j >= i:
                    j += 1
                bn = _take_step(i, j, Kv, yl, alpha, E, b, Creg)
                if bn is not None:
                    b = bn
                    changed += 1
                    continue
                start = rng.below(n)
                for t in range(n):
                    j = (start + t) % n
                    if j != i:
                        bn = _take_step(i, j, Kv, yl, alpha, E, b, Creg)
                        if bn is not None:
                            b = bn
                            changed += 1
                            break
        sweeps += 1
        if changed == 0:
            shift = _bias_shift(alpha, E, yl, Creg)
            b = b + shift
            for i in range(n):
                E[i] = E[i] + shift
            if not _violated(alpha, E, yl, Creg, tol):
                converged = True
                break
    return alpha, b, sweeps, converged
