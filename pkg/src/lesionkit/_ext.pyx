# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels.  ``_pure.py`` holds the reference twin of every function
here; both must return bit-identical results for identical inputs."""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.stdlib cimport malloc, free, calloc
from libc.string cimport memcpy
from libc.math cimport INFINITY
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()


cdef inline uint64_t _splitmix_next(uint64_t* state) noexcept nogil:
    cdef uint64_t z
    state[0] += <uint64_t>0x9E3779B97F4A7C15ULL
    z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline Py_ssize_t _rand_below(uint64_t* state, Py_ssize_t n) noexcept nogil:
    return <Py_ssize_t>(_splitmix_next(state) % <uint64_t>n)


cdef double _wacc_from_scores(const double* acc, double n_members, const int64_t* truth,
                              const double* support, Py_ssize_t S, Py_ssize_t C,
                              int64_t* correct) noexcept nogil:
    cdef Py_ssize_t s, c, best
    cdef double v, top, total
    for c in range(C):
        correct[c] = 0
    for s in range(S):
        best = 0
        top = acc[s * C] / n_members
        for c in range(1, C):
            v = acc[s * C + c] / n_members
            if v > top:
                top = v
                best = c
        if best == truth[s]:
            correct[best] += 1
    total = 0.0
    for c in range(C):
        total = total + (<double>correct[c]) / support[c]
    return total / C


cdef double _wacc_from_votes(const int64_t* votes, const int64_t* truth, const double* support,
                             Py_ssize_t S, Py_ssize_t C, int64_t* correct) noexcept nogil:
    cdef Py_ssize_t s, c, best
    cdef int64_t top
    cdef double total
    for c in range(C):
        correct[c] = 0
    for s in range(S):
        best = 0
        top = votes[s * C]
        for c in range(1, C):
            if votes[s * C + c] > top:
                top = votes[s * C + c]
                best = c
        if best == truth[s]:
            correct[best] += 1
    total = 0.0
    for c in range(C):
        total = total + (<double>correct[c]) / support[c]
    return total / C


cdef void _dfs_average(const double* probs, Py_ssize_t K, Py_ssize_t S, Py_ssize_t C,
                       const int64_t* truth, const double* support, double* bufs,
                       int64_t* correct, Py_ssize_t last, Py_ssize_t depth,
                       int64_t mask, double* out) noexcept nogil:
    cdef Py_ssize_t nxt, e, SC = S * C
    cdef double* prev = bufs + (depth - 1) * SC
    cdef double* cur = bufs + depth * SC
    cdef const double* p
    cdef int64_t child
    for nxt in range(last + 1, K):
        p = probs + nxt * SC
        for e in range(SC):
            cur[e] = prev[e] + p[e]
        child = mask | ((<int64_t>1) << nxt)
        out[child] = _wacc_from_scores(cur, <double>(depth + 1), truth, support, S, C, correct)
        _dfs_average(probs, K, S, C, truth, support, bufs, correct, nxt, depth + 1, child, out)


cdef void _dfs_vote(const int64_t* winners, Py_ssize_t K, Py_ssize_t S, Py_ssize_t C,
                    const int64_t* truth, const double* support, int64_t* votes,
                    int64_t* correct, Py_ssize_t last, int64_t mask, double* out) noexcept nogil:
    cdef Py_ssize_t nxt, s
    cdef const int64_t* w
    cdef int64_t child
    for nxt in range(last + 1, K):
        w = winners + nxt * S
        for s in range(S):
            votes[s * C + w[s]] += 1
        child = mask | ((<int64_t>1) << nxt)
        out[child] = _wacc_from_votes(votes, truth, support, S, C, correct)
        _dfs_vote(winners, K, S, C, truth, support, votes, correct, nxt, child, out)
        for s in range(S):
            votes[s * C + w[s]] -= 1


def subset_wacc_average(double[:, :, ::1] probs, int64_t[::1] truth, double[::1] support,
                        int n_threads=1):
    """WACC of the unit-weight average of every non-empty subset of models.

    ``out[mask]`` holds the score of the subset whose members are the set bits
    of ``mask``; members are summed in ascending index order.
    """
    cdef Py_ssize_t K = probs.shape[0], S = probs.shape[1], C = probs.shape[2]
    cdef Py_ssize_t SC = S * C
    cdef Py_ssize_t j
    cdef double* bufs
    cdef int64_t* correct
    out_arr = np.full(1 << K, np.nan)
    cdef double[::1] out = out_arr
    cdef double* outp = &out[0]
    cdef const double* pp = &probs[0, 0, 0]
    cdef const int64_t* tp = &truth[0]
    cdef const double* sp = &support[0]
    for j in prange(K, nogil=True, schedule="dynamic", chunksize=1, num_threads=max(1, n_threads)):
        bufs = <double*>malloc(K * SC * sizeof(double))
        correct = <int64_t*>malloc(C * sizeof(int64_t))
        memcpy(bufs, pp + j * SC, SC * sizeof(double))
        outp[(<int64_t>1) << j] = _wacc_from_scores(bufs, 1.0, tp, sp, S, C, correct)
        _dfs_average(pp, K, S, C, tp, sp, bufs, correct, j, 1, (<int64_t>1) << j, outp)
        free(bufs)
        free(correct)
    return out_arr


def subset_wacc_vote(int64_t[:, ::1] winners, int64_t[::1] truth, double[::1] support,
                     Py_ssize_t n_classes, int n_threads=1):
    """WACC of unit-weight plurality voting for every non-empty subset.

    ``winners[m, s]`` is the class model ``m`` predicts for sample ``s``.
    Vote ties go to the lowest class index.
    """
    cdef Py_ssize_t K = winners.shape[0], S = winners.shape[1], C = n_classes
    cdef Py_ssize_t j, s
    cdef int64_t* votes
    cdef int64_t* correct
    out_arr = np.full(1 << K, np.nan)
    cdef double[::1] out = out_arr
    cdef double* outp = &out[0]
    cdef const int64_t* wp = &winners[0, 0]
    cdef const int64_t* tp = &truth[0]
    cdef const double* sp = &support[0]
    for j in prange(K, nogil=True, schedule="dynamic", chunksize=1, num_threads=max(1, n_threads)):
        votes = <int64_t*>calloc(S * C, sizeof(int64_t))
        correct = <int64_t*>malloc(C * sizeof(int64_t))
        for s in range(S):
            votes[s * C + wp[j * S + s]] += 1
        outp[(<int64_t>1) << j] = _wacc_from_votes(votes, tp, sp, S, C, correct)
        _dfs_vote(wp, K, S, C, tp, sp, votes, correct, j, (<int64_t>1) << j, outp)
        free(votes)
        free(correct)
    return out_arr


cdef bint _take_step(Py_ssize_t i, Py_ssize_t j, const double[:, ::1] K, const double[::1] y,
                     double[::1] alpha, double[::1] E, double* b, double Creg) noexcept nogil:
    cdef double ai = alpha[i], aj = alpha[j], yi = y[i], yj = y[j]
    cdef double L, H, eta, aj_new, ai_new, b1, b2, bn, di, dj, db
    cdef Py_ssize_t k, n = y.shape[0]
    if yi != yj:
        L = aj - ai
        if L < 0.0:
            L = 0.0
        H = Creg + aj - ai
        if H > Creg:
            H = Creg
    else:
        L = ai + aj - Creg
        if L < 0.0:
            L = 0.0
        H = ai + aj
        if H > Creg:
            H = Creg
    if L >= H:
        return False
    eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
    if eta >= 0.0:
        return False
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
        return False
    ai_new = ai + yi * yj * (aj - aj_new)
    if ai_new < 1e-12 * Creg:
        ai_new = 0.0
    elif ai_new > Creg - 1e-12 * Creg:
        ai_new = Creg
    di = yi * (ai_new - ai)
    dj = yj * (aj_new - aj)
    b1 = b[0] - E[i] - di * K[i, i] - dj * K[i, j]
    b2 = b[0] - E[j] - di * K[i, j] - dj * K[j, j]
    if 0.0 < ai_new < Creg:
        bn = b1
    elif 0.0 < aj_new < Creg:
        bn = b2
    else:
        bn = (b1 + b2) / 2.0
    db = bn - b[0]
    for k in range(n):
        E[k] = E[k] + ((di * K[i, k] + dj * K[j, k]) + db)
    alpha[i] = ai_new
    alpha[j] = aj_new
    b[0] = bn
    return True


cdef double _bias_shift(double[::1] alpha, double[::1] E, const double[::1] y, double Creg) noexcept nogil:
    # shift of b that satisfies KKT best: mean over free vectors, otherwise
    # the midpoint of the interval allowed by the bounded ones
    cdef double free_sum = 0.0, lo = -INFINITY, hi = INFINITY, v
    cdef Py_ssize_t i, n_free = 0
    for i in range(y.shape[0]):
        v = -E[i]
        if 0.0 < alpha[i] and alpha[i] < Creg:
            free_sum = free_sum + v
            n_free = n_free + 1
        elif (alpha[i] == 0.0) == (y[i] > 0.0):
            if v > lo:
                lo = v
        else:
            if v < hi:
                hi = v
    if n_free:
        return free_sum / <double>n_free
    if lo > -INFINITY and hi < INFINITY:
        return (lo + hi) / 2.0
    if lo > -INFINITY:
        return lo
    if hi < INFINITY:
        return hi
    return 0.0


cdef bint _violated(double[::1] alpha, double[::1] E, const double[::1] y, double Creg, double tol) noexcept nogil:
    cdef Py_ssize_t i
    cdef double r
    for i in range(y.shape[0]):
        r = y[i] * E[i]
        if (r < -tol and alpha[i] < Creg) or (r > tol and alpha[i] > 0.0):
            return True
    return False


def smo(const double[:, ::1] K, const double[::1] y, double Creg, double tol,
        Py_ssize_t max_passes, uint64_t seed):
    """Solve the soft-margin SVM dual over a precomputed Gram matrix.

    Returns ``(alpha, b, sweeps, converged)``.
    """
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t i, j, t, start, sweeps = 0, changed = 0
    cdef double r, shift, b = 0.0
    cdef uint64_t state = seed
    cdef bint converged = False
    alpha_arr = np.zeros(n)
    E_arr = -np.asarray(y, dtype=np.float64)
    cdef double[::1] alpha = alpha_arr
    cdef double[::1] E = E_arr
    with nogil:
        while sweeps < max_passes:
            changed = 0
            for i in range(n):
                r = y[i] * E[i]
                if (r < -tol and alpha[i] < Creg) or (r > tol and alpha[i] > 0.0):
                    j = _rand_below(&state, n - 1)
                    if j >= i:
                        j = j + 1
                    if _take_step(i, j, K, y, alpha, E, &b, Creg):
                        changed = changed + 1
                        continue
                    start = _rand_below(&state, n)
                    for t in range(n):
                        j = (start + t) % n
                        if j != i and _take_step(i, j, K, y, alpha, E, &b, Creg):
                            changed = changed + 1
                            break
            sweeps = sweeps + 1
            if changed == 0:
                shift = _bias_shift(alpha, E, y, Creg)
                b = b + shift
                for i in range(n):
                    E[i] = E[i] + shift
                if not _violated(alpha, E, y, Creg, tol):
                    converged = True
                    break
    return alpha_arr, b, sweeps, bool(converged)
