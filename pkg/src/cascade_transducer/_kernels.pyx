# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: transducer lattice recursions and edit-distance backtrace."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p

cnp.import_array()

cdef double LOG_ZERO = -1.7976931348623157e308


cdef inline double log_add(double a, double b) nogil:
    cdef double tmp
    if a <= LOG_ZERO:
        return b
    if b <= LOG_ZERO:
        return a
    if a < b:
        tmp = a
        a = b
        b = tmp
    return a + log1p(exp(b - a))


def rnnt_alpha_beta(const double[:, ::1] lp_blank, const double[:, ::1] lp_label):
    """Forward and backward log-scores over a T x (U+1) transducer lattice.

    ``lp_blank[t, u]`` is log P(blank | t, u); ``lp_label[t, u]`` is the log
    probability of the (u+1)-th target label at (t, u), shape T x U.
    Returns ``(alpha, beta, log_likelihood)``.
    """
    cdef Py_ssize_t T = lp_blank.shape[0]
    cdef Py_ssize_t U1 = lp_blank.shape[1]
    cdef Py_ssize_t t, u
    cdef double a
    alpha_np = np.empty((T, U1), dtype=np.float64)
    beta_np = np.empty((T, U1), dtype=np.float64)
    cdef double[:, ::1] alpha = alpha_np
    cdef double[:, ::1] beta = beta_np
    with nogil:
        for t in range(T):
            for u in range(U1):
                if t == 0 and u == 0:
                    alpha[0, 0] = 0.0
                    continue
                a = LOG_ZERO
                if t > 0:
                    a = alpha[t - 1, u] + lp_blank[t - 1, u]
                if u > 0:
                    a = log_add(a, alpha[t, u - 1] + lp_label[t, u - 1])
                alpha[t, u] = a
        for t in range(T - 1, -1, -1):
            for u in range(U1 - 1, -1, -1):
                if t == T - 1 and u == U1 - 1:
                    beta[t, u] = lp_blank[t, u]
                    continue
                a = LOG_ZERO
                if t < T - 1:
                    a = lp_blank[t, u] + beta[t + 1, u]
                if u < U1 - 1:
                    a = log_add(a, lp_label[t, u] + beta[t, u + 1])
                beta[t, u] = a
    return alpha_np, beta_np, alpha_np[T - 1, U1 - 1] + lp_blank[T - 1, U1 - 1]


def edit_counts(const cnp.int64_t[:] ref, const cnp.int64_t[:] hyp):
    """Levenshtein alignment counts ``(deletions, insertions, substitutions, correct)``.

    Backtrace prefers the diagonal (match or substitution), then deletion,
    then insertion, so ties resolve the same way everywhere.
    """
    cdef Py_ssize_t n = ref.shape[0]
    cdef Py_ssize_t m = hyp.shape[0]
    cdef Py_ssize_t i, j
    cdef long best, cand, cost
    cdef long dels = 0, ins = 0, subs = 0, cor = 0
    dp_np = np.empty((n + 1, m + 1), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] dp = dp_np
    with nogil:
        for i in range(n + 1):
            dp[i, 0] = i
        for j in range(m + 1):
            dp[0, j] = j
        for i in range(1, n + 1):
            for j in range(1, m + 1):
                cost = 0 if ref[i - 1] == hyp[j - 1] else 1
                best = dp[i - 1, j - 1] + cost
                cand = dp[i - 1, j] + 1
                if cand < best:
                    best = cand
                cand = dp[i, j - 1] + 1
                if cand < best:
                    best = cand
                dp[i, j] = best
        i = n
        j = m
        while i > 0 or j > 0:
            if i > 0 and j > 0:
                cost = 0 if ref[i - 1] == hyp[j - 1] else 1
                if dp[i, j] == dp[i - 1, j - 1] + cost:
                    if cost:
                        subs += 1
                    else:
                        cor += 1
                    i -= 1
                    j -= 1
                    continue
            if i > 0 and dp[i, j] == dp[i - 1, j] + 1:
                dels += 1
                i -= 1
            else:
                ins += 1
                j -= 1
    return dels, ins, subs, cor
