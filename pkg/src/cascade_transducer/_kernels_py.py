"""Pure-Python versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and results; used when the extension is not built or when
``CASCADE_PURE_PYTHON=1`` is set.
"""
import math

import numpy as np

LOG_ZERO = float(np.finfo(np.float64).min)


def _log_add(a: float, b: float) -> float:
    if a <= LOG_ZERO:
        return b
    if b <= LOG_ZERO:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def rnnt_alpha_beta(lp_blank, lp_label):
    blank = np.asarray(lp_blank, dtype=np.float64).tolist()
    label = np.asarray(lp_label, dtype=np.float64).tolist()
    T = len(blank)
    U1 = len(blank[0])
    alpha = [[0.0] * U1 for _ in range(T)]
    beta = [[0.0] * U1 for _ in range(T)]
    for t in range(T):
        for u in range(U1):
            if t == 0 and u == 0:
                continue
            a = LOG_ZERO
            if t > 0:
                a = alpha[t - 1][u] + blank[t - 1][u]
            if u > 0:
                a = _log_add(a, alpha[t][u - 1] + label[t][u - 1])
            alpha[t][u] = a
    for t in range(T - 1, -1, -1):
        for u in range(U1 - 1, -1, -1):
            if t == T - 1 and u == U1 - 1:
                beta[t][u] = blank[t][u]
                continue
            a = LOG_ZERO
            if t < T - 1:
                a = blank[t][u] + beta[t + 1][u]
            if u < U1 - 1:
                a = _log_add(a, label[t][u] + beta[t][u + 1])
            beta[t][u] = a
    return np.array(alpha), np.array(beta), alpha[T - 1][U1 - 1] + blank[T - 1][U1 - 1]


def edit_counts(ref, hyp):
    ref = list(ref)
    hyp = list(hyp)
    n, m = len(ref), len(hyp)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dp[i][0] = i
    for j in range(m + 1):
        dp[0][j] = j
    for i in range(1, n + 1):
        row, prev = dp[i], dp[i - 1]
        r = ref[i - 1]
        for j in range(1, m + 1):
            row[j] = min(prev[j - 1] + (r != hyp[j - 1]), prev[j] + 1, row[j - 1] + 1)
    dels = ins = subs = cor = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            cost = int(ref[i - 1] != hyp[j - 1])
            if dp[i][j] == dp[i - 1][j - 1] + cost:
                subs += cost
                cor += 1 - cost
                i -= 1
                j -= 1
                continue
        if i > 0 and dp[i][j] == dp[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return dels, ins, subs, cor
