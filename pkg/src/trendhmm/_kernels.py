"""Numba kernels for the chain sampler and the log-domain forward/backward passes.

Every kernel takes log-emission matrices, so blocked or frozen variants of the
likelihood only differ in how that matrix is built.  ``-inf`` entries are legal
everywhere (zero transition probabilities, incompatible blocks).
"""
import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True)
def _lse(v):
    m = NEG_INF
    for i in range(v.shape[0]):
        if v[i] > m:
            m = v[i]
    if m == NEG_INF:
        return NEG_INF
    s = 0.0
    for i in range(v.shape[0]):
        s += np.exp(v[i] - m)
    return m + np.log(s)


@njit(cache=True)
def sample_chain(cum_q, x0, u):
    n = u.shape[0] + 1
    k = cum_q.shape[0]
    x = np.empty(n, dtype=np.int64)
    x[0] = x0
    for t in range(1, n):
        row = cum_q[x[t - 1]]
        j = 0
        while j < k - 1 and u[t - 1] >= row[j]:
            j += 1
        x[t] = j
    return x


@njit(cache=True)
def forward(log_pi, log_q, log_b):
    """Normalised log filter and per-step increments ``log p(y_t | y_1^{t-1})``.

    Stops at the first step whose increment is ``-inf``; later rows stay NaN.
    """
    n, k = log_b.shape
    la = np.full((n, k), np.nan)
    inc = np.full(n, np.nan)
    tmp = np.empty(k)
    row = np.empty(k)
    for x in range(k):
        row[x] = log_pi[x] + log_b[0, x]
    c = _lse(row)
    inc[0] = c
    if c == NEG_INF:
        return la, inc
    for x in range(k):
        la[0, x] = row[x] - c
    for t in range(1, n):
        for y in range(k):
            for x in range(k):
                tmp[x] = la[t - 1, x] + log_q[x, y]
            row[y] = _lse(tmp) + log_b[t, y]
        c = _lse(row)
        inc[t] = c
        if c == NEG_INF:
            return la, inc
        for y in range(k):
            la[t, y] = row[y] - c
    return la, inc


@njit(cache=True)
def backward(log_q, log_b):
    """Per-step normalised log backward messages (constant shifts cancel in smoothing)."""
    n, k = log_b.shape
    lb = np.zeros((n, k))
    tmp = np.empty(k)
    row = np.empty(k)
    for t in range(n - 2, -1, -1):
        for x in range(k):
            for y in range(k):
                tmp[y] = log_q[x, y] + log_b[t + 1, y] + lb[t + 1, y]
            row[x] = _lse(tmp)
        c = _lse(row)
        for x in range(k):
            lb[t, x] = row[x] - c
    return lb


@njit(cache=True)
def smooth(la, lb, log_q, log_b):
    n, k = la.shape
    gamma = np.empty((n, k))
    xi = np.empty((max(n - 1, 0), k, k))
    row = np.empty(k)
    pair = np.empty(k * k)
    for t in range(n):
        for x in range(k):
            row[x] = la[t, x] + lb[t, x]
        c = _lse(row)
        for x in range(k):
            gamma[t, x] = np.exp(row[x] - c)
    for t in range(n - 1):
        for x in range(k):
            for y in range(k):
                pair[x * k + y] = la[t, x] + log_q[x, y] + log_b[t + 1, y] + lb[t + 1, y]
        c = _lse(pair)
        for x in range(k):
            for y in range(k):
                xi[t, x, y] = np.exp(pair[x * k + y] - c)
    return gamma, xi
