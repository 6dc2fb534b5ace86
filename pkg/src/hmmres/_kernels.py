"""Hot numeric loops for likelihood and Baum-Welch, JIT-compiled via numba.

Pure-python fallbacks with identical semantics are used when numba is
unavailable, so the package stays importable everywhere; the verification
experiments assume the compiled path for their runtime budgets.
"""

from __future__ import annotations

import math

import numpy as np

try:  # pragma: no cover - exercised implicitly
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap

LOG2E = 1.4426950408889634  # log2(e)
NEG_INF = float("-inf")


@njit(cache=True)
def forward_log2_prob(transition, emissions, pi, x):
    """Total log2 probability of ``x`` via the scaled forward recursion.

    Linear-space alphas rescaled by their maximum every step; the scale
    logs accumulate into the result.  Returns -inf when every path dies.
    """
    k = transition.shape[0]
    n = x.shape[0]
    alpha = np.empty(k)
    for i in range(k):
        alpha[i] = pi[i] * emissions[i, x[0]]
    total = 0.0
    c = alpha.max()
    if c <= 0.0:
        return NEG_INF
    alpha /= c
    total += math.log(c) * LOG2E
    nxt = np.empty(k)
    for t in range(1, n):
        for j in range(k):
            acc = 0.0
            for i in range(k):
                acc += alpha[i] * transition[i, j]
            nxt[j] = acc * emissions[j, x[t]]
        c = nxt.max()
        if c <= 0.0:
            return NEG_INF
        for j in range(k):
            alpha[j] = nxt[j] / c
        total += math.log(c) * LOG2E
    s = 0.0
    for i in range(k):
        s += alpha[i]
    return total + math.log(s) * LOG2E


@njit(cache=True)
def forward_backward_counts(transition, emissions, pi, x):
    """One E-step: expected counts under the posterior path law.

    Returns ``(log2_prob, trans_counts, emis_counts, gamma0)`` using the
    sum-scaled forward/backward recursions.
    """
    k = transition.shape[0]
    n_sym = emissions.shape[1]
    n = x.shape[0]

    alpha = np.empty((n, k))
    scale = np.empty(n)
    for i in range(k):
        alpha[0, i] = pi[i] * emissions[i, x[0]]
    c = alpha[0].sum()
    if c <= 0.0:
        return NEG_INF, np.zeros((k, k)), np.zeros((k, n_sym)), np.zeros(k)
    scale[0] = c
    for i in range(k):
        alpha[0, i] /= c
    for t in range(1, n):
        for j in range(k):
            acc = 0.0
            for i in range(k):
                acc += alpha[t - 1, i] * transition[i, j]
            alpha[t, j] = acc * emissions[j, x[t]]
        c = alpha[t].sum()
        if c <= 0.0:
            return NEG_INF, np.zeros((k, k)), np.zeros((k, n_sym)), np.zeros(k)
        scale[t] = c
        for j in range(k):
            alpha[t, j] /= c

    log2p = 0.0
    for t in range(n):
        log2p += math.log(scale[t]) * LOG2E

    beta = np.ones(k)
    beta_prev = np.empty(k)
    trans_counts = np.zeros((k, k))
    emis_counts = np.zeros((k, n_sym))
    gamma0 = np.zeros(k)

    for i in range(k):
        emis_counts[i, x[n - 1]] += alpha[n - 1, i]

    for t in range(n - 2, -1, -1):
        denom = scale[t + 1]
        for i in range(k):
            acc = 0.0
            for j in range(k):
                w = transition[i, j] * emissions[j, x[t + 1]] * beta[j]
                trans_counts[i, j] += alpha[t, i] * w / denom
                acc += w
            beta_prev[i] = acc / denom
        for i in range(k):
            beta[i] = beta_prev[i]
            g = alpha[t, i] * beta[i]
            emis_counts[i, x[t]] += g
            if t == 0:
                gamma0[i] = g
    if n == 1:
        for i in range(k):
            gamma0[i] = alpha[0, i]
    return log2p, trans_counts, emis_counts, gamma0
