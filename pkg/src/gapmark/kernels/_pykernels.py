"""NumPy implementations of the hot loops.

Used when the compiled extension is unavailable or ``GAPMARK_PURE_PYTHON``
is set.  ``latch_codes`` and ``viterbi`` are bit-identical to ``_ckernels``;
``forward_loglik`` agrees up to summation-order rounding.
"""

from __future__ import annotations

import math

import numpy as np


def latch_codes(bits: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Latched sensor bitmask after each event, starting from all-inactive."""
    n = len(bits)
    out = np.empty(n, dtype=np.uint64)
    state = 0
    bits_l = bits.tolist()
    act_l = active.tolist()
    for i in range(n):
        mask = 1 << bits_l[i]
        if act_l[i]:
            state |= mask
        else:
            state &= ~mask
        out[i] = state
    return out


def viterbi(log_pi: np.ndarray, log_a: np.ndarray, log_b: np.ndarray, obs: np.ndarray):
    """Max-product path in log space.

    Ties pick the lowest state index, both for backpointers and for the final
    state.  Returns ``(path, log_probability)``.
    """
    n_states = log_a.shape[0]
    t_len = len(obs)
    backptr = np.empty((t_len, n_states), dtype=np.int64)
    cols = np.arange(n_states)
    delta = log_pi + log_b[:, obs[0]]
    for t in range(1, t_len):
        scores = delta[:, None] + log_a
        best = scores.argmax(axis=0)
        backptr[t] = best
        delta = scores[best, cols] + log_b[:, obs[t]]
    path = np.empty(t_len, dtype=np.int64)
    q = int(delta.argmax())
    logp = float(delta[q])
    path[-1] = q
    for t in range(t_len - 1, 0, -1):
        q = int(backptr[t, q])
        path[t - 1] = q
    return path, logp


def forward_loglik(pi: np.ndarray, a: np.ndarray, b: np.ndarray, obs: np.ndarray) -> float:
    """Scaled forward recursion; returns log P(obs)."""
    alpha = pi * b[:, obs[0]]
    c = alpha.sum()
    if c <= 0.0:
        return -math.inf
    alpha = alpha / c
    total = math.log(c)
    for t in range(1, len(obs)):
        alpha = (alpha @ a) * b[:, obs[t]]
        c = alpha.sum()
        if c <= 0.0:
            return -math.inf
        alpha = alpha / c
        total += math.log(c)
    return total
