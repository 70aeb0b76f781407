# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the loops in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, INFINITY

cnp.import_array()


def latch_codes(const cnp.int64_t[::1] bits, const cnp.uint8_t[::1] active):
    cdef Py_ssize_t n = bits.shape[0], i
    cdef cnp.uint64_t state = 0, mask
    out = np.empty(n, dtype=np.uint64)
    cdef cnp.uint64_t[::1] o = out
    for i in range(n):
        mask = (<cnp.uint64_t>1) << bits[i]
        if active[i]:
            state |= mask
        else:
            state &= ~mask
        o[i] = state
    return out


def viterbi(const double[::1] log_pi, const double[:, ::1] log_a,
            const double[:, ::1] log_b, const cnp.int64_t[::1] obs):
    cdef Py_ssize_t n = log_a.shape[0], t_len = obs.shape[0]
    cdef Py_ssize_t t, i, j, best_i, q
    cdef double best, s
    backptr_arr = np.empty((t_len, n), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] backptr = backptr_arr
    cdef double[::1] delta = np.empty(n, dtype=np.float64)
    cdef double[::1] nxt = np.empty(n, dtype=np.float64)
    cdef double[::1] tmp

    for i in range(n):
        delta[i] = log_pi[i] + log_b[i, obs[0]]
    for t in range(1, t_len):
        for j in range(n):
            best = delta[0] + log_a[0, j]
            best_i = 0
            for i in range(1, n):
                s = delta[i] + log_a[i, j]
                if s > best:
                    best = s
                    best_i = i
            backptr[t, j] = best_i
            nxt[j] = best + log_b[j, obs[t]]
        tmp = delta
        delta = nxt
        nxt = tmp

    path = np.empty(t_len, dtype=np.int64)
    cdef cnp.int64_t[::1] p = path
    q = 0
    best = delta[0]
    for i in range(1, n):
        if delta[i] > best:
            best = delta[i]
            q = i
    p[t_len - 1] = q
    for t in range(t_len - 1, 0, -1):
        q = backptr[t, q]
        p[t - 1] = q
    return path, best


def forward_loglik(const double[::1] pi, const double[:, ::1] a,
                   const double[:, ::1] b, const cnp.int64_t[::1] obs):
    cdef Py_ssize_t n = a.shape[0], t_len = obs.shape[0]
    cdef Py_ssize_t t, i, j
    cdef double c, acc, total
    cdef double[::1] alpha = np.empty(n, dtype=np.float64)
    cdef double[::1] nxt = np.empty(n, dtype=np.float64)
    cdef double[::1] tmp

    c = 0.0
    for i in range(n):
        alpha[i] = pi[i] * b[i, obs[0]]
        c += alpha[i]
    if c <= 0.0:
        return -INFINITY
    for i in range(n):
        alpha[i] /= c
    total = log(c)
    for t in range(1, t_len):
        c = 0.0
        for j in range(n):
            acc = 0.0
            for i in range(n):
                acc += alpha[i] * a[i, j]
            nxt[j] = acc * b[j, obs[t]]
            c += nxt[j]
        if c <= 0.0:
            return -INFINITY
        for j in range(n):
            nxt[j] /= c
        tmp = alpha
        alpha = nxt
        nxt = tmp
        total += log(c)
    return total
