# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: CTC log-space forward-backward and 2x2 ceil max-pooling."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, INFINITY

cnp.import_array()


cdef inline double _lse(double a, double b) noexcept nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


def ctc_forward_backward(const double[:, ::1] logp, const cnp.int64_t[::1] labels, Py_ssize_t blank):
    """Return ``(nll, grad)`` where ``grad`` is d(nll)/d(logp)."""
    cdef Py_ssize_t T = logp.shape[0]
    cdef Py_ssize_t V = logp.shape[1]
    cdef Py_ssize_t L = labels.shape[0]
    cdef Py_ssize_t S = 2 * L + 1
    cdef Py_ssize_t t, s, k
    cdef double a, b, log_z

    ext_arr = np.empty(S, dtype=np.int64)
    cdef cnp.int64_t[::1] ext = ext_arr
    for s in range(S):
        ext[s] = blank if s % 2 == 0 else labels[(s - 1) // 2]

    alpha_arr = np.full((T, S), -np.inf)
    beta_arr = np.full((T, S), -np.inf)
    grad_arr = np.zeros((T, V))
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] beta = beta_arr
    cdef double[:, ::1] grad = grad_arr

    with nogil:
        alpha[0, 0] = logp[0, blank]
        if S > 1:
            alpha[0, 1] = logp[0, ext[1]]
        for t in range(1, T):
            for s in range(S):
                a = alpha[t - 1, s]
                if s > 0:
                    a = _lse(a, alpha[t - 1, s - 1])
                if s > 1 and ext[s] != blank and ext[s] != ext[s - 2]:
                    a = _lse(a, alpha[t - 1, s - 2])
                if a != -INFINITY:
                    alpha[t, s] = a + logp[t, ext[s]]

        log_z = alpha[T - 1, S - 1]
        if S > 1:
            log_z = _lse(log_z, alpha[T - 1, S - 2])

        beta[T - 1, S - 1] = 0.0
        if S > 1:
            beta[T - 1, S - 2] = 0.0
        for t in range(T - 2, -1, -1):
            for s in range(S):
                b = beta[t + 1, s] + logp[t + 1, ext[s]]
                if s + 1 < S:
                    b = _lse(b, beta[t + 1, s + 1] + logp[t + 1, ext[s + 1]])
                if s + 2 < S and ext[s + 2] != blank and ext[s + 2] != ext[s]:
                    b = _lse(b, beta[t + 1, s + 2] + logp[t + 1, ext[s + 2]])
                beta[t, s] = b

        if log_z != -INFINITY:
            for t in range(T):
                for s in range(S):
                    a = alpha[t, s] + beta[t, s]
                    if a != -INFINITY:
                        grad[t, ext[s]] -= exp(a - log_z)

    return -log_z, grad_arr


def maxpool2x2_forward(const double[:, :, ::1] x):
    """Ceil-mode 2x2 max-pool over the first two axes of a (T, D, C) array.

    Returns the pooled array and the window offset (0..3, row-major) of each max.
    Ties resolve to the first offset.
    """
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t D = x.shape[1]
    cdef Py_ssize_t C = x.shape[2]
    cdef Py_ssize_t T2 = (T + 1) // 2
    cdef Py_ssize_t D2 = (D + 1) // 2
    cdef Py_ssize_t i, j, c, di, dj, ti, tj
    cdef double best, v
    cdef cnp.int8_t arg

    out_arr = np.empty((T2, D2, C))
    idx_arr = np.empty((T2, D2, C), dtype=np.int8)
    cdef double[:, :, ::1] out = out_arr
    cdef cnp.int8_t[:, :, ::1] idx = idx_arr

    with nogil:
        for i in range(T2):
            for j in range(D2):
                for c in range(C):
                    best = -INFINITY
                    arg = 0
                    for di in range(2):
                        ti = 2 * i + di
                        if ti >= T:
                            break
                        for dj in range(2):
                            tj = 2 * j + dj
                            if tj >= D:
                                break
                            v = x[ti, tj, c]
                            if v > best:
                                best = v
                                arg = <cnp.int8_t>(2 * di + dj)
                    out[i, j, c] = best
                    idx[i, j, c] = arg
    return out_arr, idx_arr


def maxpool2x2_backward(const double[:, :, ::1] g, const cnp.int8_t[:, :, ::1] idx, Py_ssize_t T, Py_ssize_t D):
    cdef Py_ssize_t T2 = g.shape[0]
    cdef Py_ssize_t D2 = g.shape[1]
    cdef Py_ssize_t C = g.shape[2]
    cdef Py_ssize_t i, j, c, a
    gx_arr = np.zeros((T, D, C))
    cdef double[:, :, ::1] gx = gx_arr
    with nogil:
        for i in range(T2):
            for j in range(D2):
                for c in range(C):
                    a = idx[i, j, c]
                    gx[2 * i + a // 2, 2 * j + a % 2, c] += g[i, j, c]
    return gx_arr
