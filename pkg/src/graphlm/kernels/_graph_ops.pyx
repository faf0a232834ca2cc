# Compiled versions of the sparse graph kernels in pyref.py.
# Single-threaded on purpose: bit-reproducible accumulation order.

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int64_t idx_t
ctypedef cnp.float64_t real_t


def gather_sum(idx_t[::1] indptr, idx_t[::1] indices, real_t[:, ::1] x):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = x.shape[1]
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef real_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, e, c, j
    for i in range(n):
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            for c in range(d):
                out[i, c] += x[j, c]
    return out_arr


def gather_weighted_sum(idx_t[::1] indptr, idx_t[::1] indices,
                        real_t[::1] weights, real_t[:, ::1] x):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = x.shape[1]
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef real_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, e, c, j
    cdef real_t w
    for i in range(n):
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            w = weights[e]
            for c in range(d):
                out[i, c] += w * x[j, c]
    return out_arr


def segment_sum(idx_t[::1] indptr, real_t[::1] values):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    out_arr = np.zeros(n, dtype=np.float64)
    cdef real_t[::1] out = out_arr
    cdef Py_ssize_t i, e
    for i in range(n):
        for e in range(indptr[i], indptr[i + 1]):
            out[i] += values[e]
    return out_arr


cdef extern from "math.h":
    double exp(double x) nogil


def edge_softmax(idx_t[::1] indptr, real_t[::1] scores):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    alpha_arr = np.empty(scores.shape[0], dtype=np.float64)
    cdef real_t[::1] alpha = alpha_arr
    cdef Py_ssize_t i, e
    cdef real_t m, denom
    for i in range(n):
        if indptr[i] == indptr[i + 1]:
            continue
        m = scores[indptr[i]]
        for e in range(indptr[i] + 1, indptr[i + 1]):
            if scores[e] > m:
                m = scores[e]
        denom = 0.0
        for e in range(indptr[i], indptr[i + 1]):
            alpha[e] = exp(scores[e] - m)
            denom += alpha[e]
        for e in range(indptr[i], indptr[i + 1]):
            alpha[e] /= denom
    return alpha_arr


def edge_softmax_backward(idx_t[::1] indptr, real_t[::1] alpha,
                          real_t[::1] grad_alpha):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    out_arr = np.empty(alpha.shape[0], dtype=np.float64)
    cdef real_t[::1] out = out_arr
    cdef Py_ssize_t i, e
    cdef real_t inner
    for i in range(n):
        inner = 0.0
        for e in range(indptr[i], indptr[i + 1]):
            inner += alpha[e] * grad_alpha[e]
        for e in range(indptr[i], indptr[i + 1]):
            out[e] = alpha[e] * (grad_alpha[e] - inner)
    return out_arr
