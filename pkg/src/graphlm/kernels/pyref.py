"""Pure-numpy reference implementations of the sparse graph kernels.

All functions take CSR neighbor structure (``indptr`` of length N+1 and
``indices`` of length nnz, both int64) and float64 payloads.  Rows are the
aggregating nodes; ``indices[indptr[i]:indptr[i+1]]`` are the neighbors of
node i.  The compiled backend in ``_graph_ops.pyx`` implements the same
signatures; equality between the two is covered by tests.
"""

import numpy as np


def gather_sum(indptr, indices, x):
    """out[i] = sum of x[j] over neighbors j of i."""
    n = indptr.shape[0] - 1
    out = np.zeros((n, x.shape[1]), dtype=np.float64)
    rows = np.repeat(np.arange(n), np.diff(indptr))
    np.add.at(out, rows, x[indices])
    return out


def gather_weighted_sum(indptr, indices, weights, x):
    """out[i] = sum of weights[e] * x[indices[e]] over the edges of row i."""
    n = indptr.shape[0] - 1
    out = np.zeros((n, x.shape[1]), dtype=np.float64)
    rows = np.repeat(np.arange(n), np.diff(indptr))
    np.add.at(out, rows, weights[:, None] * x[indices])
    return out


def segment_sum(indptr, values):
    """Per-row sum of a per-edge scalar array."""
    n = indptr.shape[0] - 1
    out = np.zeros(n, dtype=np.float64)
    nonempty = np.diff(indptr) > 0
    if values.shape[0]:
        sums = np.add.reduceat(values, indptr[:-1][nonempty])
        out[nonempty] = sums
    return out


def edge_softmax(indptr, scores):
    """Softmax of per-edge scores within each row segment.

    Empty rows contribute no outputs; the max-shift keeps the exponentials
    stable for large scores.
    """
    alpha = np.empty_like(scores)
    n = indptr.shape[0] - 1
    lengths = np.diff(indptr)
    nonempty = lengths > 0
    if scores.shape[0]:
        seg_max = np.maximum.reduceat(scores, indptr[:-1][nonempty])
        maxes = np.zeros(n, dtype=np.float64)
        maxes[nonempty] = seg_max
        rows = np.repeat(np.arange(n), lengths)
        shifted = np.exp(scores - maxes[rows])
        denom = np.zeros(n, dtype=np.float64)
        denom[nonempty] = np.add.reduceat(shifted, indptr[:-1][nonempty])
        alpha = shifted / denom[rows]
    return alpha


def edge_softmax_backward(indptr, alpha, grad_alpha):
    """Gradient of edge_softmax: g_e = a_e * (ga_e - sum_row(a * ga))."""
    inner = segment_sum(indptr, alpha * grad_alpha)
    rows = np.repeat(np.arange(indptr.shape[0] - 1), np.diff(indptr))
    return alpha * (grad_alpha - inner[rows])
