# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_kernels_py``.

Same signatures and the same per-row summation order (ascending edge position),
so results agree with the numpy path up to libm rounding in ``exp``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from libc.stdlib cimport qsort

cnp.import_array()

ctypedef cnp.int64_t i64


cdef int _cmp_i64(const void* a, const void* b) noexcept nogil:
    cdef i64 x = (<i64*>a)[0]
    cdef i64 y = (<i64*>b)[0]
    return (x > y) - (x < y)


def bool_spgemm(a_indptr, a_indices, b_indptr, b_indices, Py_ssize_t n_cols):
    """Gustavson row-merge with a dense marker; two passes (count, then fill)."""
    cdef i64[::1] ap = np.ascontiguousarray(a_indptr, dtype=np.int64)
    cdef i64[::1] ai = np.ascontiguousarray(a_indices, dtype=np.int64)
    cdef i64[::1] bp = np.ascontiguousarray(b_indptr, dtype=np.int64)
    cdef i64[::1] bi = np.ascontiguousarray(b_indices, dtype=np.int64)
    cdef Py_ssize_t n_rows = ap.shape[0] - 1
    cdef i64[::1] marker = np.full(n_cols, -1, dtype=np.int64)
    out_indptr_arr = np.zeros(n_rows + 1, dtype=np.int64)
    cdef i64[::1] cp = out_indptr_arr
    cdef Py_ssize_t i, e, f, col, nnz = 0

    with nogil:
        for i in range(n_rows):
            for e in range(ap[i], ap[i + 1]):
                for f in range(bp[ai[e]], bp[ai[e] + 1]):
                    col = bi[f]
                    if marker[col] != i:
                        marker[col] = i
                        nnz += 1
            cp[i + 1] = nnz

    out_indices_arr = np.empty(nnz, dtype=np.int64)
    cdef i64[::1] ci = out_indices_arr
    marker[:] = -1
    cdef Py_ssize_t pos
    with nogil:
        for i in range(n_rows):
            pos = cp[i]
            for e in range(ap[i], ap[i + 1]):
                for f in range(bp[ai[e]], bp[ai[e] + 1]):
                    col = bi[f]
                    if marker[col] != i:
                        marker[col] = i
                        ci[pos] = col
                        pos += 1
            if cp[i + 1] > cp[i]:
                qsort(&ci[cp[i]], cp[i + 1] - cp[i], sizeof(i64), _cmp_i64)
    return out_indptr_arr, out_indices_arr


def segment_softmax(indptr, logits):
    cdef i64[::1] p = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef double[:, ::1] x = np.ascontiguousarray(logits, dtype=np.float64)
    out_arr = np.empty_like(np.asarray(x))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t n = p.shape[0] - 1, K = x.shape[1]
    cdef Py_ssize_t i, e, k
    cdef double mx, s
    with nogil:
        for i in range(n):
            if p[i + 1] == p[i]:
                continue
            for k in range(K):
                mx = x[p[i], k]
                for e in range(p[i] + 1, p[i + 1]):
                    if x[e, k] > mx:
                        mx = x[e, k]
                s = 0.0
                for e in range(p[i], p[i + 1]):
                    out[e, k] = exp(x[e, k] - mx)
                    s = s + out[e, k]
                for e in range(p[i], p[i + 1]):
                    out[e, k] = out[e, k] / s
    return out_arr


def segment_softmax_backward(indptr, alpha, grad):
    cdef i64[::1] p = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef double[:, ::1] a = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef double[:, ::1] g = np.ascontiguousarray(grad, dtype=np.float64)
    out_arr = np.empty_like(np.asarray(a))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t n = p.shape[0] - 1, K = a.shape[1]
    cdef Py_ssize_t i, e, k
    cdef double dot
    with nogil:
        for i in range(n):
            for k in range(K):
                dot = 0.0
                for e in range(p[i], p[i + 1]):
                    dot = dot + a[e, k] * g[e, k]
                for e in range(p[i], p[i + 1]):
                    out[e, k] = a[e, k] * (g[e, k] - dot)
    return out_arr


def spmm(indptr, indices, weights, x):
    cdef i64[::1] p = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef i64[::1] idx = np.ascontiguousarray(indices, dtype=np.int64)
    cdef double[:, ::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0] - 1, K = xv.shape[1], F = xv.shape[2]
    out_arr = np.zeros((n, K, F), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, e, k, f, j
    cdef double we
    with nogil:
        for i in range(n):
            for e in range(p[i], p[i + 1]):
                j = idx[e]
                for k in range(K):
                    we = w[e, k]
                    for f in range(F):
                        out[i, k, f] = out[i, k, f] + we * xv[j, k, f]
    return out_arr


def spmm_backward(indptr, indices, weights, x, grad):
    cdef i64[::1] p = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef i64[::1] idx = np.ascontiguousarray(indices, dtype=np.int64)
    cdef double[:, ::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, ::1] g = np.ascontiguousarray(grad, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0] - 1, K = xv.shape[1], F = xv.shape[2]
    cdef Py_ssize_t E = idx.shape[0], n_x = xv.shape[0]
    dw_arr = np.zeros((E, K), dtype=np.float64)
    dx_arr = np.zeros((n_x, K, F), dtype=np.float64)
    cdef double[:, ::1] dw = dw_arr
    cdef double[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t i, e, k, f, j, c
    cdef double s, we

    # dx is accumulated per destination column in ascending edge position,
    # matching the stable-sorted transpose used by the numpy path
    order_arr = np.argsort(np.asarray(idx), kind="stable")
    rows_arr = np.repeat(np.arange(n, dtype=np.int64), np.diff(np.asarray(p)))
    cdef i64[::1] order = order_arr
    cdef i64[::1] rows = rows_arr
    with nogil:
        for i in range(n):
            for e in range(p[i], p[i + 1]):
                j = idx[e]
                for k in range(K):
                    s = 0.0
                    for f in range(F):
                        s = s + g[i, k, f] * xv[j, k, f]
                    dw[e, k] = s
        for c in range(E):
            e = order[c]
            j = idx[e]
            i = rows[e]
            for k in range(K):
                we = w[e, k]
                for f in range(F):
                    dx[j, k, f] = dx[j, k, f] + we * g[i, k, f]
    return dw_arr, dx_arr
