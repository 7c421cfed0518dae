"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature.
Rows of CSR structures are given by ``indptr``; per-edge arrays are laid out in
CSR order, so summing a row always walks its edges in ascending column order.
"""
import numpy as np

# upper bound on expanded (row, col) pairs held at once by bool_spgemm
_SPGEMM_CHUNK = 1 << 22


def _segment_reduce(ufunc, values, indptr):
    n = len(indptr) - 1
    out = np.zeros((n,) + values.shape[1:], dtype=values.dtype)
    if values.shape[0] == 0:
        return out
    nonempty = indptr[:-1] < indptr[1:]
    out[nonempty] = ufunc.reduceat(values, indptr[:-1][nonempty], axis=0)
    return out


def _edge_rows(indptr):
    return np.repeat(np.arange(len(indptr) - 1, dtype=np.int64), np.diff(indptr))


def bool_spgemm(a_indptr, a_indices, b_indptr, b_indices, n_cols):
    """Boolean product of two CSR patterns; returns a sorted, duplicate-free CSR."""
    a_indptr = np.asarray(a_indptr, dtype=np.int64)
    a_indices = np.asarray(a_indices, dtype=np.int64)
    b_indptr = np.asarray(b_indptr, dtype=np.int64)
    b_indices = np.asarray(b_indices, dtype=np.int64)
    n_rows = len(a_indptr) - 1
    b_len = np.diff(b_indptr)
    a_rows = _edge_rows(a_indptr)
    expanded = b_len[a_indices]
    # cumulative expanded size at each row boundary, used to cut chunks
    row_cost = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(_segment_reduce(np.add, expanded, a_indptr), out=row_cost[1:])

    keys_out = []
    start = 0
    while start < n_rows:
        stop = int(np.searchsorted(row_cost, row_cost[start] + _SPGEMM_CHUNK, side="right")) - 1
        stop = min(max(stop, start + 1), n_rows)
        lo, hi = a_indptr[start], a_indptr[stop]
        ks = a_indices[lo:hi]
        lens = expanded[lo:hi]
        total = int(lens.sum())
        if total:
            offsets = np.cumsum(lens) - lens
            pos = np.repeat(b_indptr[ks] - offsets, lens) + np.arange(total, dtype=np.int64)
            rows = np.repeat(a_rows[lo:hi], lens)
            keys_out.append(np.unique(rows * n_cols + b_indices[pos]))
        start = stop

    if keys_out:
        keys = np.concatenate(keys_out)
    else:
        keys = np.zeros(0, dtype=np.int64)
    rows = keys // n_cols
    indices = keys - rows * n_cols
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_rows), out=indptr[1:])
    return indptr, indices


def segment_softmax(indptr, logits):
    """Softmax of ``logits`` (E x K) within each CSR row, max-shifted."""
    rows = _edge_rows(indptr)
    mx = _segment_reduce(np.maximum, logits, indptr)
    ex = np.exp(logits - mx[rows])
    denom = _segment_reduce(np.add, ex, indptr)
    return ex / denom[rows]


def segment_softmax_backward(indptr, alpha, grad):
    rows = _edge_rows(indptr)
    dot = _segment_reduce(np.add, alpha * grad, indptr)
    return alpha * (grad - dot[rows])


def spmm(indptr, indices, weights, x):
    """out[i, k, :] = sum over edges e of row i of weights[e, k] * x[indices[e], k, :]."""
    contrib = weights[:, :, None] * x[indices]
    return _segment_reduce(np.add, contrib, indptr)


def spmm_backward(indptr, indices, weights, x, grad):
    """Gradients of :func:`spmm` with respect to ``weights`` and ``x``."""
    rows = _edge_rows(indptr)
    g_rows = grad[rows]
    d_weights = np.einsum("ekf,ekf->ek", g_rows, x[indices])
    order = np.argsort(indices, kind="stable")
    col_indptr = np.zeros(x.shape[0] + 1, dtype=np.int64)
    np.cumsum(np.bincount(indices, minlength=x.shape[0]), out=col_indptr[1:])
    contrib = (weights[:, :, None] * g_rows)[order]
    d_x = _segment_reduce(np.add, contrib, col_indptr)
    return d_weights, d_x
