"""Both kernel backends against dense references and against each other."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hanet import kernels


def random_csr(rng, n_rows, n_cols, p, sorted_unique=True):
    dense = rng.random((n_rows, n_cols)) < p
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(dense.sum(axis=1), out=indptr[1:])
    return indptr, np.nonzero(dense)[1].astype(np.int64), dense


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 25), st.integers(1, 25), st.integers(1, 25),
       st.floats(0.0, 0.5), st.floats(0.0, 0.5), st.integers(0, 2**32 - 1))
def test_bool_spgemm_matches_dense_product(n, k, m, pa, pb, seed):
    rng = np.random.default_rng(seed)
    a_ptr, a_idx, a = random_csr(rng, n, k, pa)
    b_ptr, b_idx, b = random_csr(rng, k, m, pb)
    expected = (a.astype(int) @ b.astype(int)) > 0
    for name in kernels.available_backends():
        ptr, idx = kernels.get_backend(name).bool_spgemm(a_ptr, a_idx, b_ptr, b_idx, m)
        got = np.zeros((n, m), dtype=bool)
        rows = np.repeat(np.arange(n), np.diff(ptr))
        got[rows, idx] = True
        assert np.array_equal(got, expected), name
        assert len(idx) == expected.sum(), name  # no duplicates
        for i in range(n):
            row = idx[ptr[i]:ptr[i + 1]]
            assert np.all(np.diff(row) > 0), name


def test_spgemm_chunking(monkeypatch):
    from hanet import _kernels_py
    rng = np.random.default_rng(3)
    a_ptr, a_idx, a = random_csr(rng, 40, 30, 0.3)
    b_ptr, b_idx, b = random_csr(rng, 30, 35, 0.3)
    full = _kernels_py.bool_spgemm(a_ptr, a_idx, b_ptr, b_idx, 35)
    monkeypatch.setattr(_kernels_py, "_SPGEMM_CHUNK", 7)
    chunked = _kernels_py.bool_spgemm(a_ptr, a_idx, b_ptr, b_idx, 35)
    assert np.array_equal(full[0], chunked[0]) and np.array_equal(full[1], chunked[1])


def _edge_problem(seed, n=12, K=3, F=4, p=0.3):
    rng = np.random.default_rng(seed)
    indptr, indices, dense = random_csr(rng, n, n, p)
    dense[np.arange(n), np.arange(n)] = True
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(dense.sum(axis=1), out=indptr[1:])
    indices = np.nonzero(dense)[1].astype(np.int64)
    E = len(indices)
    return indptr, indices, dense, rng.normal(size=(E, K)), rng.normal(size=(n, K, F)), \
        rng.normal(size=(n, K, F))


def test_segment_softmax_against_dense_rows(backend):
    indptr, indices, dense, logits, _, _ = _edge_problem(0)
    alpha = backend.segment_softmax(indptr, logits)
    for i in range(len(indptr) - 1):
        seg = logits[indptr[i]:indptr[i + 1]]
        ref = np.exp(seg - seg.max(axis=0)) / np.exp(seg - seg.max(axis=0)).sum(axis=0)
        np.testing.assert_allclose(alpha[indptr[i]:indptr[i + 1]], ref, rtol=0, atol=1e-14)
        np.testing.assert_allclose(ref.sum(axis=0), 1.0, atol=1e-12)


def test_segment_softmax_empty_rows(backend):
    indptr = np.array([0, 0, 2, 2, 3])
    logits = np.array([[1.0], [2.0], [5.0]])
    alpha = backend.segment_softmax(indptr, logits)
    np.testing.assert_allclose(alpha[:, 0], [1 / (1 + np.e), np.e / (1 + np.e), 1.0])


def test_spmm_against_dense(backend):
    indptr, indices, dense, w, x, g = _edge_problem(1)
    out = backend.spmm(indptr, indices, w, x)
    rows = np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))
    for k in range(x.shape[1]):
        W = np.zeros(dense.shape)
        W[rows, indices] = w[:, k]
        np.testing.assert_allclose(out[:, k, :], W @ x[:, k, :], atol=1e-13)


def test_spmm_backward_against_dense(backend):
    indptr, indices, dense, w, x, g = _edge_problem(2)
    dw, dx = backend.spmm_backward(indptr, indices, w, x, g)
    rows = np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))
    for k in range(x.shape[1]):
        W = np.zeros(dense.shape)
        W[rows, indices] = w[:, k]
        np.testing.assert_allclose(dx[:, k, :], W.T @ g[:, k, :], atol=1e-13)
        np.testing.assert_allclose(dw[:, k], np.einsum("ef,ef->e", g[rows, k], x[indices, k]),
                                   atol=1e-13)


def test_softmax_backward_against_jacobian(backend):
    indptr, indices, dense, logits, _, _ = _edge_problem(4, K=1)
    alpha = backend.segment_softmax(indptr, logits)
    g = np.random.default_rng(9).normal(size=alpha.shape)
    got = backend.segment_softmax_backward(indptr, alpha, g)
    for i in range(len(indptr) - 1):
        a = alpha[indptr[i]:indptr[i + 1], 0]
        jac = np.diag(a) - np.outer(a, a)
        np.testing.assert_allclose(got[indptr[i]:indptr[i + 1], 0], jac @ g[indptr[i]:indptr[i + 1], 0],
                                   atol=1e-14)


@pytest.mark.skipif(len(kernels.available_backends()) < 2, reason="compiled kernels not built")
@pytest.mark.parametrize("seed", range(5))
def test_backends_agree(seed):
    py, cy = kernels.get_backend("python"), kernels.get_backend("cython")
    indptr, indices, dense, w, x, g = _edge_problem(seed, n=40, K=4, F=6, p=0.2)
    np.testing.assert_allclose(py.segment_softmax(indptr, w), cy.segment_softmax(indptr, w),
                               rtol=1e-14, atol=1e-15)
    np.testing.assert_allclose(py.spmm(indptr, indices, w, x), cy.spmm(indptr, indices, w, x),
                               rtol=0, atol=1e-13)
    for a, b in zip(py.spmm_backward(indptr, indices, w, x, g),
                    cy.spmm_backward(indptr, indices, w, x, g)):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-13)


def test_selected_backend_is_registered():
    assert kernels.BACKEND in kernels.available_backends()
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_set_backend_routes_model_calls():
    from hanet import tensor as T
    indptr = np.array([0, 2, 3])
    logits = T.Tensor([[1.0], [2.0], [0.5]])
    previous = kernels.set_backend("python")
    try:
        assert kernels.BACKEND == "python"
        ref = T.segment_softmax(logits, indptr).data
        for name in kernels.available_backends():
            kernels.set_backend(name)
            np.testing.assert_allclose(T.segment_softmax(logits, indptr).data, ref, atol=1e-15)
    finally:
        kernels.set_backend(previous)
    assert kernels.BACKEND == previous
