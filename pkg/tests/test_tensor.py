import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hanet import tensor as T
from hanet.errors import ContractError, DimensionError, InvalidMaskError

from conftest import gradient_errors


def naive_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


class TestMatmul:
    def test_identity(self):
        x = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(T.matmul(T.Tensor(np.eye(2)), x).data, x.data)

    def test_zero(self):
        out = T.matmul(T.Tensor([[1.0, 2.0]]), T.Tensor([[0.0], [0.0]]))
        np.testing.assert_array_equal(out.data, [[0.0]])

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        out = T.matmul(T.Tensor(a), T.Tensor(b)).data
        assert np.max(np.abs(out - naive_matmul(a, b))) <= 1e-12

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))

    def test_gradient_rule(self):
        rng = np.random.default_rng(1)
        a = T.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = T.Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        g = rng.normal(size=(3, 2))
        T.backward(T.sum(T.mul(T.matmul(a, b), g)))
        np.testing.assert_allclose(a.grad, g @ b.data.T, atol=1e-14)
        np.testing.assert_allclose(b.grad, a.data.T @ g, atol=1e-14)


class TestSoftmaxMasked:
    def test_uniform(self):
        out = T.softmax_masked(T.Tensor([0.0, 0.0, 0.0]), [True, True, True]).data
        np.testing.assert_allclose(out, [1 / 3] * 3, atol=1e-15)

    def test_single_unmasked(self):
        out = T.softmax_masked(T.Tensor([5.0, 123.0]), [True, False]).data
        np.testing.assert_array_equal(out, [1.0, 0.0])

    def test_matches_direct_formula(self):
        x = np.array([1.0, 2.0, 3.0])
        expected = np.exp(x) / np.exp(x).sum()
        out = T.softmax_masked(T.Tensor(x), [True] * 3).data
        assert np.max(np.abs(out - expected)) <= 1e-12

    def test_all_false_mask(self):
        with pytest.raises(InvalidMaskError):
            T.softmax_masked(T.Tensor([1.0, 2.0]), [False, False])

    def test_large_logits_do_not_overflow(self):
        out = T.softmax_masked(T.Tensor([1000.0, 1001.0]), [True, True]).data
        assert np.all(np.isfinite(out))

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)),
           st.data(), st.floats(-100, 100))
    def test_normalised_and_shift_invariant(self, logits, data, shift):
        mask = np.array(data.draw(st.lists(st.booleans(), min_size=len(logits),
                                           max_size=len(logits))))
        if not mask.any():
            mask[0] = True
        out = T.softmax_masked(T.Tensor(logits), mask).data
        assert np.all(out[~mask] == 0.0)
        assert abs(out[mask].sum() - 1.0) <= 1e-12
        shifted = np.where(mask, logits + shift, logits)
        out2 = T.softmax_masked(T.Tensor(shifted), mask).data
        assert np.max(np.abs(out - out2)) <= 1e-12


class TestElementwise:
    def test_leaky_relu(self):
        np.testing.assert_allclose(T.leaky_relu(T.Tensor([-1.0, 2.0]), 0.2).data, [-0.2, 2.0])

    def test_tanh_zero(self):
        assert T.tanh(T.Tensor(0.0)).item() == 0.0

    def test_dropout_rate_zero_is_identity(self):
        x = T.Tensor(np.arange(6.0))
        for seed in (0, 7, (3, 4)):
            np.testing.assert_array_equal(T.dropout(x, 0.0, seed).data, x.data)

    def test_dropout_eval_is_identity(self):
        x = T.Tensor(np.arange(6.0))
        assert T.dropout(x, 0.5, 1, training=False) is x

    def test_dropout_inverted_scaling(self):
        x = T.Tensor(np.ones(10000))
        out = T.dropout(x, 0.6, 11).data
        kept = out != 0
        np.testing.assert_allclose(out[kept], 1.0 / 0.4)
        assert abs(kept.mean() - 0.4) < 0.03

    def test_dropout_deterministic(self):
        x = T.Tensor(np.ones((20, 5)))
        a = T.dropout(x, 0.5, (1, 2, 3)).data
        b = T.dropout(x, 0.5, (1, 2, 3)).data
        c = T.dropout(x, 0.5, (1, 2, 4)).data
        assert a.tobytes() == b.tobytes()
        assert a.tobytes() != c.tobytes()

    def test_add_shape_mismatch(self):
        with pytest.raises(DimensionError):
            T.add(T.Tensor(np.ones(3)), T.Tensor(np.ones(4)))

    def test_concat_mismatch(self):
        with pytest.raises(DimensionError):
            T.concat([T.Tensor(np.ones((2, 2))), T.Tensor(np.ones((3, 3)))], axis=1)


class TestBackward:
    def test_sum(self):
        x = T.Tensor([1.0, 2.0, 3.0], requires_grad=True)
        T.backward(T.sum(x))
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_quadratic(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        T.backward(T.sum(T.mul(x, x)))
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_accumulates_without_reset(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        T.backward(T.sum(T.mul(x, x)))
        T.backward(T.sum(T.mul(x, x)))
        np.testing.assert_array_equal(x.grad, [4.0, 8.0])
        T.zero_grad([x])
        assert x.grad is None

    def test_non_scalar_loss(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            T.backward(T.mul(x, 2.0))

    def test_intermediates_get_grads(self):
        x = T.Tensor([1.0, -2.0], requires_grad=True)
        y = T.tanh(x)
        T.backward(T.sum(y))
        assert y.grad is not None and y.grad.shape == y.shape

    def test_tape_is_topological(self):
        x = T.Tensor(np.ones(3), requires_grad=True)
        a = T.tanh(x)
        b = T.mul(a, x)
        c = T.add(T.sum(b), T.sum(a))
        tape = T.build_tape(c)
        pos = {id(t): i for i, t in enumerate(tape)}
        for t in tape:
            for p in t._parents:
                if p.requires_grad:
                    assert pos[id(p)] < pos[id(t)]

    def test_shared_subexpression(self):
        x = T.Tensor([0.3, -0.7], requires_grad=True)
        y = T.exp(x)
        T.backward(T.sum(T.mul(y, y)))
        np.testing.assert_allclose(x.grad, 2 * np.exp(2 * x.data), rtol=1e-14)


def _fd_cases():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    v = rng.normal(size=5)
    pos = rng.uniform(0.5, 2.0, size=5)
    w = rng.normal(size=(3, 4))
    row = rng.normal(size=4)
    edge_logits = rng.normal(size=(7, 2))
    indptr = np.array([0, 2, 5, 7])
    indices = np.array([0, 2, 0, 1, 2, 1, 2])
    feats = rng.normal(size=(3, 2, 3))
    mask = np.array([True, False, True, True, False])
    targets = np.array([1, 0, 1])
    return {
        "matmul": ([a, b], lambda x, y: T.sum(T.tanh(T.matmul(x, y)))),
        "add_broadcast": ([w, row], lambda x, y: T.sum(T.tanh(T.add(x, y)))),
        "mul": ([w, w + 1.0], lambda x, y: T.sum(T.mul(x, y))),
        "concat": ([w, a], lambda x, y: T.sum(T.tanh(T.concat([x, y], axis=1)))),
        "leaky_relu": ([v], lambda x: T.sum(T.mul(T.leaky_relu(x, 0.2), T.Tensor(row[:1])))),
        "elu": ([v], lambda x: T.sum(T.mul(T.elu(x), x))),
        "tanh": ([v], lambda x: T.sum(T.tanh(x))),
        "log": ([pos], lambda x: T.sum(T.log(x))),
        "exp": ([v], lambda x: T.mean(T.exp(x))),
        "mean_axis": ([w], lambda x: T.sum(T.tanh(T.mean(x, axis=0)))),
        "softmax": ([v], lambda x: T.sum(T.mul(T.softmax(x), T.Tensor(pos)))),
        "softmax_masked": ([v], lambda x: T.sum(T.mul(T.softmax_masked(x, mask), T.Tensor(pos)))),
        "segment_softmax": ([edge_logits], lambda x: T.sum(T.mul(
            T.segment_softmax(x, indptr), T.Tensor(np.arange(14.0).reshape(7, 2))))),
        "spmm": ([np.abs(edge_logits), feats], lambda x, y: T.sum(T.tanh(
            T.spmm(indptr, indices, x, y)))),
        "gather_rows": ([w], lambda x: T.sum(T.tanh(T.gather_rows(x, [2, 0, 2, 1])))),
        "take": ([w], lambda x: T.sum(T.tanh(T.take(x, (slice(None), slice(1, 3)))))),
        "head_dot": ([feats, rng.normal(size=(2, 3))], lambda x, y: T.sum(T.tanh(T.head_dot(x, y)))),
        "cross_entropy": ([w], lambda x: T.cross_entropy(x, targets)),
        "dropout_fixed_seed": ([w], lambda x: T.sum(T.tanh(T.dropout(x, 0.5, 3)))),
        "reshape": ([w], lambda x: T.sum(T.tanh(T.reshape(x, (2, 6))))),
    }


@pytest.mark.parametrize("name", sorted(_fd_cases()))
def test_primitive_gradients_match_finite_differences(name):
    arrays_, op = _fd_cases()[name]
    tensors = [T.Tensor(a.copy(), requires_grad=True) for a in arrays_]
    errors = gradient_errors(lambda: op(*tensors), tensors)
    assert max(errors) <= 1e-4, (name, errors)


def test_flop_counter_counts_matmul():
    with T.count_flops() as c:
        T.matmul(T.Tensor(np.ones((3, 4))), T.Tensor(np.ones((4, 5))))
    assert c.count == 60
    T.matmul(T.Tensor(np.ones((3, 4))), T.Tensor(np.ones((4, 5))))
    assert c.count == 60
