import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hadamard_cnn import tensor as T
from hadamard_cnn.errors import ConfigurationError, DataError, DimensionError
from hadamard_cnn.gradcheck import check_grads, numerical_grad, project, rel_error


def triple_loop_matmul(a, b):
    m, k = a.shape
    _, p = b.shape
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


class TestMatmul:
    def test_identity(self):
        b = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(T.matmul(T.Tensor(np.eye(2)), T.Tensor(b)).data, b)

    def test_hadamard_order_two(self):
        out = T.matmul(T.Tensor([[1.0, 1.0], [1.0, -1.0]]), T.Tensor([[1.0], [0.0]]))
        np.testing.assert_array_equal(out.data, [[1.0], [1.0]])

    def test_against_triple_loop(self):
        rng = np.random.default_rng(0)
        a = rng.integers(-5, 5, (3, 4)).astype(float)
        b = rng.integers(-5, 5, (4, 2)).astype(float)
        np.testing.assert_array_equal(T.matmul(T.Tensor(a), T.Tensor(b)).data, triple_loop_matmul(a, b))

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))

    def test_gradient(self):
        rng = np.random.default_rng(1)
        w = rng.standard_normal((3, 2))
        err = check_grads(lambda a, b: project(T.matmul(a, b), w), [rng.standard_normal((3, 4)),
                                                                     rng.standard_normal((4, 2))])
        assert err < 1e-6


class TestElementwise:
    def test_mul_by_ones(self):
        x = np.random.default_rng(0).standard_normal((3, 3))
        np.testing.assert_array_equal(T.mul(T.Tensor(x), T.Tensor(np.ones((3, 3)))).data, x)

    def test_hand_values(self):
        np.testing.assert_array_equal(T.mul(T.Tensor([2.0, 3.0]), T.Tensor([4.0, 5.0])).data, [8.0, 15.0])
        np.testing.assert_array_equal(T.add(T.Tensor([2.0, 3.0]), T.Tensor([4.0, 5.0])).data, [6.0, 8.0])
        np.testing.assert_array_equal(T.sub(T.Tensor([2.0, 3.0]), T.Tensor([4.0, 5.0])).data, [-2.0, -2.0])

    def test_mul_gradient_is_other_operand(self):
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal(5), rng.standard_normal(5)
        ta = T.Tensor(a, requires_grad=True)
        T.backward(T.tensor_sum(T.mul(ta, T.Tensor(b))))
        np.testing.assert_allclose(ta.grad, b)
        num = numerical_grad(lambda v: float((v * b).sum()), a.copy(), 1e-6)
        np.testing.assert_allclose(ta.grad, num, rtol=1e-6, atol=1e-8)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            T.add(T.Tensor(np.ones(3)), T.Tensor(np.ones(4)))

    def test_unknown_op(self):
        with pytest.raises(ConfigurationError):
            T.elementwise(T.Tensor(np.ones(3)), T.Tensor(np.ones(3)), "div")


class TestRelu:
    def test_definition(self):
        np.testing.assert_array_equal(T.relu(T.Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_all_negative(self):
        x = T.Tensor(-np.ones(4), requires_grad=True)
        y = T.relu(x)
        np.testing.assert_array_equal(y.data, np.zeros(4))
        T.backward(T.tensor_sum(y))
        np.testing.assert_array_equal(x.grad, np.zeros(4))

    def test_gradient_away_from_kink(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(20)
        x[np.abs(x) < 0.05] = 0.5
        w = rng.standard_normal(20)
        assert check_grads(lambda t: project(T.relu(t), w), [x]) < 1e-4


class TestMaxPool:
    def test_single_window(self):
        out = T.max_pool2(T.Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])))
        np.testing.assert_array_equal(out.data, [[[[4.0]]]])

    def test_constant_input_routes_to_first_element(self):
        x = T.Tensor(np.full((1, 1, 4, 4), 7.0), requires_grad=True)
        out = T.max_pool2(x)
        np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 7.0))
        T.backward(T.tensor_sum(out))
        expected = np.zeros((4, 4))
        expected[0::2, 0::2] = 1.0
        np.testing.assert_array_equal(x.grad[0, 0], expected)

    def test_against_window_scan(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 3, 4, 4))
        out = T.max_pool2(T.Tensor(x)).data
        for b in range(2):
            for c in range(3):
                for i in range(2):
                    for j in range(2):
                        assert out[b, c, i, j] == max(x[b, c, 2 * i + di, 2 * j + dj]
                                                      for di in range(2) for dj in range(2))

    def test_gradient(self):
        rng = np.random.default_rng(5)
        x = rng.permutation(64).reshape(1, 1, 8, 8).astype(float) * 0.1
        w = rng.standard_normal((1, 1, 4, 4))
        assert check_grads(lambda t: project(T.max_pool2(t), w), [x]) < 1e-6

    def test_odd_size_rejected(self):
        with pytest.raises(DimensionError):
            T.max_pool2(T.Tensor(np.zeros((1, 1, 5, 4))))


class TestBatchNorm:
    def test_train_mode_normalizes(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((8, 3, 5, 5)) * 4 + 2
        state = T.BatchNormState(3)
        out = T.batch_norm2d(T.Tensor(x), T.Tensor(np.ones(3)), T.Tensor(np.zeros(3)), state, True).data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-5)

    def test_eval_identity(self):
        x = np.random.default_rng(7).standard_normal((2, 3, 2, 2))
        state = T.BatchNormState(3)
        out = T.batch_norm2d(T.Tensor(x), T.Tensor(np.ones(3)), T.Tensor(np.zeros(3)), state, False).data
        np.testing.assert_allclose(out, x / np.sqrt(1 + state.eps), rtol=1e-12)
        np.testing.assert_allclose(out, x, atol=1e-5 * np.abs(x).max())

    def test_running_stats_update(self):
        x = np.random.default_rng(8).standard_normal((4, 2, 3, 3)) + 3.0
        state = T.BatchNormState(2, momentum=0.1)
        T.batch_norm2d(T.Tensor(x), T.Tensor(np.ones(2)), T.Tensor(np.zeros(2)), state, True)
        np.testing.assert_allclose(state.running_mean, 0.1 * x.mean(axis=(0, 2, 3)))
        m = x.size // 2
        np.testing.assert_allclose(state.running_var, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * m / (m - 1))

    def test_gradient(self):
        rng = np.random.default_rng(9)
        w = rng.standard_normal((2, 3, 2, 2))

        def build(x, g, b):
            return project(T.batch_norm2d(x, g, b, T.BatchNormState(3), True), w)

        err = check_grads(build, [rng.standard_normal((2, 3, 2, 2)), rng.standard_normal(3) + 1.5,
                                  rng.standard_normal(3)])
        assert err < 1e-3

    def test_batch_of_one_rejected(self):
        with pytest.raises(ConfigurationError):
            T.batch_norm2d(T.Tensor(np.zeros((1, 2, 2, 2))), T.Tensor(np.ones(2)), T.Tensor(np.zeros(2)),
                           T.BatchNormState(2), True)


class TestDropout:
    def test_p_zero_is_identity(self):
        x = T.Tensor(np.arange(6.0))
        assert T.dropout(x, 0.0, True, np.random.default_rng(0)) is x

    def test_eval_is_identity(self):
        x = T.Tensor(np.arange(6.0))
        np.testing.assert_array_equal(T.dropout(x, 0.7, False, np.random.default_rng(0)).data, x.data)

    def test_drop_fraction(self):
        out = T.dropout(T.Tensor(np.ones(1_000_000)), 0.2, True, np.random.default_rng(10)).data
        assert abs((out == 0).mean() - 0.2) < 0.005
        np.testing.assert_allclose(np.unique(out[out != 0]), [1.25])

    def test_seeded_determinism(self):
        x = T.Tensor(np.ones(100))
        a = T.dropout(x, 0.5, True, np.random.default_rng(3)).data
        b = T.dropout(x, 0.5, True, np.random.default_rng(3)).data
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("p", [-0.1, 1.0, 1.5])
    def test_bad_probability(self, p):
        with pytest.raises(ConfigurationError):
            T.dropout(T.Tensor(np.ones(3)), p, True, np.random.default_rng(0))


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss = T.softmax_cross_entropy(T.Tensor(np.zeros((4, 10))), np.arange(4))
        assert loss.item() == pytest.approx(np.log(10), abs=1e-12)
        assert loss.item() == pytest.approx(2.302585, abs=1e-6)

    def test_large_margin(self):
        logits = np.zeros((2, 10))
        logits[[0, 1], [3, 7]] = 1e4
        assert T.softmax_cross_entropy(T.Tensor(logits), [3, 7]).item() == pytest.approx(0.0, abs=1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(11)
        labels = rng.integers(0, 5, 4)
        err = check_grads(lambda z: T.softmax_cross_entropy(z, labels), [rng.standard_normal((4, 5))])
        assert err < 1e-5

    def test_label_out_of_range(self):
        with pytest.raises(DataError):
            T.softmax_cross_entropy(T.Tensor(np.zeros((2, 3))), [0, 3])


class TestPadCrop:
    def test_round_trip(self):
        x = np.random.default_rng(12).random((2, 1, 28, 28))
        padded = T.pad2d(T.Tensor(x), (32, 32))
        assert padded.shape == (2, 1, 32, 32)
        assert np.all(padded.data[..., 28:, :] == 0) and np.all(padded.data[..., :, 28:] == 0)
        np.testing.assert_array_equal(T.crop2d(padded, (28, 28)).data, x)
        assert padded.data.sum() == pytest.approx(x.sum())

    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 4), st.integers(0, 4))
    @settings(max_examples=30, deadline=None)
    def test_pad_then_crop_identity(self, h, w, dh, dw):
        x = np.random.default_rng(h * 7 + w).standard_normal((h, w))
        out = T.crop2d(T.pad2d(T.Tensor(x), (h + dh, w + dw)), (h, w))
        np.testing.assert_array_equal(out.data, x)

    def test_gradients_are_each_other(self):
        rng = np.random.default_rng(13)
        w_pad, w_crop = rng.standard_normal((5, 6)), rng.standard_normal((2, 3))
        assert check_grads(lambda t: project(T.pad2d(t, (5, 6)), w_pad), [rng.standard_normal((3, 4))]) < 1e-8
        assert check_grads(lambda t: project(T.crop2d(t, (2, 3)), w_crop), [rng.standard_normal((3, 4))]) < 1e-8

    def test_bad_targets(self):
        with pytest.raises(DimensionError):
            T.pad2d(T.Tensor(np.zeros((4, 4))), (3, 4))
        with pytest.raises(DimensionError):
            T.crop2d(T.Tensor(np.zeros((4, 4))), (5, 4))


class TestBackward:
    def test_sum_gives_ones(self):
        x = T.Tensor(np.random.default_rng(0).standard_normal((3, 2)), requires_grad=True)
        T.backward(T.tensor_sum(x))
        np.testing.assert_array_equal(x.grad, np.ones((3, 2)))

    def test_unused_leaf_has_zero_grad(self):
        x = T.Tensor(np.ones(3), requires_grad=True)
        unused = T.Tensor(np.ones(4), requires_grad=True)
        T.backward(T.tensor_sum(x))
        np.testing.assert_array_equal(unused.grad, np.zeros(4))

    def test_non_scalar_rejected(self):
        with pytest.raises(ConfigurationError):
            T.backward(T.Tensor(np.ones(3), requires_grad=True))

    def test_empty_graph_is_noop(self):
        x = T.Tensor(np.ones(()))
        T.backward(x)
        assert x.grad is None

    def test_reuse_accumulates(self):
        rng = np.random.default_rng(14)
        a = rng.standard_normal(4)
        x = T.Tensor(a, requires_grad=True)
        T.backward(T.tensor_sum(T.mul(x, x)))
        np.testing.assert_allclose(x.grad, 2 * a)

    def test_sum_of_functions_equals_sum_of_backwards(self):
        rng = np.random.default_rng(15)
        a, w = rng.standard_normal(6), rng.standard_normal(6)

        def f(t):
            return project(T.relu(t), w)

        def g(t):
            return T.tensor_sum(T.mul(t, t))

        x = T.Tensor(a, requires_grad=True)
        T.backward(T.add(f(x), g(x)))
        together = x.grad.copy()
        x.zero_grad()
        T.backward(f(x))
        T.backward(g(x))
        np.testing.assert_allclose(together, x.grad, rtol=1e-12)

    def test_tape_visits_each_node_once(self):
        x = T.Tensor(np.ones(3), requires_grad=True)
        y = T.mul(x, x)
        z = T.add(y, y)
        loss = T.tensor_sum(z)
        order = T.tape(loss)
        assert len(order) == len({id(n) for n in order}) == 4
        assert order[-1] is loss and order[0] is x

    def test_micro_net(self):
        # 2 -> 2 dense with bias (6 parameters), relu, cross-entropy
        rng = np.random.default_rng(16)
        x = rng.standard_normal((3, 2))
        labels = np.array([0, 1, 1])

        def build(w, b):
            return T.softmax_cross_entropy(T.relu(T.linear(T.Tensor(x), w, b)), labels)

        assert check_grads(build, [rng.standard_normal((2, 2)), rng.standard_normal(2) + 2.0]) < 1e-4

    def test_no_grad_records_nothing(self):
        x = T.Tensor(np.ones(3), requires_grad=True)
        with T.no_grad():
            y = T.mul(x, x)
        assert not y.requires_grad and y.is_leaf


def test_linear_against_loop():
    rng = np.random.default_rng(17)
    x, w, b = rng.standard_normal((4, 3)), rng.standard_normal((2, 3)), rng.standard_normal(2)
    out = T.linear(T.Tensor(x), T.Tensor(w), T.Tensor(b)).data
    expected = np.array([[sum(x[i, k] * w[j, k] for k in range(3)) + b[j] for j in range(2)] for i in range(4)])
    np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_float32_mode_preserves_dtype():
    x = T.Tensor(np.ones((2, 3), dtype=np.float32), requires_grad=True)
    y = T.relu(T.linear(x, T.Tensor(np.ones((4, 3), dtype=np.float32)), T.Tensor(np.zeros(4, dtype=np.float32))))
    assert y.dtype == np.float32
    assert rel_error(y.data, np.full((2, 4), 3.0)) == 0.0
