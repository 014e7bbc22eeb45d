import math

import numpy as np
import pytest

from hvqa.tensor import (
    NumericError,
    ShapeError,
    Tape,
    Tensor,
    add,
    broadcast_to,
    concat,
    cross_entropy,
    elementwise_product,
    matmul,
    one_hot,
    parameter,
    relu,
    scale,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    tanh,
    tensor_sum,
)

from gradcheck import fd_gradient, rel_error


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_allclose(matmul(a, b).data, [[1, 2], [3, 4]])

    def test_hand_computed(self):
        c = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_allclose(c.data, [[11.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError) as err:
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
        assert "(2, 3)" in str(err.value)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        a = parameter(rng.uniform(-2, 2, (3, 4)), dtype=np.float64)
        b = parameter(rng.uniform(-2, 2, (4, 2)), dtype=np.float64)
        with Tape() as tape:
            loss = tensor_sum(matmul(a, b))
        tape.backward(loss)

        def forward():
            return tensor_sum(matmul(a, b)).item()

        assert rel_error(a.grad, fd_gradient(forward, a.data)) < 1e-6
        assert rel_error(b.grad, fd_gradient(forward, b.data)) < 1e-6

    def test_vector_operand_gradients(self):
        rng = np.random.default_rng(1)
        m = parameter(rng.uniform(-2, 2, (3, 5)), dtype=np.float64)
        v = parameter(rng.uniform(-2, 2, 5), dtype=np.float64)
        w = parameter(rng.uniform(-2, 2, 3), dtype=np.float64)

        def build():
            return tensor_sum(elementwise_product(w, matmul(m, v)))

        with Tape() as tape:
            loss = build()
        tape.backward(loss)
        for t in (m, v, w):
            assert rel_error(t.grad, fd_gradient(lambda: build().item(), t.data)) < 1e-6


class TestElementwiseProduct:
    def test_identity(self):
        out = elementwise_product(Tensor([1.0, 2.0, 3.0]), Tensor([1.0, 1.0, 1.0]))
        np.testing.assert_allclose(out.data, [1, 2, 3])

    def test_hand_computed(self):
        out = elementwise_product(Tensor([2.0, 0.0, -1.0]), Tensor([3.0, 5.0, 4.0]))
        np.testing.assert_allclose(out.data, [6, 0, -4])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            elementwise_product(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))

    def test_gradient_on_random_vectors(self):
        rng = np.random.default_rng(2)
        a = parameter(rng.uniform(-2, 2, 16), dtype=np.float64)
        b = parameter(rng.uniform(-2, 2, 16), dtype=np.float64)
        with Tape() as tape:
            loss = tensor_sum(elementwise_product(a, b))
        tape.backward(loss)

        def forward():
            return tensor_sum(elementwise_product(a, b)).item()

        assert rel_error(a.grad, fd_gradient(forward, a.data)) < 1e-6
        assert rel_error(b.grad, fd_gradient(forward, b.data)) < 1e-6


class TestSoftmax:
    def test_uniform_on_equal_inputs(self):
        np.testing.assert_allclose(softmax(Tensor([0.0, 0.0, 0.0, 0.0])).data,
                                   [0.25] * 4)

    def test_log_gap_forces_quarter_three_quarters(self):
        for c in (-40.0, 0.0, 3.5):
            out = softmax(Tensor([c, c + math.log(3.0)], dtype=np.float64))
            np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-12)

    def test_sums_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            x = rng.uniform(-10, 10, rng.integers(1, 9))
            s = softmax(Tensor(x, dtype=np.float64))
            assert abs(s.data.sum() - 1.0) < 1e-6
            assert (s.data > 0).all()
            shifted = softmax(Tensor(x + rng.uniform(-5, 5), dtype=np.float64))
            np.testing.assert_allclose(s.data, shifted.data, atol=1e-6)

    def test_rejects_non_finite_input(self):
        with pytest.raises(NumericError):
            softmax(Tensor(np.array([0.0, np.inf])))

    def test_jacobian_vector_product_vs_finite_differences(self):
        rng = np.random.default_rng(4)
        x = parameter(rng.uniform(-2, 2, 8), dtype=np.float64)
        v = rng.uniform(-1, 1, 8)
        weights = Tensor(v)
        with Tape() as tape:
            loss = tensor_sum(elementwise_product(softmax(x), weights))
        tape.backward(loss)

        def forward():
            return float(np.dot(softmax(x).data, v))

        assert rel_error(x.grad, fd_gradient(forward, x.data)) < 1e-5


class TestCrossEntropy:
    def test_perfect_prediction_is_zero(self):
        p = Tensor([0.0, 1.0, 0.0])
        t = one_hot(1, 3)
        assert cross_entropy(p, t).item() == 0.0

    def test_uniform_over_12_classes(self):
        p = Tensor(np.full(12, 1 / 12), dtype=np.float64)
        for hot in (0, 5, 11):
            out = cross_entropy(p, one_hot(hot, 12, dtype=np.float64))
            assert out.item() == pytest.approx(math.log(12), abs=1e-12)

    def test_non_negative_with_equality_only_at_certainty(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            logits = rng.uniform(-4, 4, 6)
            p = Tensor(np.exp(logits) / np.exp(logits).sum(), dtype=np.float64)
            hot = int(rng.integers(6))
            value = cross_entropy(p, one_hot(hot, 6, dtype=np.float64)).item()
            assert value >= 0.0
            assert (value == 0.0) == (p.data[hot] == 1.0)

    def test_rejects_non_one_hot_target(self):
        with pytest.raises(ValueError):
            cross_entropy(Tensor([0.5, 0.5]), Tensor([0.5, 0.5]))
        with pytest.raises(ValueError):
            cross_entropy(Tensor([0.5, 0.5]), Tensor([1.0, 1.0]))

    def test_rejects_zero_probability_at_hot_index(self):
        with pytest.raises(NumericError):
            cross_entropy(Tensor([1.0, 0.0]), one_hot(1, 2))

    def test_fused_gradient_is_probs_minus_target(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            z = parameter(rng.uniform(-3, 3, 9), dtype=np.float64)
            hot = int(rng.integers(9))
            with Tape() as tape:
                loss = softmax_cross_entropy(z, hot)
            tape.backward(loss)
            expected = softmax(Tensor(z.data, dtype=np.float64)).data.copy()
            expected[hot] -= 1.0
            assert np.abs(z.grad - expected).max() < 1e-10

    def test_fused_value_matches_raw_form(self):
        rng = np.random.default_rng(7)
        z = rng.uniform(-3, 3, 5)
        p = softmax(Tensor(z, dtype=np.float64))
        fused = softmax_cross_entropy(Tensor(z, dtype=np.float64), 2).item()
        raw = cross_entropy(p, one_hot(2, 5, dtype=np.float64)).item()
        assert fused == pytest.approx(raw, rel=1e-12)


class TestBackward:
    def test_sum_gives_ones(self):
        x = parameter(np.arange(5.0))
        with Tape() as tape:
            loss = tensor_sum(x)
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, np.ones(5, dtype=x.dtype))

    def test_quadratic_rule(self):
        x = parameter([1.0, 2.0, 3.0])
        with Tape() as tape:
            loss = tensor_sum(elementwise_product(x, x))
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])

    def test_two_backward_calls_double_the_gradients(self):
        rng = np.random.default_rng(8)
        x = parameter(rng.uniform(-2, 2, 7), dtype=np.float64)
        with Tape() as tape:
            loss = tensor_sum(elementwise_product(sigmoid(x), tanh(x)))
        tape.backward(loss)
        once = x.grad.copy()
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, 2.0 * once)

    def test_loss_must_be_scalar(self):
        x = parameter(np.ones(3))
        with Tape() as tape:
            y = elementwise_product(x, x)
        with pytest.raises(ShapeError):
            tape.backward(y)

    def test_loss_must_come_from_the_tape(self):
        x = parameter(np.ones(3))
        with Tape() as tape:
            tensor_sum(x)
        stray = tensor_sum(x)  # recorded nowhere: tape already closed
        with pytest.raises(ValueError):
            tape.backward(stray)

    def test_gradients_accumulate_until_zeroed(self):
        x = parameter([2.0])
        for expected in (4.0, 8.0):  # d sum(x*x)/dx = 2x = 4 per pass
            with Tape() as tape:
                loss = tensor_sum(elementwise_product(x, x))
            tape.backward(loss)
            assert x.grad[0] == pytest.approx(expected)
        x.zero_grad()
        assert x.grad[0] == 0.0

    def test_nested_tapes_rejected(self):
        with Tape():
            with pytest.raises(RuntimeError):
                with Tape():
                    pass

    def test_shared_input_gets_both_paths(self):
        x = parameter([3.0], dtype=np.float64)
        with Tape() as tape:
            loss = add(tensor_sum(elementwise_product(x, x)), tensor_sum(x))
        tape.backward(loss)
        assert x.grad[0] == pytest.approx(7.0)  # 2x + 1


class TestOpGradientsProperty:
    """Every differentiable op against the central-difference oracle,
    random inputs in [-2, 2], step 1e-5, 64-bit, rel err < 1e-4."""

    @pytest.mark.parametrize("trial", range(5))
    def test_unary_chain(self, trial):
        rng = np.random.default_rng(100 + trial)
        x = parameter(rng.uniform(-2, 2, 6), dtype=np.float64)

        def build():
            a = relu(x)
            b = sigmoid(x)
            c = tanh(x)
            d = softmax(x)
            stacked = concat(concat(a, b), concat(c, d))
            wide = broadcast_to(stacked, (3, 24))
            return tensor_sum(scale(wide, 0.5))

        with Tape() as tape:
            loss = build()
        tape.backward(loss)
        assert rel_error(x.grad, fd_gradient(lambda: build().item(), x.data)) < 1e-4

    def test_broadcast_scalar_axis(self):
        x = parameter([1.5], dtype=np.float64)

        def build():
            return tensor_sum(broadcast_to(x, (4,)))

        with Tape() as tape:
            loss = build()
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, [4.0])


class TestFiniteness:
    def test_overflow_raises_numeric_error(self):
        big = Tensor(np.full((2, 2), 1e300))
        with np.errstate(over="ignore"), pytest.raises(NumericError):
            matmul(big, big)

    def test_values_stay_finite_on_finite_inputs(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.uniform(-50, 50, 32))
        for op in (relu, sigmoid, tanh, softmax):
            assert np.isfinite(op(x).data).all()


class TestTensorBasics:
    def test_contiguity_and_shape_invariant(self):
        t = Tensor(np.arange(6.0).reshape(2, 3)[:, ::-1])
        assert t.data.flags["C_CONTIGUOUS"]
        assert math.prod(t.shape) == t.data.size

    def test_default_dtype_is_float32(self):
        assert Tensor([1, 2, 3]).dtype == np.float32

    def test_parameter_starts_with_zero_grad(self):
        p = parameter(np.ones((2, 2)))
        assert p.requires_grad
        np.testing.assert_array_equal(p.grad, np.zeros((2, 2), dtype=np.float32))

    def test_grad_shape_matches_data(self):
        p = parameter(np.ones((3, 4)), dtype=np.float64)
        with Tape() as tape:
            loss = tensor_sum(p)
        tape.backward(loss)
        assert p.grad.shape == p.data.shape
