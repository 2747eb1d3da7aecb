"""Layer-math tests: worked examples, independent naive oracles, and
finite-difference gradient checks for every operation."""

import numpy as np
import pytest

from admri.nn import ops
from admri.nn.ops import ConvKernel

from oracles import (
    conv2d_direct,
    conv2d_grad_input_full_correlation,
    fc_direct,
    finite_difference,
    gradients_close,
    maxpool_direct,
)


def random_kernel(rng, f, c, m, dtype=np.float64, zero_bias=False):
    w = rng.normal(size=(f, c, m, m)).astype(dtype)
    b = np.zeros(f, dtype=dtype) if zero_bias else rng.normal(size=f).astype(dtype)
    return ConvKernel(w, b)


class TestConvForward:
    def test_second_stage_shape(self):
        # 20-channel 12x12 input through 50 5x5 filters: 50x8x8 feature maps
        rng = np.random.default_rng(1)
        x = rng.normal(size=(20, 12, 12)).astype(np.float32)
        kernel = random_kernel(rng, 50, 20, 5, dtype=np.float32)
        assert ops.conv2d_forward(x, kernel).shape == (50, 8, 8)

    def test_zero_input_gives_bias(self):
        rng = np.random.default_rng(2)
        kernel = random_kernel(rng, 4, 1, 2)
        out = ops.conv2d_forward(np.zeros((1, 3, 3)), kernel)
        for f in range(4):
            np.testing.assert_allclose(out[f], kernel.bias[f], rtol=0, atol=0)

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 6, 6))
        kernel = random_kernel(rng, 3, 2, 3)
        out = ops.conv2d_forward(x, kernel)
        expected = conv2d_direct(x, kernel.weights, kernel.bias)
        np.testing.assert_allclose(out, expected, rtol=1e-12)

    def test_matches_direct_summation_float32(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(2, 6, 6)).astype(np.float32)
        kernel = random_kernel(rng, 3, 2, 3, dtype=np.float32)
        out = ops.conv2d_forward(x, kernel)
        expected = conv2d_direct(x.astype(np.float64),
                                 kernel.weights.astype(np.float64),
                                 kernel.bias.astype(np.float64))
        np.testing.assert_allclose(out, expected, rtol=1e-5)

    def test_linearity_with_zero_bias(self):
        rng = np.random.default_rng(5)
        kernel = random_kernel(rng, 3, 2, 3, dtype=np.float32, zero_bias=True)
        x = rng.normal(size=(2, 8, 8)).astype(np.float32)
        y = rng.normal(size=(2, 8, 8)).astype(np.float32)
        alpha, beta = np.float32(0.7), np.float32(-1.3)
        combined = ops.conv2d_forward(alpha * x + beta * y, kernel)
        separate = alpha * ops.conv2d_forward(x, kernel) + beta * ops.conv2d_forward(y, kernel)
        np.testing.assert_allclose(combined, separate, rtol=1e-5, atol=1e-6)

    def test_shape_errors(self):
        rng = np.random.default_rng(6)
        kernel = random_kernel(rng, 2, 3, 5)
        with pytest.raises(ValueError, match="channels"):
            ops.conv2d_forward(np.zeros((2, 8, 8)), kernel)
        with pytest.raises(ValueError, match="smaller than kernel"):
            ops.conv2d_forward(np.zeros((3, 4, 4)), kernel)
        with pytest.raises(ValueError, match="stride"):
            ops.conv2d_forward(np.zeros((3, 8, 8)), kernel, stride=2)


class TestConvBackward:
    def test_zero_upstream_gradient(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(2, 6, 6))
        kernel = random_kernel(rng, 3, 2, 3)
        gx, gw, gb = ops.conv2d_backward(x, kernel, np.zeros((3, 4, 4)))
        assert not gx.any() and not gw.any() and not gb.any()

    def test_one_by_one_kernel_is_scalar_chain_rule(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(1, 4, 4))
        w = np.full((1, 1, 1, 1), 2.5)
        kernel = ConvKernel(w, np.zeros(1))
        gout = rng.normal(size=(1, 4, 4))
        gx, _, _ = ops.conv2d_backward(x, kernel, gout)
        np.testing.assert_allclose(gx, 2.5 * gout, rtol=1e-12)

    def test_grad_input_equals_full_correlation(self):
        # Backward input gradient must equal the independent full-correlation
        # form summed over filters.
        rng = np.random.default_rng(9)
        x = rng.normal(size=(2, 5, 5))
        kernel = random_kernel(rng, 3, 2, 2)
        gout = rng.normal(size=(3, 4, 4))
        gx, _, _ = ops.conv2d_backward(x, kernel, gout)
        expected = conv2d_grad_input_full_correlation(kernel.weights, gout, 5, 5)
        np.testing.assert_allclose(gx, expected, rtol=1e-12)

    def test_against_finite_differences(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(2, 6, 6))
        kernel = random_kernel(rng, 3, 2, 3)
        probe = rng.normal(size=(3, 4, 4))  # scalarizes the output
        gx, gw, gb = ops.conv2d_backward(x, kernel, probe)

        fd_x = finite_difference(
            lambda: float((ops.conv2d_forward(x, kernel) * probe).sum()), x
        )
        ok, *_ = gradients_close(gx, fd_x)
        assert ok
        fd_w = finite_difference(
            lambda: float((ops.conv2d_forward(x, kernel) * probe).sum()), kernel.weights
        )
        ok, *_ = gradients_close(gw, fd_w)
        assert ok
        fd_b = finite_difference(
            lambda: float((ops.conv2d_forward(x, kernel) * probe).sum()), kernel.bias
        )
        ok, *_ = gradients_close(gb, fd_b)
        assert ok

    def test_gradout_shape_error(self):
        rng = np.random.default_rng(11)
        kernel = random_kernel(rng, 3, 2, 3)
        with pytest.raises(ValueError, match="grad_out"):
            ops.conv2d_backward(np.zeros((2, 6, 6)), kernel, np.zeros((3, 3, 3)))


class TestMaxPool:
    def test_first_stage_shape(self):
        x = np.random.default_rng(12).normal(size=(20, 24, 24))
        out, arg = ops.maxpool2x2_forward(x)
        assert out.shape == (20, 12, 12) and arg.shape == (20, 12, 12)

    def test_constant_input(self):
        out, _ = ops.maxpool2x2_forward(np.full((3, 4, 4), 2.5))
        np.testing.assert_array_equal(out, np.full((3, 2, 2), 2.5))

    def test_matches_window_scan(self):
        x = np.random.default_rng(13).normal(size=(3, 8, 8))
        out, _ = ops.maxpool2x2_forward(x)
        np.testing.assert_array_equal(out, maxpool_direct(x))

    def test_tie_breaks_to_first_row_major(self):
        x = np.zeros((1, 2, 2))
        _, arg = ops.maxpool2x2_forward(x)
        assert arg[0, 0, 0] == 0
        x[0, 1, 1] = 1.0  # unique max in last position
        _, arg = ops.maxpool2x2_forward(x)
        assert arg[0, 0, 0] == 3

    def test_odd_dims_rejected(self):
        with pytest.raises(ValueError, match="even"):
            ops.maxpool2x2_forward(np.zeros((1, 3, 4)))

    def test_backward_routes_single_one_per_window(self):
        x = np.random.default_rng(14).normal(size=(2, 6, 6))
        out, arg = ops.maxpool2x2_forward(x)
        gx = ops.maxpool2x2_backward(arg, np.ones_like(out))
        windows = gx.reshape(2, 3, 2, 3, 2)
        sums = windows.sum(axis=(2, 4))
        np.testing.assert_array_equal(sums, np.ones((2, 3, 3)))
        assert ((gx == 0) | (gx == 1)).all()

    def test_backward_zero(self):
        x = np.random.default_rng(15).normal(size=(2, 4, 4))
        _, arg = ops.maxpool2x2_forward(x)
        assert not ops.maxpool2x2_backward(arg, np.zeros((2, 2, 2))).any()

    def test_gradient_mass_conserved(self):
        rng = np.random.default_rng(16)
        x = rng.normal(size=(4, 8, 8))
        out, arg = ops.maxpool2x2_forward(x)
        gout = rng.normal(size=out.shape)
        gx = ops.maxpool2x2_backward(arg, gout)
        assert gx.sum() == pytest.approx(gout.sum(), rel=1e-12)

    def test_against_finite_differences(self):
        rng = np.random.default_rng(17)
        x = rng.normal(size=(2, 6, 6))
        probe = rng.normal(size=(2, 3, 3))

        def loss():
            out, _ = ops.maxpool2x2_forward(x)
            return float((out * probe).sum())

        _, arg = ops.maxpool2x2_forward(x)
        gx = ops.maxpool2x2_backward(arg, probe)
        ok, *_ = gradients_close(gx, finite_difference(loss, x))
        assert ok

    def test_stale_map_shape_error(self):
        x = np.random.default_rng(18).normal(size=(2, 6, 6))
        _, arg = ops.maxpool2x2_forward(x)
        with pytest.raises(ValueError, match="shape"):
            ops.maxpool2x2_backward(arg, np.zeros((2, 2, 2)))


class TestFullyConnected:
    def test_identity_weights(self):
        x = np.random.default_rng(19).normal(size=5)
        out = ops.fc_forward(x, np.eye(5), np.zeros(5))
        np.testing.assert_allclose(out, x, rtol=0, atol=0)

    def test_hidden_width_shape(self):
        rng = np.random.default_rng(20)
        x = rng.normal(size=800).astype(np.float32)  # flattened 50x4x4
        w = rng.normal(size=(500, 800)).astype(np.float32)
        b = rng.normal(size=500).astype(np.float32)
        assert ops.fc_forward(x, w, b).shape == (500,)

    def test_matches_direct_dot(self):
        rng = np.random.default_rng(21)
        x = rng.normal(size=7)
        w = rng.normal(size=(4, 7))
        b = rng.normal(size=4)
        np.testing.assert_allclose(ops.fc_forward(x, w, b), fc_direct(x, w, b), rtol=1e-12)

    def test_backward_zero_and_identity(self):
        rng = np.random.default_rng(22)
        x = rng.normal(size=5)
        gx, gw, gb = ops.fc_backward(x, np.eye(5), np.zeros(5))
        assert not gx.any() and not gw.any() and not gb.any()
        g = rng.normal(size=5)
        gx, _, _ = ops.fc_backward(x, np.eye(5), g)
        np.testing.assert_allclose(gx, g, rtol=0, atol=0)

    def test_against_finite_differences(self):
        rng = np.random.default_rng(23)
        x = rng.normal(size=6)
        w = rng.normal(size=(4, 6))
        b = rng.normal(size=4)
        probe = rng.normal(size=4)
        gx, gw, gb = ops.fc_backward(x, w, probe)
        for analytic, wrt in ((gx, x), (gw, w), (gb, b)):
            fd = finite_difference(lambda: float((ops.fc_forward(x, w, b) * probe).sum()), wrt)
            ok, *_ = gradients_close(analytic, fd)
            assert ok

    def test_dimension_error(self):
        with pytest.raises(ValueError, match="inputs"):
            ops.fc_forward(np.zeros(3), np.zeros((2, 4)), np.zeros(2))


class TestRelu:
    def test_definition(self):
        np.testing.assert_array_equal(ops.relu(np.array([-1.0, 0.0, 2.0])),
                                      np.array([0.0, 0.0, 2.0]))

    def test_positive_identity(self):
        x = np.random.default_rng(24).uniform(0.1, 2.0, size=(3, 4))
        np.testing.assert_array_equal(ops.relu(x), x)

    def test_against_finite_differences_off_zero(self):
        rng = np.random.default_rng(25)
        x = rng.normal(size=20)
        x[np.abs(x) < 0.05] += 0.1  # keep clear of the kink
        probe = rng.normal(size=20)
        analytic = ops.relu_backward(x, probe)
        fd = finite_difference(lambda: float((ops.relu(x) * probe).sum()), x)
        ok, *_ = gradients_close(analytic, fd)
        assert ok

    def test_grad_blocked_at_exact_zero(self):
        g = ops.relu_backward(np.array([0.0, 1.0]), np.array([5.0, 5.0]))
        np.testing.assert_array_equal(g, np.array([0.0, 5.0]))


class TestSoftmaxCrossEntropy:
    def test_symmetric_logits(self):
        loss, grad = ops.softmax_cross_entropy(np.zeros(2), 0)
        assert loss == pytest.approx(0.6931471805599453, abs=1e-12)
        np.testing.assert_allclose(grad, [-0.5, 0.5], atol=1e-12)

    def test_shift_invariance(self):
        logits = np.array([0.3, -1.2, 2.0])
        base = ops.softmax_cross_entropy(logits, 2)
        shifted = ops.softmax_cross_entropy(logits + 3.5, 2)
        assert shifted.loss == pytest.approx(base.loss, abs=1e-12)
        np.testing.assert_allclose(shifted.grad_logits, base.grad_logits, atol=1e-12)

    def test_frozen_values(self):
        # independently evaluated at high precision: loss = ln(1 + e^-1)
        loss, grad = ops.softmax_cross_entropy(np.array([1.0, 2.0]), 1)
        assert loss == pytest.approx(0.3132616875182228, abs=1e-12)
        assert grad[1] == pytest.approx(0.7310585786300049 - 1.0, abs=1e-12)
        assert grad[0] == pytest.approx(0.2689414213699951, abs=1e-12)

    def test_probability_vector(self):
        rng = np.random.default_rng(26)
        for _ in range(20):
            logits = rng.normal(scale=5.0, size=rng.integers(2, 8))
            p = ops.softmax(logits)
            assert ((p > 0) & (p < 1)).all()
            assert abs(p.sum() - 1.0) < 1e-6

    def test_loss_non_negative(self):
        rng = np.random.default_rng(27)
        for _ in range(50):
            k = int(rng.integers(2, 6))
            logits = rng.normal(scale=10.0, size=k)
            assert ops.softmax_cross_entropy(logits, int(rng.integers(k))).loss >= 0.0

    def test_against_finite_differences(self):
        rng = np.random.default_rng(28)
        logits = rng.normal(size=5)
        _, grad = ops.softmax_cross_entropy(logits, 3)
        fd = finite_difference(lambda: ops.softmax_cross_entropy(logits, 3).loss, logits)
        ok, *_ = gradients_close(grad, fd)
        assert ok

    def test_out_of_range_class(self):
        with pytest.raises(ValueError, match="out of range"):
            ops.softmax_cross_entropy(np.zeros(2), 2)
        with pytest.raises(ValueError, match="at least 2"):
            ops.softmax_cross_entropy(np.zeros(1), 0)


class TestConvKernelValidation:
    def test_bias_length_mismatch(self):
        with pytest.raises(ValueError, match="bias length"):
            ConvKernel(np.zeros((3, 1, 2, 2)), np.zeros(2))

    def test_non_square_kernel(self):
        with pytest.raises(ValueError, match="square"):
            ConvKernel(np.zeros((3, 1, 2, 3)), np.zeros(3))
