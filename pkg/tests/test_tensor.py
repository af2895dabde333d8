"""
Unit tests for tensor and gradcheck modules
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.gradcheck import gradient_check, parameter_gradient_check, relative_error
from src.nn import Linear
from src.tensor import (
    GraphError,
    ShapeError,
    Tensor,
    batchnorm,
    concat,
    conv2d,
    conv2d_transpose,
    cross_entropy,
    forward_op,
    grad,
    is_grad_enabled,
    no_grad,
    precision,
)


def direct_conv2d(x, w, stride, padding):
    """Reference cross-correlation by explicit summation"""
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    k = w.shape[2]
    h_out = (xp.shape[2] - k) // stride + 1
    w_out = (xp.shape[3] - k) // stride + 1
    out = np.zeros((x.shape[0], w.shape[0], h_out, w_out))
    for b in range(x.shape[0]):
        for o in range(w.shape[0]):
            for y in range(h_out):
                for x_ in range(w_out):
                    patch = xp[b, :, y * stride:y * stride + k, x_ * stride:x_ * stride + k]
                    out[b, o, y, x_] = np.sum(patch * w[o])
    return out


def direct_conv2d_transpose(x, w, stride, padding):
    """Reference transposed convolution by scattering every input value"""
    batch, channels, height, width = x.shape
    k = w.shape[2]
    full = np.zeros((batch, w.shape[1], (height - 1) * stride + k, (width - 1) * stride + k))
    for b in range(batch):
        for c in range(channels):
            for i in range(height):
                for j in range(width):
                    full[b, :, i * stride:i * stride + k, j * stride:j * stride + k] += x[b, c, i, j] * w[c]
    return full[:, :, padding:full.shape[2] - padding, padding:full.shape[3] - padding]


class TestTensorBasics:
    """Test cases for tensor construction and contexts"""

    def test_default_dtype_is_float32(self):
        """Test that new tensors are 32-bit by default"""
        assert Tensor([1.0, 2.0]).dtype == np.float32

    def test_precision_context(self):
        """Test switching to 64-bit for a block"""
        with precision("float64"):
            assert Tensor([1.0]).dtype == np.float64
        assert Tensor([1.0]).dtype == np.float32

    def test_precision_rejects_unknown(self):
        """Test that only float32 and float64 are accepted"""
        with pytest.raises(ValueError) as exc_info:
            with precision("float16"):
                pass

        assert "float16" in str(exc_info.value)

    def test_data_is_copied(self):
        """Test that a tensor does not alias its source array"""
        source = np.ones(3, dtype=np.float32)
        t = Tensor(source)
        source[0] = 5.0

        assert t.data[0] == 1.0

    def test_no_grad_skips_graph(self):
        """Test that no graph is recorded inside no_grad"""
        x = Tensor([1.0, 2.0], requires_grad=True)
        with no_grad():
            assert not is_grad_enabled()
            y = (x * 2.0).sum()
        assert is_grad_enabled()
        assert not y.requires_grad
        assert y.is_leaf

    def test_detach(self):
        """Test that detach drops the graph"""
        x = Tensor([1.0], requires_grad=True)
        y = (x * 3.0).detach()

        assert not y.requires_grad
        assert y.is_leaf


class TestForwardOps:
    """Test cases for op forward values"""

    def test_matmul_identity(self):
        """Test matmul against the identity"""
        out = forward_op("matmul", Tensor([[1, 0], [0, 1]]), Tensor([[3], [4]]))
        np.testing.assert_array_equal(out.data, [[3], [4]])

    def test_matmul_inner_dimension_mismatch(self):
        """Test that mismatched inner dimensions raise a shape error"""
        with pytest.raises(ShapeError) as exc_info:
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))

        assert "inner dimensions" in str(exc_info.value)

    def test_leaky_relu(self):
        """Test leaky relu with slope 0.2"""
        out = forward_op("leaky_relu", Tensor([-1.0, 2.0]), slope=0.2)
        np.testing.assert_allclose(out.data, [-0.2, 2.0])

    def test_unknown_op_kind(self):
        """Test dispatch of an unknown op"""
        with pytest.raises(ValueError) as exc_info:
            forward_op("gelu", Tensor([1.0]))

        assert "gelu" in str(exc_info.value)

    def test_broadcast_mismatch(self):
        """Test that incompatible elementwise shapes raise"""
        with pytest.raises(ShapeError):
            Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))

    def test_conv2d_transpose_output_size(self):
        """Test the (H-1)s - 2p + k size rule for a 2x2 input"""
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 1, 2, 2))
        w = rng.standard_normal((1, 1, 4, 4))
        with precision("float64"):
            out = conv2d_transpose(Tensor(x), Tensor(w), stride=2, padding=1)

        assert out.shape == (1, 1, 4, 4)
        np.testing.assert_allclose(out.data, direct_conv2d_transpose(x, w, 2, 1), atol=1e-12)

    def test_conv2d_transpose_matches_direct_sum(self):
        """Test multi-channel transposed convolution against explicit scattering"""
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 3, 3, 3))
        w = rng.standard_normal((3, 2, 4, 4))
        with precision("float64"):
            out = conv2d_transpose(Tensor(x), Tensor(w), stride=2, padding=1)

        assert out.shape == (2, 2, 6, 6)
        np.testing.assert_allclose(out.data, direct_conv2d_transpose(x, w, 2, 1), atol=1e-12)

    def test_conv2d_matches_direct_sum(self):
        """Test strided padded convolution against explicit summation"""
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 2, 6, 6))
        w = rng.standard_normal((3, 2, 4, 4))
        with precision("float64"):
            out = conv2d(Tensor(x), Tensor(w), stride=2, padding=1)

        assert out.shape == (2, 3, 3, 3)
        np.testing.assert_allclose(out.data, direct_conv2d(x, w, 2, 1), atol=1e-12)

    def test_conv2d_channel_mismatch(self):
        """Test that a channel mismatch raises a shape error"""
        with pytest.raises(ShapeError) as exc_info:
            conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))

        assert "channels" in str(exc_info.value)

    def test_sigmoid_range_for_large_inputs(self):
        """Test that sigmoid stays finite and inside [0, 1]"""
        out = Tensor([-1000.0, 0.0, 1000.0]).sigmoid()

        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [0.0, 0.5, 1.0], atol=1e-6)

    def test_batchnorm_normalizes_channels(self):
        """Test zero mean and unit variance per channel with identity affine"""
        rng = np.random.default_rng(3)
        with precision("float64"):
            x = Tensor(rng.normal(3.0, 2.0, size=(16, 4, 2, 2)))
            y, mean, var = batchnorm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)), eps=0.0)

        np.testing.assert_allclose(y.data.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.data.var(axis=(0, 2, 3)), 1.0, atol=1e-9)
        assert mean.shape == (1, 4, 1, 1)


class TestBackward:
    """Test cases for reverse-mode gradients"""

    def test_matmul_chain_rule(self):
        """Test d/dz sum(W z) = column sums of W"""
        W = Tensor([[1.0, 2.0], [3.0, 4.0]])
        z = Tensor([[1.0], [1.0]], requires_grad=True)
        (dz,) = grad((W @ z).sum(), [z])

        np.testing.assert_allclose(dz, [[4.0], [6.0]])

    def test_constant_graph_gives_zero(self):
        """Test that unreachable leaves get zero gradients"""
        z = Tensor([1.0, 2.0], requires_grad=True)
        root = Tensor(3.0) * 2.0
        (dz,) = grad(root, [z])

        np.testing.assert_array_equal(dz, [0.0, 0.0])

    def test_tanh_at_zero(self):
        """Test tanh'(0) = 1"""
        z = Tensor([0.0, 0.0], requires_grad=True)
        z.tanh().sum().backward()

        np.testing.assert_allclose(z.grad, [1.0, 1.0])

    def test_backward_requires_scalar(self):
        """Test that a non-scalar root is rejected"""
        z = Tensor([1.0, 2.0], requires_grad=True)

        with pytest.raises(GraphError) as exc_info:
            (z * 2.0).backward()

        assert "scalar" in str(exc_info.value)

    def test_gradients_accumulate_over_shared_nodes(self):
        """Test a leaf used twice gets both contributions"""
        x = Tensor([2.0], requires_grad=True)
        (x * x + x).sum().backward()

        np.testing.assert_allclose(x.grad, [5.0])

    def test_backward_accumulates_across_calls(self):
        """Test that .grad accumulates until cleared"""
        x = Tensor([1.0], requires_grad=True)
        (x * 3.0).sum().backward()
        (x * 3.0).sum().backward()

        np.testing.assert_allclose(x.grad, [6.0])
        x.zero_grad()
        assert x.grad is None

    def test_grad_leaves_existing_grad_untouched(self):
        """Test that grad() restores previously accumulated values"""
        x = Tensor([1.0, 2.0], requires_grad=True)
        x.grad = np.array([7.0, 7.0], dtype=np.float32)
        (dx,) = grad((x * x).sum(), [x])

        np.testing.assert_allclose(dx, [2.0, 4.0])
        np.testing.assert_allclose(x.grad, [7.0, 7.0])

    def test_slice_repeated_index(self):
        """Test that gathered duplicates accumulate"""
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        (dx,) = grad(x[np.array([0, 0, 1])].sum(), [x])

        np.testing.assert_allclose(dx, [2.0, 1.0, 0.0])

    def test_max_splits_ties(self):
        """Test that tied maxima share the gradient"""
        x = Tensor([1.0, 3.0, 3.0], requires_grad=True)
        (dx,) = grad(x.max(), [x])

        np.testing.assert_allclose(dx, [0.0, 0.5, 0.5])

    def test_concat_splits_gradient(self):
        """Test that concat routes gradients back to each operand"""
        a = Tensor([[1.0, 2.0]], requires_grad=True)
        b = Tensor([[3.0, 4.0]], requires_grad=True)
        weights = Tensor([[1.0, 2.0], [3.0, 4.0]])
        da, db = grad((concat([a, b], axis=0) * weights).sum(), [a, b])

        np.testing.assert_allclose(da, [[1.0, 2.0]])
        np.testing.assert_allclose(db, [[3.0, 4.0]])

    def test_deep_chain_is_iterative(self):
        """Test a graph deeper than the default recursion limit"""
        x = Tensor([1.0], requires_grad=True)
        y = x
        for _ in range(3000):
            y = y + 0.0
        (dx,) = grad(y.sum(), [x])

        np.testing.assert_allclose(dx, [1.0])

    def test_gradient_is_linear_in_the_loss(self):
        """Test grad(a·f + b·g) = a·grad(f) + b·grad(g)"""
        rng = np.random.default_rng(0)
        with precision("float64"):
            x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
            W = Tensor(rng.standard_normal((4, 2)))

            def f():
                return (x @ W).tanh().sum()

            def g():
                return (x * x * x).sum()

            (df,) = grad(f(), [x])
            (dg,) = grad(g(), [x])
            (combined,) = grad(f() * 2.5 + g() * -0.75, [x])

        np.testing.assert_allclose(combined, df * 2.5 + dg * -0.75, rtol=1e-12, atol=1e-12)

    def test_repeated_gradients_are_identical(self):
        """Test that differentiating the same graph twice gives bit-identical arrays"""
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
        layer = Linear(3, 5, rng)

        def loss():
            return layer(x).leaky_relu(0.2).sum()

        first = grad(loss(), [x, layer.weight])
        second = grad(loss(), [x, layer.weight])

        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)

    @given(rows=st.integers(1, 5), cols=st.integers(1, 5))
    @settings(max_examples=25, deadline=None)
    def test_broadcast_gradient_shapes(self, rows, cols):
        """Test that broadcast operands receive gradients in their own shape"""
        a = Tensor(np.ones((rows, cols)), requires_grad=True)
        b = Tensor(np.ones((cols,)), requires_grad=True)
        c = Tensor(np.ones((rows, 1)), requires_grad=True)
        da, db, dc = grad((a * b + c).sum(), [a, b, c])

        assert da.shape == (rows, cols)
        np.testing.assert_allclose(db, np.full(cols, rows))
        np.testing.assert_allclose(dc, np.full((rows, 1), cols))


class TestGradientCheck:
    """Test cases for central-difference gradient checks"""

    def test_sum_of_squares(self):
        """Test a quadratic in 64-bit mode"""
        rng = np.random.default_rng(4)
        with precision("float64"):
            x = Tensor(rng.uniform(-1, 1, size=8))
            error = gradient_check(lambda t: (t * t).sum(), x, step=1e-4)

        assert error < 1e-6

    def test_linear_function(self):
        """Test that a linear function has no curvature error"""
        with precision("float64"):
            c = Tensor(np.arange(1.0, 9.0))
            x = Tensor(np.linspace(-1, 1, 8))
            error = gradient_check(lambda t: (t * c).sum(), x)

        assert error < 1e-10

    def test_leaky_relu_away_from_kink(self):
        """Test leaky relu where no coordinate is within a step of zero"""
        with precision("float64"):
            x = Tensor([-0.9, -0.5, -0.1, 0.2, 0.6, 1.0])
            error = gradient_check(lambda t: t.leaky_relu(0.2).sum(), x)

        assert error < 1e-6

    def test_step_must_be_positive(self):
        """Test that a non-positive step is rejected"""
        with pytest.raises(ValueError):
            gradient_check(lambda t: t.sum(), Tensor([1.0]), step=0.0)

    def test_relative_error(self):
        """Test the stabilized relative error"""
        np.testing.assert_allclose(relative_error(np.array([1.0]), np.array([1.0])), [0.0])
        np.testing.assert_allclose(relative_error(np.array([1.0]), np.array([3.0])), [0.5], rtol=1e-6)

    @pytest.mark.parametrize("name", ["tanh", "sigmoid", "softplus", "sin", "div", "pow", "max", "mean_axis"])
    def test_elementwise_and_reductions(self, name):
        """Test gradients of smooth ops against central differences"""
        rng = np.random.default_rng(5)
        with precision("float64"):
            x = Tensor(rng.uniform(0.5, 1.5, size=(3, 4)))
            weights = Tensor(rng.uniform(0.5, 1.5, size=(3, 4)))
            functions = {
                "tanh": lambda t: (t.tanh() * weights).sum(),
                "sigmoid": lambda t: (t.sigmoid() * weights).sum(),
                "softplus": lambda t: (t.softplus() * weights).sum(),
                "sin": lambda t: (t.sin() * weights).sum(),
                "div": lambda t: (weights / t).sum(),
                "pow": lambda t: (t ** 3.0 * weights).sum(),
                "max": lambda t: (t * weights).max(axis=1).sum(),
                "mean_axis": lambda t: ((t * t).mean(axis=0) * weights[0]).sum(),
            }
            error = gradient_check(functions[name], x)

        assert error < 1e-6

    def test_conv2d_gradients(self):
        """Test input and weight gradients of conv2d"""
        rng = np.random.default_rng(6)
        with precision("float64"):
            x = Tensor(rng.standard_normal((2, 2, 5, 5)))
            w = Tensor(rng.standard_normal((3, 2, 4, 4)))
            c = Tensor(rng.standard_normal((2, 3, 2, 2)))
            input_error = gradient_check(lambda t: (conv2d(t, w, stride=2, padding=1) * c).sum(), x)
            weight_error = gradient_check(lambda t: (conv2d(x, t, stride=2, padding=1) * c).sum(), w)

        assert input_error < 1e-6
        assert weight_error < 1e-6

    def test_conv2d_transpose_gradients(self):
        """Test input and weight gradients of conv2d_transpose"""
        rng = np.random.default_rng(7)
        with precision("float64"):
            x = Tensor(rng.standard_normal((2, 3, 2, 2)))
            w = Tensor(rng.standard_normal((3, 2, 4, 4)))
            c = Tensor(rng.standard_normal((2, 2, 4, 4)))
            input_error = gradient_check(lambda t: (conv2d_transpose(t, w, stride=2, padding=1) * c).sum(), x)
            weight_error = gradient_check(lambda t: (conv2d_transpose(x, t, stride=2, padding=1) * c).sum(), w)

        assert input_error < 1e-6
        assert weight_error < 1e-6

    def test_batchnorm_gradients(self):
        """Test gradients through batch statistics"""
        rng = np.random.default_rng(8)
        with precision("float64"):
            x = Tensor(rng.standard_normal((6, 3)))
            gamma = Tensor(rng.uniform(0.5, 1.5, size=3))
            beta = Tensor(rng.standard_normal(3))
            c = Tensor(rng.standard_normal((6, 3)))
            error = gradient_check(lambda t: (batchnorm(t, gamma, beta)[0] * c).sum(), x)

        assert error < 1e-5

    def test_cross_entropy_gradients(self):
        """Test the fused softmax cross-entropy gradient"""
        rng = np.random.default_rng(9)
        labels = np.array([0, 2, 1, 2])
        with precision("float64"):
            logits = Tensor(rng.standard_normal((4, 3)))
            error = gradient_check(lambda t: cross_entropy(t, labels), logits)

        assert error < 1e-6

    def test_parameter_gradient_check(self):
        """Test the in-place parameter variant on a linear layer"""
        rng = np.random.default_rng(10)
        with precision("float64"):
            layer = Linear(3, 2, rng, init_std=0.5)
            x = Tensor(rng.standard_normal((4, 3)))
            original = layer.weight.data.copy()
            error = parameter_gradient_check(lambda: layer(x).tanh().sum(), layer.weight)

        assert error < 1e-6
        np.testing.assert_array_equal(layer.weight.data, original)
        assert layer.weight.grad is None
