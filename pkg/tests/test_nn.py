"""
Unit tests for nn and optim modules
"""
import numpy as np
import pytest

from src.nn import BatchNorm, Conv2d, ConvTranspose2d, Linear, Module, Parameter, evaluating, frozen, frozen_statistics, parameter_count
from src.optim import Adam
from src.tensor import Tensor, grad, precision


class TwoLayer(Module):
    def __init__(self, rng):
        super().__init__()
        self.first = Linear(3, 4, rng)
        self.norm = BatchNorm(4)
        self.blocks = [Linear(4, 4, rng), Linear(4, 2, rng)]

    def forward(self, x):
        h, _ = self.norm(self.first(x))
        for block in self.blocks:
            h = block(h.leaky_relu(0.2))
        return h


class TestModule:
    """Test cases for parameter discovery and state handling"""

    def test_named_parameters_order(self):
        """Test dotted names in attribute definition order"""
        names = [name for name, _ in TwoLayer(np.random.default_rng(0)).named_parameters()]

        assert names == [
            "first.weight", "first.bias",
            "norm.gamma", "norm.beta",
            "blocks.0.weight", "blocks.0.bias",
            "blocks.1.weight", "blocks.1.bias",
        ]

    def test_buffers_in_state_dict(self):
        """Test that running statistics are part of the state"""
        state = TwoLayer(np.random.default_rng(0)).state_dict()

        assert "norm.running_mean" in state
        assert "norm.running_var" in state

    def test_load_state_dict_round_trip(self):
        """Test that loading a state reproduces outputs exactly"""
        source = TwoLayer(np.random.default_rng(0)).eval()
        target = TwoLayer(np.random.default_rng(1)).eval()
        x = Tensor(np.random.default_rng(2).standard_normal((5, 3)))

        target.load_state_dict(source.state_dict())

        np.testing.assert_array_equal(target(x).data, source(x).data)

    def test_train_eval_propagates(self):
        """Test that mode switches reach nested modules"""
        model = TwoLayer(np.random.default_rng(0))
        model.eval()

        assert not model.norm.training
        assert not model.blocks[1].training
        model.train()
        assert model.norm.training

    def test_parameter_count(self):
        """Test the parameter count of a linear layer"""
        assert parameter_count(Linear(3, 4, np.random.default_rng(0))) == 16

    def test_frozen_blocks_gradients(self):
        """Test that frozen parameters receive no gradient and flags are restored"""
        layer = Linear(2, 2, np.random.default_rng(0))
        x = Tensor([[1.0, 2.0]], requires_grad=True)
        with frozen(layer):
            out = layer(x).sum()
            (dx,) = grad(out, [x])
            assert not layer.weight.requires_grad
        assert layer.weight.grad is None
        assert layer.weight.requires_grad
        np.testing.assert_allclose(dx, layer.weight.data.sum(axis=0, keepdims=True), rtol=1e-6)

    def test_evaluating_restores_mode(self):
        """Test that evaluating() puts the previous mode back"""
        model = TwoLayer(np.random.default_rng(0))
        with evaluating(model):
            assert not model.norm.training
        assert model.norm.training

    def test_conv_layers_shapes(self):
        """Test the shapes produced by the conv layers"""
        rng = np.random.default_rng(0)
        x = Tensor(rng.standard_normal((2, 3, 8, 8)))

        assert Conv2d(3, 5, 4, 2, 1, rng)(x).shape == (2, 5, 4, 4)
        assert ConvTranspose2d(3, 5, 4, 2, 1, rng)(x).shape == (2, 5, 16, 16)


class TestBatchNorm:
    """Test cases for BatchNorm running statistics"""

    def test_running_update(self):
        """Test the momentum update with unbiased variance"""
        norm = BatchNorm(1, momentum=0.9)
        with precision("float64"):
            x = Tensor([[1.0], [3.0]])
        norm(x)

        np.testing.assert_allclose(norm._buffers["running_mean"], [0.2], rtol=1e-6)
        # batch variance 1, unbiased 2
        np.testing.assert_allclose(norm._buffers["running_var"], [0.9 + 0.1 * 2.0], rtol=1e-6)

    def test_eval_uses_running_stats(self):
        """Test that identical rows give identical outputs in evaluation mode"""
        norm = BatchNorm(2).eval()
        x = Tensor([[0.5, -1.0], [0.5, -1.0]])
        y, _ = norm(x)

        np.testing.assert_array_equal(y.data[0], y.data[1])
        np.testing.assert_allclose(y.data[0], [0.5, -1.0], rtol=1e-4)

    def test_frozen_statistics_leave_buffers(self):
        """Test batch normalization without touching the running estimates inside the block"""
        norm = BatchNorm(1)
        x = Tensor([[1.0], [3.0]])
        with frozen_statistics():
            y, stats = norm(x)

        np.testing.assert_array_equal(norm._buffers["running_mean"], [0.0])
        np.testing.assert_array_equal(norm._buffers["running_var"], [1.0])
        np.testing.assert_allclose(y.data, [[-1.0], [1.0]], atol=1e-3)

        norm(x)
        np.testing.assert_allclose(norm._buffers["running_mean"], [0.2], rtol=1e-6)

    def test_shared_stats_skip_running_update(self):
        """Test that reusing statistics leaves the running estimates alone"""
        norm = BatchNorm(1)
        _, stats = norm(Tensor([[1.0], [3.0]]))
        before = norm._buffers["running_mean"].copy()
        y, _ = norm(Tensor([[2.0], [2.0]]), stats=stats)

        np.testing.assert_array_equal(norm._buffers["running_mean"], before)
        np.testing.assert_allclose(y.data, [[0.0], [0.0]], atol=1e-6)


class TestAdam:
    """Test cases for the Adam optimizer"""

    def test_first_step_moves_by_lr(self):
        """Test that the bias-corrected first step has magnitude lr"""
        param = Parameter(np.array([1.0, -1.0]))
        optimizer = Adam([("p", param)], lr=0.1, betas=(0.9, 0.999))
        param.grad = np.array([0.5, -2.0], dtype=np.float32)
        optimizer.step()

        np.testing.assert_allclose(param.data, [0.9, -0.9], rtol=1e-5)
        assert optimizer.last_grad_norm == pytest.approx(np.sqrt(0.25 + 4.0))

    def test_minimizes_quadratic(self):
        """Test convergence on a simple bowl"""
        param = Parameter(np.array([3.0, -2.0]))
        optimizer = Adam([("p", param)], lr=0.05, betas=(0.9, 0.999))
        for _ in range(500):
            optimizer.zero_grad()
            (param * param).sum().backward()
            optimizer.step()

        np.testing.assert_allclose(param.data, [0.0, 0.0], atol=0.1)

    def test_state_round_trip(self):
        """Test that restored state continues identically"""
        def run(optimizer, param, steps):
            for _ in range(steps):
                optimizer.zero_grad()
                (param * param * param).sum().backward()
                optimizer.step()

        a = Parameter(np.array([1.0, 2.0]))
        opt_a = Adam([("p", a)])
        run(opt_a, a, 3)

        b = Parameter(a.data)
        opt_b = Adam([("p", b)])
        opt_b.load_state_dict(opt_a.state_dict())
        run(opt_a, a, 2)
        run(opt_b, b, 2)

        assert opt_b.t == 5
        np.testing.assert_array_equal(a.data, b.data)

    def test_skips_parameters_without_grad(self):
        """Test that parameters with no gradient are left alone"""
        param = Parameter(np.array([1.0]))
        optimizer = Adam([("p", param)])
        optimizer.step()

        np.testing.assert_array_equal(param.data, [1.0])
