"""Adam updates: bias correction, fixed points, determinism."""

import numpy as np
import pytest

import cytonet.nn as nn
import cytonet.nn.functional as F
from cytonet.errors import ValidationError
from cytonet.nn.optim import adam_step, init_adam

# hand-computed first update for theta=0, g=1 at the default hyperparameters:
# m_hat = 1, v_hat = 1, step = -lr / (1 + eps)
FIRST_STEP = -0.001 / (1.0 + 1e-8)


class TestAdamStep:
    def test_zero_gradient_is_fixed_point(self):
        """Zero gradients leave parameters bitwise unchanged."""
        params = [nn.Tensor(np.arange(4.0, dtype=np.float64))]
        before = params[0].data.copy()
        state = init_adam(params)
        for _ in range(3):
            adam_step(params, [np.zeros(4)], state)
        np.testing.assert_array_equal(params[0].data, before)

    def test_first_step_value(self):
        """Scalar theta=0, g=1 moves by -lr/(1+eps)."""
        params = [nn.Tensor(np.array([0.0]), dtype=np.float64)]
        state = init_adam(params)
        adam_step(params, [np.array([1.0])], state)
        assert params[0].data[0] == pytest.approx(FIRST_STEP, abs=1e-12)
        assert params[0].data[0] == pytest.approx(-0.0009999999900000003, abs=1e-18)

    def test_t_increments_per_step(self):
        params = [nn.Tensor(np.zeros(2))]
        state = init_adam(params)
        assert state.t == 0
        adam_step(params, [np.ones(2)], state)
        adam_step(params, [np.ones(2)], state)
        assert state.t == 2

    def test_defaults_match_table(self):
        state = init_adam([nn.Tensor(np.zeros(1))])
        assert state.lr == 0.001
        assert state.beta1 == 0.9
        assert state.beta2 == 0.999
        assert state.eps == 1e-8

    def test_constant_gradient_direction(self):
        """Sustained positive gradients keep pushing the parameter down."""
        params = [nn.Tensor(np.array([1.0]), dtype=np.float64)]
        state = init_adam(params)
        values = [params[0].data[0]]
        for _ in range(10):
            adam_step(params, [np.array([2.0])], state)
            values.append(params[0].data[0])
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_bad_hyperparameters_rejected(self):
        params = [nn.Tensor(np.zeros(1))]
        with pytest.raises(ValidationError):
            init_adam(params, lr=0.0)
        with pytest.raises(ValidationError):
            init_adam(params, beta1=1.0)
        with pytest.raises(ValidationError):
            init_adam(params, beta2=-0.1)

    def test_bitwise_identical_trajectories(self):
        """Two identically seeded training runs agree to the last bit."""

        def run():
            rng = np.random.default_rng(42)
            w = nn.Tensor(rng.normal(size=(3, 4)).astype(np.float32), requires_grad=True)
            x = nn.Tensor(rng.normal(size=(8, 4)).astype(np.float32))
            labels = rng.integers(0, 3, size=8)
            opt = nn.Adam([w], lr=0.01)
            trace = []
            for _ in range(5):
                with nn.GradGraph() as g:
                    loss = nn.cross_entropy(F.softmax(F.linear(x, w)), labels)
                    g.backward(loss)
                opt.step()
                opt.zero_grad()
                trace.append(w.data.copy())
            return trace

        for a, b in zip(run(), run()):
            np.testing.assert_array_equal(a, b)


class TestAdamWrapper:
    def test_step_uses_tensor_grads(self):
        w = nn.Tensor(np.zeros(3), dtype=np.float64, requires_grad=True)
        w.grad = np.ones(3)
        opt = nn.Adam([w])
        opt.step()
        np.testing.assert_allclose(w.data, FIRST_STEP, atol=1e-12)

    def test_zero_grad_clears(self):
        w = nn.Tensor(np.zeros(2), requires_grad=True)
        w.grad = np.ones(2, dtype=np.float32)
        opt = nn.Adam([w])
        opt.zero_grad()
        assert w.grad is None

    def test_missing_grad_rejected(self):
        """Stepping before any backward is a usage bug, not a silent no-op."""
        w = nn.Tensor(np.array([1.5, -2.0]), requires_grad=True)
        with pytest.raises(ValidationError):
            nn.Adam([w]).step()
