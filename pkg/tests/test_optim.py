"""Adam optimizer: closed-form first step, convergence, gradient guards."""

import numpy as np
import pytest

from wiskel.errors import MissingGradientError
from wiskel.nn.optim import Adam
from wiskel.nn.store import ParamStore
from wiskel.nn.tensor import Tensor


def adam_first_step_expected(p0, g, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Closed-form single Adam update written independently of the optimizer."""
    m = (1.0 - beta1) * g
    v = (1.0 - beta2) * (g * g)
    m_hat = m / (1.0 - beta1)
    v_hat = v / (1.0 - beta2)
    return p0 - lr * m_hat / (np.sqrt(v_hat) + eps)


class TestAdamStep:
    def test_first_step_matches_closed_form(self):
        store = ParamStore(0)
        values = np.array([1.0, -2.0, 0.5])
        grads = np.array([0.3, -0.7, 2.0])
        p = store.param_array("p", values.copy())
        p.grad = grads.copy()
        Adam(store, lr=0.01).step()
        expected = adam_first_step_expected(values, grads, 0.01)
        assert np.abs(p.data - expected).max() < 1e-15

    def test_first_step_is_roughly_signed_lr(self):
        store = ParamStore(0)
        p = store.param_array("p", np.array([0.0, 0.0]))
        p.grad = np.array([5.0, -0.01])
        Adam(store, lr=0.05).step()
        assert np.abs(p.data - np.array([-0.05, 0.05])).max() < 1e-6

    def test_zero_gradients_leave_params_unchanged(self):
        store = ParamStore(0)
        p = store.param_array("p", np.array([1.0, 2.0, 3.0]))
        opt = Adam(store, lr=0.1)
        for _ in range(5):
            p.grad = np.zeros(3)
            opt.step()
        assert np.array_equal(p.data, [1.0, 2.0, 3.0])

    def test_missing_gradient_raises_with_name(self):
        store = ParamStore(0)
        store.param_array("layer.weight", np.ones(2))
        used = store.param_array("layer.bias", np.ones(2))
        used.grad = np.ones(2)
        with pytest.raises(MissingGradientError, match="layer.weight"):
            Adam(store).step()


class TestAdamConvergence:
    def test_quadratic_bowl_200_steps(self):
        store = ParamStore(0)
        target = np.array([0.7, -0.3, 1.2])
        p = store.param_array("p", np.zeros(3))
        opt = Adam(store, lr=0.05)
        for _ in range(200):
            store.zero_grads()
            loss = ((p - Tensor(target)) ** 2).sum()
            loss.backward()
            opt.step()
        assert np.abs(p.data - target).max() < 1e-3

    def test_moment_state_keyed_per_parameter(self):
        store = ParamStore(0)
        a = store.param_array("a", np.array([1.0]))
        b = store.param_array("b", np.array([1.0]))
        opt = Adam(store, lr=0.1)
        a.grad = np.array([1.0])
        b.grad = np.array([-1.0])
        opt.step()
        assert a.data[0] < 1.0 < b.data[0]
