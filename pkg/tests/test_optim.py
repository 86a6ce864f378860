import numpy as np
import pytest

from denobench.optim import AdamState, adam_step, init_adam
from denobench.tensor import Tensor


def make_param(values, grad=None):
    # np.array copies: Tensor shares float32 buffers, and adam_step updates
    # in place, so callers' arrays must stay pristine.
    t = Tensor(np.array(values, np.float32), requires_grad=True)
    if grad is not None:
        t.grad = np.array(grad, np.float32)
    return t


def adam_reference(p0, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Textbook Adam in float64, one parameter, list of per-step gradients."""
    p = np.asarray(p0, np.float64).copy()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        g = np.asarray(g, np.float64)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        p = p - lr * mhat / (np.sqrt(vhat) + eps)
    return p


class TestInit:
    def test_buffers_match_params(self, rng):
        params = {"a.weight": make_param(rng.standard_normal((2, 3))),
                  "b.bias": make_param(rng.standard_normal(4))}
        state = init_adam(params)
        assert state.t == 0
        assert set(state.m) == set(state.v) == {"a.weight", "b.bias"}
        for name, p in params.items():
            assert state.m[name].shape == p.data.shape
            assert state.m[name].dtype == np.float32
            assert not state.m[name].any()
            assert not state.v[name].any()


class TestStep:
    def test_first_step_is_signed_lr(self):
        p = make_param([1.0, -2.0, 0.5], grad=[0.3, -4.0, 1e-3])
        params = {"p": p}
        state = init_adam(params)
        adam_step(params, state, lr=0.01)
        # Bias correction makes step one t=1 equal lr * g / (|g| + eps').
        np.testing.assert_allclose(
            p.data, [1.0 - 0.01, -2.0 + 0.01, 0.5 - 0.01], rtol=1e-4)
        assert state.t == 1

    def test_zero_gradient_leaves_param_untouched(self):
        p = make_param([0.25, -1.5], grad=[0.0, 0.0])
        before = p.data.copy()
        params = {"p": p}
        state = init_adam(params)
        adam_step(params, state, lr=0.1)
        np.testing.assert_array_equal(p.data, before)

    def test_matches_float64_reference_over_steps(self, rng):
        p0 = rng.standard_normal(6).astype(np.float32)
        grads = [rng.standard_normal(6).astype(np.float32) for _ in range(5)]
        p = make_param(p0)
        params = {"p": p}
        state = init_adam(params)
        for g in grads:
            p.grad = g.copy()
            adam_step(params, state, lr=0.002)
        want = adam_reference(p0, grads, lr=0.002)
        np.testing.assert_allclose(p.data, want, rtol=1e-4, atol=1e-6)
        assert state.t == 5

    def test_missing_gradient_raises(self):
        p = make_param([1.0])
        params = {"p": p}
        state = init_adam(params)
        with pytest.raises(ValueError, match="gradient"):
            adam_step(params, state, lr=0.01)

    def test_dtype_preserved(self):
        p = make_param(np.ones((2, 2), np.float32), grad=np.ones((2, 2), np.float32))
        params = {"p": p}
        state = init_adam(params)
        adam_step(params, state, lr=0.01)
        assert p.data.dtype == np.float32
        assert state.m["p"].dtype == np.float32

    def test_per_parameter_independence(self, rng):
        # Two params stepped together must match each stepped alone.
        a0 = rng.standard_normal(3).astype(np.float32)
        b0 = rng.standard_normal(3).astype(np.float32)
        ga = rng.standard_normal(3).astype(np.float32)
        gb = rng.standard_normal(3).astype(np.float32)

        both = {"a": make_param(a0, ga), "b": make_param(b0, gb)}
        adam_step(both, init_adam(both), lr=0.05)

        alone = {"a": make_param(a0, ga)}
        adam_step(alone, init_adam(alone), lr=0.05)
        np.testing.assert_array_equal(both["a"].data, alone["a"].data)


class TestStateDefaults:
    def test_hyperparameters(self):
        state = AdamState(m={}, v={})
        assert state.beta1 == 0.9
        assert state.beta2 == 0.999
        assert state.eps == 1e-8
