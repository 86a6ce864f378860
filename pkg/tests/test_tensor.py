import numpy as np
import pytest

from denobench import ops
from denobench.tensor import ShapeError, Tape, Tensor, backward


class TestTensor:
    def test_coerces_to_float32(self):
        t = Tensor([[1, 2], [3, 4]])
        assert t.data.dtype == np.float32
        assert t.shape == (2, 2)
        assert t.size == 4

    def test_rank_cap(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((1, 1, 1, 1, 1)))

    def test_grad_lifecycle(self):
        t = Tensor(np.ones((2, 3)), requires_grad=True)
        assert t.grad is None
        t.zero_grad()
        assert t.grad.shape == (2, 3)
        assert not t.grad.any()

    def test_requires_grad_defaults_off(self):
        assert Tensor(np.ones(3)).requires_grad is False


class TestTape:
    def test_records_in_order(self):
        tape = Tape()
        x = Tensor(np.ones((1, 1, 4, 4)))
        y = ops.relu(x, tape=tape)
        ops.sigmoid(y, tape=tape)
        assert len(tape) == 2
        assert [n.op for n in tape.nodes] == ["relu", "sigmoid"]

    def test_no_tape_records_nothing(self):
        x = Tensor(np.ones((1, 1, 4, 4)))
        ops.relu(x)  # eval path must not touch any global state
        assert True

    def test_needs_grad_tracks_produced_outputs(self):
        tape = Tape()
        x = Tensor(np.ones((1, 1, 4, 4)))
        y = ops.relu(x, tape=tape)
        assert not tape.needs_grad(x)
        assert tape.needs_grad(y)
        p = Tensor(np.ones(3), requires_grad=True)
        assert tape.needs_grad(p)

    def test_two_tapes_are_independent(self):
        t1, t2 = Tape(), Tape()
        x = Tensor(np.ones((1, 1, 4, 4)), requires_grad=True)
        ops.relu(x, tape=t1)
        assert len(t1) == 1 and len(t2) == 0


class TestBackward:
    def test_rejects_non_scalar_loss(self):
        tape = Tape()
        x = Tensor(np.ones((1, 1, 4, 4)), requires_grad=True)
        y = ops.relu(x, tape=tape)
        with pytest.raises(ValueError, match="scalar"):
            backward(tape, y)

    def test_seed_shape_must_match(self):
        tape = Tape()
        x = Tensor(np.ones((1, 1, 4, 4)), requires_grad=True)
        y = ops.relu(x, tape=tape)
        with pytest.raises(ShapeError):
            backward(tape, y, seed=np.ones((1, 1, 2, 2)))

    def test_simple_chain(self, rng):
        x = Tensor(rng.standard_normal((1, 1, 3, 3)).astype(np.float32), requires_grad=True)
        t = Tensor(np.zeros((1, 1, 3, 3)))
        tape = Tape()
        loss = ops.mse_loss(ops.relu(x, tape=tape), t, tape=tape)
        x.zero_grad()
        backward(tape, loss)
        expected = np.where(x.data > 0, 2.0 * x.data / x.data.size, 0.0)
        np.testing.assert_allclose(x.grad, expected, rtol=1e-6)

    def test_fanout_accumulates_both_paths(self, rng):
        # x feeds the concat twice, so its adjoint is the sum of both branch grads.
        x = Tensor(rng.random((1, 2, 3, 3), dtype=np.float32), requires_grad=True)
        target = Tensor(np.zeros((1, 4, 3, 3), dtype=np.float32))
        tape = Tape()
        both = ops.concat([x, x], tape=tape)
        loss = ops.mse_loss(both, target, tape=tape)
        x.zero_grad()
        backward(tape, loss)
        expected = 2.0 * (2.0 * x.data / both.data.size)
        np.testing.assert_allclose(x.grad, expected, rtol=1e-6)

    def test_same_tensor_twice_in_one_node(self, rng):
        x = Tensor(rng.random((1, 1, 3, 3), dtype=np.float32), requires_grad=True)
        tape = Tape()
        diff = ops.subtract(x, x, tape=tape)
        loss = ops.mse_loss(diff, Tensor(np.ones_like(x.data)), tape=tape)
        x.zero_grad()
        backward(tape, loss)
        np.testing.assert_array_equal(x.grad, np.zeros_like(x.data))

    def test_disconnected_parameter_keeps_zero_grad(self, rng):
        p = Tensor(np.ones(4, np.float32), requires_grad=True)
        p.zero_grad()
        x = Tensor(rng.random((1, 1, 3, 3), dtype=np.float32), requires_grad=True)
        tape = Tape()
        loss = ops.mse_loss(ops.relu(x, tape=tape), Tensor(np.zeros_like(x.data)), tape=tape)
        backward(tape, loss)
        np.testing.assert_array_equal(p.grad, np.zeros(4, np.float32))

    def test_gradients_accumulate_across_backward_calls(self, rng):
        x = Tensor(rng.random((1, 1, 3, 3), dtype=np.float32), requires_grad=True)
        tape = Tape()
        loss = ops.mse_loss(ops.relu(x, tape=tape), Tensor(np.zeros_like(x.data)), tape=tape)
        x.zero_grad()
        backward(tape, loss)
        once = x.grad.copy()
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, 2.0 * once, rtol=1e-6)

    def test_intermediate_requires_grad_receives_full_adjoint(self, rng):
        # A requires_grad tensor that is also consumed downstream still sees
        # its total adjoint in .grad.
        x = Tensor(rng.random((1, 1, 4, 4), dtype=np.float32), requires_grad=True)
        tape = Tape()
        mid = ops.relu(ops.sigmoid(x, tape=tape), tape=tape)
        loss = ops.mse_loss(mid, Tensor(np.zeros_like(x.data)), tape=tape)
        x.zero_grad()
        backward(tape, loss)
        s = 1.0 / (1.0 + np.exp(-x.data.astype(np.float64)))
        expected = (2.0 * s / x.size) * s * (1.0 - s)
        np.testing.assert_allclose(x.grad, expected, rtol=1e-4)
