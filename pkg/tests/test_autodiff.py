import numpy as np
import pytest

from hexreg.autodiff import Tape, backward, forward
from hexreg.errors import NonFinite

H = 1e-5


def finite_diff(tape, inputs, build_value=None):
    """Central-difference gradients for every input node by mutating its
    value and re-running forward."""
    grads = []
    for node in inputs:
        base = node.value.copy()
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            node.value = base.copy()
            node.value[idx] = base[idx] + H
            up = forward(tape)
            node.value = base.copy()
            node.value[idx] = base[idx] - H
            down = forward(tape)
            g[idx] = (up - down) / (2.0 * H)
        node.value = base
        grads.append(g)
    forward(tape)
    return grads


def max_rel_err(analytic, numeric):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / denom.max(initial=1e-8)) \
        if analytic.size == 0 else float((np.abs(analytic - numeric) / denom).max())


class TestForward:
    def test_log_exp_roundtrip(self):
        t = Tape()
        x = t.input([[2.5]])
        t.log(t.exp(x))
        assert forward(t) == pytest.approx(2.5, abs=1e-12)

    def test_sum_of_normalized_row(self):
        t = Tape()
        x = t.input([[3.0, 4.0]])
        t.sum(t.row_l2_normalize(x))
        assert forward(t) == pytest.approx(1.4, abs=1e-12)

    def test_non_finite_identifies_node(self):
        t = Tape()
        x = t.input([[-1.0]])
        t.log(x, name="bad_log")
        with pytest.raises(NonFinite, match="bad_log"):
            forward(t)

    def test_terminal_must_be_scalar(self):
        t = Tape()
        x = t.input([[1.0, 2.0]])
        t.exp(x)
        with pytest.raises(ValueError):
            forward(t)

    def test_determinism_bitwise(self):
        rng = np.random.default_rng(0)
        vals = rng.normal(size=(4, 3))

        def run():
            t = Tape()
            x = t.input(vals)
            y = t.mean(t.exp(t.tanh(t.matmul(x, t.transpose(x)))))
            loss = forward(t)
            backward(t)
            return loss, x.grad.copy()

        l1, g1 = run()
        l2, g2 = run()
        assert l1 == l2
        assert np.array_equal(g1, g2)


class TestBackwardBasics:
    def test_exp_grad_at_zero(self):
        t = Tape()
        x = t.input([[0.0]])
        t.exp(x)
        forward(t)
        backward(t)
        assert x.grad[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_log_grad_at_two(self):
        t = Tape()
        x = t.input([[2.0]])
        t.log(x)
        forward(t)
        backward(t)
        assert x.grad[0, 0] == pytest.approx(0.5, abs=1e-12)

    def test_constants_and_masks_get_no_grad(self):
        t = Tape()
        x = t.input(np.full((2, 3), 1.5))
        c = t.constant(np.full((2, 3), 2.0))
        t.sum(t.masked_sum(t.mul_elem(x, c), np.array([[1.0, 0.0, 1.0],
                                                       [0.0, 1.0, 0.0]])))
        forward(t)
        backward(t)
        assert c.grad is None
        np.testing.assert_array_equal(x.grad, [[2.0, 0.0, 2.0], [0.0, 2.0, 0.0]])

    def test_relu_subgradient_zero_at_zero(self):
        t = Tape()
        x = t.input([[0.0, -1.0, 2.0]])
        t.sum(t.relu(x))
        forward(t)
        backward(t)
        np.testing.assert_array_equal(x.grad, [[0.0, 0.0, 1.0]])

    def test_clamp_min_gate(self):
        t = Tape()
        x = t.input([[0.5, 2.0]])
        t.sum(t.clamp_min(x, 1.0))
        forward(t)
        backward(t)
        np.testing.assert_array_equal(x.grad, [[0.0, 1.0]])

    def test_broadcast_bias_grad(self):
        rng = np.random.default_rng(7)
        t = Tape()
        x = t.constant(rng.normal(size=(5, 3)))
        bias = t.input(rng.normal(size=(1, 3)))
        t.sum(t.tanh(t.add(x, bias)))
        forward(t)
        backward(t)
        assert bias.grad.shape == (1, 3)


def _graph_for_op(op, rng):
    """One small scalar-terminal graph per differentiable op."""
    t = Tape()
    if op in ("add", "sub", "mul_elem", "div_elem"):
        a = t.input(rng.normal(size=(3, 4)))
        b = t.input(rng.normal(size=(3, 4)) + (3.0 if op == "div_elem" else 0.0))
        t.sum(getattr(t, op)(a, b))
        return t, [a, b]
    if op == "matmul":
        a = t.input(rng.normal(size=(3, 4)))
        b = t.input(rng.normal(size=(4, 2)))
        t.sum(t.matmul(a, b))
        return t, [a, b]
    if op == "scalar_mul":
        a = t.input(rng.normal(size=(3, 3)))
        t.sum(t.scalar_mul(a, -1.7))
        return t, [a]
    if op == "exp":
        a = t.input(rng.normal(size=(3, 3)))
        t.sum(t.exp(a))
        return t, [a]
    if op == "log":
        a = t.input(rng.uniform(0.5, 3.0, size=(3, 3)))
        t.sum(t.log(a))
        return t, [a]
    if op == "sum":
        a = t.input(rng.normal(size=(3, 3)))
        t.sum(a)
        return t, [a]
    if op == "mean":
        a = t.input(rng.normal(size=(3, 3)))
        t.mean(a)
        return t, [a]
    if op == "row_l2_normalize":
        a = t.input(rng.normal(size=(3, 4)) + 2.0)
        t.sum(t.mul_elem(t.row_l2_normalize(a), t.constant(rng.normal(size=(3, 4)))))
        return t, [a]
    if op == "tanh":
        a = t.input(rng.normal(size=(3, 3)))
        t.sum(t.tanh(a))
        return t, [a]
    if op == "relu":
        a = t.input(rng.normal(size=(3, 3)) + 0.3)
        t.sum(t.relu(a))
        return t, [a]
    if op == "transpose":
        a = t.input(rng.normal(size=(3, 4)))
        t.sum(t.mul_elem(t.transpose(a), t.constant(rng.normal(size=(4, 3)))))
        return t, [a]
    if op == "masked_sum":
        a = t.input(rng.normal(size=(3, 4)))
        mask = (rng.uniform(size=(3, 4)) > 0.4).astype(float)
        t.sum(t.masked_sum(a, mask))
        return t, [a]
    if op == "clamp_min":
        a = t.input(rng.normal(size=(3, 3)) * 2.0)
        t.sum(t.clamp_min(a, 0.5))
        return t, [a]
    raise AssertionError(op)


ALL_OPS = ["matmul", "add", "sub", "mul_elem", "div_elem", "scalar_mul",
           "exp", "log", "sum", "mean", "row_l2_normalize", "tanh", "relu",
           "transpose", "masked_sum", "clamp_min"]


@pytest.mark.parametrize("op", ALL_OPS)
def test_gradient_check_every_op(op):
    rng = np.random.default_rng(hash(op) % 2 ** 31)
    t, inputs = _graph_for_op(op, rng)
    # keep relu/clamp inputs away from their kinks so the FD stencil is valid
    if op in ("relu", "clamp_min"):
        for node in inputs:
            v = node.value
            bound = 0.5 if op == "clamp_min" else 0.0
            v[np.abs(v - bound) < 10 * H] += 20 * H
    forward(t)
    backward(t)
    analytic = [n.grad.copy() for n in inputs]
    numeric = finite_diff(t, inputs)
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        assert (np.abs(a - n) / denom).max() < 1e-5, op


def test_shared_parameter_accumulates():
    t = Tape()
    x = t.input([[1.0, 2.0]])
    t.sum(t.add(x, x))
    forward(t)
    backward(t)
    np.testing.assert_array_equal(x.grad, [[2.0, 2.0]])
