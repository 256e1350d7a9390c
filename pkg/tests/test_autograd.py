import numpy as np
import pytest

from ttsr import ops
from ttsr.autograd import Parameter, TapeError, Tensor, grad, no_grad, set_debug
from ttsr.gradcheck import grad_check, input_grad_error


def test_sum_gradient_is_ones(rng):
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    ops.sum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_sum_of_squares_gradient(rng):
    a = rng.standard_normal((2, 5))
    x = Tensor(a, requires_grad=True)
    ops.sum(x * x).backward()
    np.testing.assert_allclose(x.grad, 2 * a, rtol=1e-6)


def test_non_scalar_backward_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(TapeError):
        (x * 2).backward()


def test_tape_consumed_twice():
    x = Tensor(np.ones(3), requires_grad=True)
    y = ops.sum(x * 3)
    y.backward()
    with pytest.raises(TapeError):
        y.backward()


def test_shared_subgraph_visited_once(rng):
    x = Tensor(rng.standard_normal(4), requires_grad=True)
    h = x * 2
    y = ops.sum(h * h + h)
    y.backward()
    np.testing.assert_allclose(x.grad, 2 * (2 * 2 * x.data) + 2, rtol=1e-6)


def test_unreachable_parameter_gets_zero():
    p = Parameter(np.ones(3))
    q = Parameter(np.ones(2))
    ops.sum(p * 2).backward()
    np.testing.assert_array_equal(q.grad, np.zeros(2))
    np.testing.assert_array_equal(p.grad, 2 * np.ones(3))


def test_zero_grad_is_idempotent():
    p = Parameter(np.ones((2, 2)))
    ops.sum(p).backward()
    p.zero_grad()
    p.zero_grad()
    assert p.grad.shape == p.shape
    assert not p.grad.any()


def test_grad_function_leaves_fields_alone(rng):
    x = Tensor(rng.standard_normal(3), requires_grad=True)
    (g,) = grad(ops.sum(x * x), [x])
    np.testing.assert_allclose(g, 2 * x.data)
    assert x.grad is None


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = x * 2
    assert not y.requires_grad


def test_debug_mode_flags_nan():
    set_debug(True)
    try:
        with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
            ops.sqrt(Tensor(np.array([-1.0])))
    finally:
        set_debug(False)


def test_unsupported_dtype():
    with pytest.raises(TypeError):
        Tensor(np.zeros(2, dtype=np.float16))


def test_grad_check_sum_is_exact(rng):
    # dyadic inputs and step: every probe is computed without rounding
    x = Tensor(rng.integers(-512, 512, (2, 3)) / 1024.0)
    assert grad_check(lambda t: ops.sum(t), x, eps=2.0 ** -10) == 0.0
    assert grad_check(lambda t: ops.sum(t), Tensor(rng.standard_normal((2, 3)))) < 1e-10


def test_grad_check_l1_away_from_kinks(rng):
    a = rng.standard_normal((3, 4))
    b = a + np.where(rng.random((3, 4)) < 0.5, -1.0, 1.0) * (0.5 + rng.random((3, 4)))
    f = lambda t: ops.sum(ops.abs(t - Tensor(b)))  # noqa: E731
    assert grad_check(f, Tensor(a)) < 1e-6


def test_grad_check_rejects_non_finite():
    with pytest.raises(FloatingPointError), np.errstate(divide="ignore"):
        grad_check(lambda t: ops.sum(t) / 0.0, Tensor(np.ones(2)))


def test_composite_conv_relu_sum(rng):
    w = Tensor(rng.standard_normal((3, 2, 3, 3)))
    b = Tensor(rng.standard_normal(3))
    f = lambda t: ops.sum(ops.relu(ops.conv2d(t, w, b, 1, 1)))  # noqa: E731
    assert input_grad_error(f, Tensor(rng.standard_normal((1, 2, 5, 5)))) < 1e-5


def test_l1_subgradient_zero_at_equality():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    ops.sum(ops.abs(x - Tensor(np.array([1.0, 0.0])))).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])
