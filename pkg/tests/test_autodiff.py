import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wpinn.autodiff import ConfigurationError, ContractError, InputError, Tape, forward, grad, input_grad_node


def central(f, x, h=1e-5):
    return (f(x + h) - f(x - h)) / (2 * h)


def test_square_value_and_derivative():
    t = Tape()
    x = t.input(3.0)
    y = t.square(x)
    assert float(t.value(y)) == 9.0
    assert float(t.grad(y, [x])[0]) == 6.0


def test_relu_value_and_subgradient():
    t = Tape()
    x = t.input(-2.0)
    y = t.relu(x)
    assert float(t.value(y)) == 0.0
    assert float(forward(t, [-1.0], [])) == 0.0
    assert float(grad(t, y, [x])[0]) == 0.0
    t.forward([2.0], [])
    assert float(t.grad(y, [x])[0]) == 1.0


def test_two_path_relu_net():
    t = Tape()
    x = t.input(np.array([[0.5]]))
    w0 = t.parameter(np.array([[1.0], [-1.0]]))
    w1 = t.parameter(np.array([[1.0, 1.0]]))
    out = t.linear(t.relu(t.linear(x, w0)), w1)
    assert t.value(out).item() == 0.5


def test_sin_derivative_matches_differences():
    t = Tape()
    x = t.input(0.25)
    y = t.sin(t.scale(x, np.pi))
    g = float(t.grad(y, [x])[0])
    fd = central(lambda v: np.sin(np.pi * v), 0.25)
    assert g == pytest.approx(np.pi * np.cos(np.pi / 4), rel=1e-12)
    assert abs(g - fd) / abs(fd) <= 1e-6


def test_non_scalar_output_needs_seed():
    t = Tape()
    x = t.input(np.ones((3, 1)))
    with pytest.raises(ContractError):
        t.grad(t.square(x), [x])
    seeded = t.grad(t.square(x), [x], seed=np.full((3, 1), 2.0))[0]
    np.testing.assert_array_equal(seeded, np.full((3, 1), 4.0))


def test_forward_arity_and_finiteness():
    t = Tape()
    x = t.input(1.0)
    t.parameter(2.0)
    t.mul(x, x)
    with pytest.raises(ConfigurationError):
        t.forward([1.0], [])
    with pytest.raises(InputError):
        t.forward([np.nan], [1.0])
    with pytest.raises(InputError):
        Tape().input(np.inf)


def test_forward_replay_is_deterministic(rng):
    t = Tape()
    x = t.input(rng.standard_normal((5, 3)))
    w = t.parameter(rng.standard_normal((4, 3)))
    out = t.sum(t.tanh(t.linear(x, w)))
    a = t.forward([t.value(x)], [t.value(w)], out).copy()
    b = t.forward([t.value(x)], [t.value(w)], out).copy()
    assert a.tobytes() == b.tobytes()


def test_parents_precede_children(rng):
    t = Tape()
    x = t.input(rng.standard_normal((2, 3)))
    w = t.parameter(rng.standard_normal((2, 3)))
    y = t.sum(t.square(t.linear(x, w)))
    input_grad_node(t, y, x)
    for node in t.nodes:
        assert all(p < node.id for p in node.parents)


def test_input_grad_of_linear_net_is_weight():
    t = Tape()
    tt = t.input(np.linspace(0, 1, 5).reshape(-1, 1))
    w = t.parameter(np.array([[1.7]]))
    xi = t.linear(tt, w)
    d = input_grad_node(t, xi, tt)
    np.testing.assert_allclose(t.value(d), 1.7)


def test_nested_derivative_of_sin_net():
    # xi(t) = sin(w t); d_t xi = w cos(w t); d/dw of that at (1, 0) is 1
    t = Tape()
    tt = t.input(np.array([[0.0]]))
    w = t.parameter(np.array([[1.0]]))
    xi = t.sin(t.linear(tt, w))
    d = input_grad_node(t, xi, tt)
    assert t.value(d).item() == pytest.approx(1.0)
    assert t.grad(t.sum(d), [w])[0].item() == pytest.approx(1.0, abs=1e-14)


def test_nested_derivative_matches_differences():
    def g_of(wv, tv=0.3):
        t = Tape()
        tt = t.input(np.array([[tv]]))
        w = t.parameter(np.array([[wv]]))
        d = input_grad_node(t, t.tanh(t.linear(t.tanh(t.linear(tt, w)), w)), tt)
        return t, t.sum(d), w

    t, d, w = g_of(0.8)
    g = t.grad(d, [w])[0].item()
    fd = central(lambda v: float(g_of(v)[0].value(g_of(v)[1])), 0.8)
    assert abs(g - fd) / abs(fd) <= 1e-5


def test_input_grad_requires_declared_input():
    t = Tape()
    c = t.constant(1.0)
    with pytest.raises(ContractError):
        input_grad_node(t, t.square(c), c)


def test_sign_and_abs_kink_have_zero_derivative():
    t = Tape()
    x = t.input(0.0)
    assert float(t.grad(t.sign(x), [x])[0]) == 0.0
    assert float(t.grad(t.abs(x), [x])[0]) == 0.0


def test_max_routes_gradient_to_first_maximiser():
    t = Tape()
    a = t.parameter(2.0)
    b = t.parameter(2.0)
    c = t.parameter(1.0)
    m = t.max([a, b, c])
    ga, gb, gc = (float(v) for v in t.grad(m, [a, b, c]))
    assert (ga, gb, gc) == (1.0, 0.0, 0.0)


def test_broadcast_gradients_sum_back(rng):
    t = Tape()
    x = t.parameter(rng.standard_normal((4, 3)))
    b = t.parameter(rng.standard_normal((3,)))
    y = t.sum(t.mul(t.add(x, b), t.add(x, b)))
    gb = t.grad(y, [b])[0]
    np.testing.assert_allclose(gb, 2 * (t.value(x) + t.value(b)).sum(axis=0), rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.2, 2))
def test_composite_gradient_matches_differences(a, b, c):
    def f(x):
        t = Tape()
        xi = t.input(x)
        y = t.div(t.add(t.mul(t.sin(xi), t.constant(a)), t.tanh(t.scale(xi, b))), t.add(t.square(xi), t.constant(c)))
        return t, xi, y

    x0 = 0.37
    t, xi, y = f(x0)
    g = float(t.grad(y, [xi])[0])
    fd = central(lambda v: float(f(v)[0].value(f(v)[2])), x0)
    assert abs(g - fd) <= 1e-6 * max(1.0, abs(fd))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_grad_nodes_agree_with_numeric_sweep(seed):
    rng = np.random.default_rng(seed)
    t = Tape()
    x = t.input(rng.standard_normal((3, 2)))
    w = t.parameter(rng.standard_normal((4, 2)))
    v = t.parameter(rng.standard_normal((1, 4)))
    y = t.sum(t.square(t.linear(t.tanh(t.linear(x, w)), v)))
    numeric = t.grad(y, [w, v])
    nodes = t.grad_nodes(y, [w, v])
    for n_id, g in zip(nodes, numeric):
        np.testing.assert_allclose(t.value(n_id), g, rtol=1e-12, atol=1e-14)
