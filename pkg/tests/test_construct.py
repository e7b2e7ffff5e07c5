import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wpinn.autodiff import ConfigurationError
from wpinn.construct import (
    SPLINE_FUNCS,
    build_mult2,
    build_multk,
    build_sq,
    f_by_teeth,
    f_interp,
    hat_functions,
    modulus_of_continuity,
    partition_rho,
    realize_sq,
    spline_interp,
    teeth_parameter,
    tooth_chain,
    verify_all,
)

X = np.linspace(0, 1, 100_001)


@pytest.mark.parametrize("G", range(1, 200))
def test_teeth_parameter_bracket(G):
    s = teeth_parameter(G)
    assert (s - 1) * 2 ** (s - 1) + 1 <= G <= s * 2 ** s


def test_teeth_parameter_rejects_zero():
    with pytest.raises(ConfigurationError):
        teeth_parameter(0)


def test_sq_nodes_and_knot():
    sq = build_sq(3, 4)
    assert sq(0.0) == 0.0 and sq(1.0) == 1.0
    assert sq(0.5) == 0.25
    assert np.max(np.abs(sq(X) - X ** 2)) <= 4.0 ** -3
    assert np.all((sq(X) >= 0) & (sq(X) <= 1))


@pytest.mark.parametrize("level", range(1, 9))
def test_tooth_composition_equals_interpolant(level):
    np.testing.assert_allclose(f_by_teeth(X, level), f_interp(X, level), atol=1e-14)


def test_tooth_difference_identity():
    # f^{s-1} - f^s = R^{1,s}
    for s in range(1, 7):
        np.testing.assert_allclose(f_interp(X, s - 1) - f_interp(X, s), tooth_chain(X, 1, s), atol=1e-14)


def test_interpolant_error_is_quarter_spacing_squared():
    for level in range(1, 8):
        h = 2.0 ** -level
        assert np.max(f_interp(X, level) - X ** 2) == pytest.approx(h * h / 4, rel=1e-3)


@pytest.mark.parametrize("Q,G", [(2, 2), (3, 4), (6, 4), (4, 2)])
def test_relu_realisation(Q, G):
    sq = build_sq(Q, G)
    np.testing.assert_allclose(sq.net(X), sq(X), atol=1e-12)
    assert sq.net.depth <= Q + 2
    assert sq.net.width <= 3 * G
    assert sq.net.nonzeros() <= sq.size_bound
    assert sq.net.max_abs_param() <= 1.0


def test_realisation_without_clamp_extends_interpolant():
    net = realize_sq(2, 2, clamp=False)
    np.testing.assert_allclose(net(X), f_interp(X, 4), atol=1e-12)


def test_sq_slope_away_from_knots():
    sq = build_sq(4, 2)
    h = 2.0 ** -sq.level
    mids = (np.arange(2 ** sq.level) + 0.5) * h
    assert np.max(np.abs(sq.derivative(mids) - 2 * mids)) <= 2.0 ** -2


def test_mult2_examples():
    m = build_mult2(4, 2)
    g = np.linspace(0, 1, 201)
    xx, yy = np.meshgrid(g, g)
    assert np.max(np.abs(m(xx, yy) - xx * yy)) <= 6 * 2.0 ** -4
    assert np.all(m(g, 0 * g) == 0) and np.all(m(0 * g, g) == 0)
    assert abs(m(1.0, 1.0) - 1.0) <= 6 * 2.0 ** -4


def test_multk_examples():
    rng = np.random.default_rng(0)
    pts = rng.random((10_000, 3))
    # (6, 2) lies outside the hypothesis G^Q >= 4 k^4 and needs strict=False
    with pytest.raises(ConfigurationError):
        build_multk(3, 6, 2)
    m3 = build_multk(3, 6, 2, strict=False)
    assert np.max(np.abs(m3(pts) - pts.prod(axis=1))) <= 3 * 2.0 ** -6
    ok = build_multk(3, 6, 4)
    for i in range(3):
        z = pts.copy()
        z[:, i] = 0.0
        assert np.all(ok(z) == 0.0)
    m2 = build_multk(2, 6, 4)
    np.testing.assert_array_equal(m2(pts[:, :2]), build_mult2(6, 4)(pts[:, 0], pts[:, 1]))
    with pytest.raises(ConfigurationError):
        build_multk(1, 6, 4)
    with pytest.raises(ConfigurationError):
        ok(pts[:, :2])


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_multk_nearly_symmetric(a, b, c):
    m = build_multk(3, 6, 4)
    assert abs(m([a, b, c])[0] - m([c, b, a])[0]) <= 2 * 3 * 4.0 ** -6


def test_partition_examples():
    p = partition_rho(2, 1)
    vals = p(np.array([[0.25]]))[0]
    np.testing.assert_allclose(vals, [0.5, 0.5, 0.0])
    p3 = partition_rho(4, 3)
    x = np.random.default_rng(1).random((500, 3))
    v = p3(x)
    assert v.shape == (500, 125)
    np.testing.assert_allclose(v.sum(axis=1), 1.0, atol=1e-12)
    far = np.max(np.abs(x[:, None, :] - p3.centers[None]), axis=2) > 1 / 4
    assert np.all(v[far] == 0)
    with pytest.raises(ConfigurationError):
        partition_rho(0, 2)


def test_hat_functions_are_cardinal():
    knots = np.array([-1.0, -0.6, -0.1, 0.3, 0.55, 1.0])
    hats = hat_functions(knots)
    inner = knots[1:-1]
    table = np.array([h(inner) for h in hats])
    np.testing.assert_allclose(table, np.eye(len(inner)), atol=1e-14)


def test_spline_examples():
    knots = np.linspace(-1, 1, 9)
    lin = spline_interp(lambda t: 3 * t - 0.5, knots)
    lo, hi = lin.interval
    u = np.linspace(lo, hi, 1001)
    np.testing.assert_allclose(lin(u), 3 * u - 0.5, atol=1e-13)
    sp = spline_interp(np.abs, knots)
    np.testing.assert_allclose(sp(knots[1:-1]), np.abs(knots[1:-1]), atol=1e-15)
    assert np.max(np.abs(sp(u) - np.abs(u))) <= 2 * sp.spacing
    with pytest.raises(ConfigurationError):
        spline_interp(np.abs, [0, 1, 2])
    with pytest.raises(ConfigurationError):
        spline_interp(np.abs, [0, 1, 1, 2])


def test_modulus_of_continuity():
    assert modulus_of_continuity(np.abs, -1, 1, 0.25) == pytest.approx(0.25, abs=1e-4)
    assert modulus_of_continuity(np.square, -1, 1, 0.1) == pytest.approx(1 - 0.9 ** 2, abs=1e-4)
    assert modulus_of_continuity(lambda t: np.sin(3 * t), -1, 1, 5.0) == pytest.approx(2.0, abs=1e-6)
    assert set(SPLINE_FUNCS) == {"abs", "square", "sin3"}


def test_full_sweep_passes():
    rows = verify_all()
    bad = [r for r in rows if not r.ok]
    assert not bad, bad
    names = {r.construction for r in rows}
    assert {"SQ", "Mult2", "Mult2 zero", "partition", "spline abs", "spline sin3"} <= names
