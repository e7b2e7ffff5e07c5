import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wpinn.geometry import (
    FULL_SPHERE,
    ChartPoint,
    Domain,
    FluxSpec,
    SingularityError,
    area_weight,
    burgers_flux,
    div_g,
    embed,
    flux_components,
    frozen_state_divergence,
    grad_g,
    tangent_basis,
)
from wpinn.verify import compatible_flux, fd_divergence, sphere_area_mc, sphere_area_quadrature


def test_embed_reference_points():
    np.testing.assert_allclose(embed(0.0, 0.0), [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(embed(0.5, 0.0), [0, 1, 0], atol=1e-15)
    for lam in (-0.7, 0.0, 0.3):
        np.testing.assert_allclose(embed(lam, 1.0), [0, 0, 1], atol=1e-15)


def test_embed_unit_norm(rng):
    p = embed(rng.uniform(-1, 1, 10_000), rng.uniform(-1, 1, 10_000))
    assert np.max(np.abs(np.linalg.norm(p, axis=-1) - 1)) <= 1e-12


def test_tangent_basis_is_orthonormal_and_tangent(rng):
    lam, phi = rng.uniform(-1, 1, 500), rng.uniform(-0.99, 0.99, 500)
    e_l, e_p = tangent_basis(lam, phi)
    n = embed(lam, phi)
    for a, b, want in ((e_l, e_l, 1), (e_p, e_p, 1), (e_l, e_p, 0), (e_l, n, 0), (e_p, n, 0)):
        np.testing.assert_allclose(np.sum(a * b, axis=-1), want, atol=1e-12)


def test_tangent_basis_matches_chart_derivatives(rng):
    lam, phi, h = 0.31, -0.27, 1e-6
    e_l, e_p = tangent_basis(lam, phi)
    d_lam = (embed(lam + h, phi) - embed(lam - h, phi)) / (2 * h)
    d_phi = (embed(lam, phi + h) - embed(lam, phi - h)) / (2 * h)
    np.testing.assert_allclose(d_lam / np.linalg.norm(d_lam), e_l, atol=1e-8)
    np.testing.assert_allclose(d_phi / np.linalg.norm(d_phi), e_p, atol=1e-8)
    # metric scale factors
    assert np.linalg.norm(d_lam) == pytest.approx(np.pi * np.cos(np.pi * phi / 2), rel=1e-8)
    assert np.linalg.norm(d_phi) == pytest.approx(np.pi / 2, rel=1e-8)


def test_grad_g_examples():
    assert grad_g(0.0, 0.0, 0.3) == (0.0, 0.0)
    g = grad_g(1.0, 0.0, 0.0)
    assert g[0] == pytest.approx(1 / np.pi) and g[1] == 0.0
    for phi in (-0.8, 0.1, 0.6):
        assert grad_g(0.0, 1.0, phi)[1] == pytest.approx(2 / np.pi)


def test_grad_g_rejects_poles():
    with pytest.raises(SingularityError):
        grad_g(1.0, 1.0, 1.0)
    with pytest.raises(SingularityError):
        div_g(1.0, 1.0, 0.0, 0.0, -1.0)


def test_div_g_examples():
    phi = np.linspace(-0.9, 0.9, 11)
    np.testing.assert_allclose(div_g(np.cos(np.pi * phi / 2), 0 * phi, 0 * phi, 0 * phi, phi), 0, atol=1e-15)
    np.testing.assert_allclose(div_g(0 * phi, 1 + 0 * phi, 0 * phi, 0 * phi, phi), -np.tan(np.pi * phi / 2),
                               rtol=1e-12, atol=1e-15)


def test_div_of_ambient_projection_matches_embedding():
    # the field e_lam * cos(pi phi/2) is the rotation about the z axis: divergence free
    phi = np.array([0.2])
    assert abs(div_g(np.cos(np.pi * phi / 2), 0.0, 0.0, 0.0, phi)[0]) < 1e-15


def test_flux_components_examples():
    spec = burgers_flux()
    np.testing.assert_allclose(flux_components(1.0, 0.3, 0.0, spec), (np.pi / 2, 0.0), atol=1e-15)
    np.testing.assert_allclose(flux_components(0.0, 0.3, 0.2, spec), (0.0, 0.0), atol=1e-15)
    one = FluxSpec(f1=lambda u: 1.0 + 0 * np.asarray(u))
    np.testing.assert_allclose(flux_components(0.4, 0.0, 0.0, one), (0.0, 0.0), atol=1e-15)


def test_flux_components_general_formula(rng):
    spec = compatible_flux()
    lam, phi, u = rng.uniform(-1, 1, 50), rng.uniform(-0.9, 0.9, 50), rng.uniform(-2, 2, 50)
    sp, cp = np.sin(np.pi * phi / 2), np.cos(np.pi * phi / 2)
    f_lam, f_phi = flux_components(u, lam, phi, spec)
    want_lam = u ** 2 * sp * np.cos(np.pi * lam) + np.sin(u) * sp * np.sin(np.pi * lam) + np.pi / 2 * u ** 2 * cp
    want_phi = -(u ** 2) * np.sin(np.pi * lam) + np.sin(u) * np.cos(np.pi * lam)
    np.testing.assert_allclose(f_lam, want_lam, rtol=1e-13)
    np.testing.assert_allclose(f_phi, want_phi, rtol=1e-13, atol=1e-15)


@given(st.floats(-3, 3), st.floats(-0.95, 0.95), st.floats(-1, 1))
def test_frozen_state_divergence_vanishes(u, phi, lam):
    spec = compatible_flux()
    assert abs(frozen_state_divergence(u, lam, phi, spec)) <= 1e-12
    assert abs(fd_divergence(u, np.array(lam), np.array(phi), spec)) <= 1e-6


def test_divergence_theorem_monte_carlo(rng):
    lam, phi = rng.uniform(-1, 1, 50_000), rng.uniform(-0.999, 0.999, 50_000)
    d = frozen_state_divergence(0.7, lam, phi, compatible_flux()) * 4 * area_weight(phi)
    se = d.std(ddof=1) / np.sqrt(len(d))
    assert abs(d.mean()) <= 3 * se + 1e-12


def test_area_weight_values():
    assert area_weight(0.0) == pytest.approx(np.pi ** 2 / 2)
    assert abs(area_weight(1.0)) < 1e-15 and abs(area_weight(-1.0)) < 1e-15


def test_area_integrals_by_trapezoid():
    phi = np.linspace(-1, 1, 20_001)
    full = 2 * np.trapezoid(area_weight(phi), phi)
    assert full == pytest.approx(4 * np.pi, rel=1e-6)
    band = np.linspace(-0.5, 0.5, 20_001)
    assert 2 * np.trapezoid(area_weight(band), band) == pytest.approx(2 * np.pi * np.sqrt(2), rel=1e-6)
    assert sphere_area_quadrature() == pytest.approx(4 * np.pi, rel=1e-12)
    est, se = sphere_area_mc()
    assert abs(est - 4 * np.pi) <= 3 * se


def test_domain_measures():
    d = Domain()
    assert d.area == pytest.approx(2 * np.pi * np.sqrt(2))
    assert FULL_SPHERE.area == pytest.approx(4 * np.pi)
    assert FULL_SPHERE.edge_lengths() == {}
    edges = d.edge_lengths()
    assert edges["lam_lo"] == pytest.approx(np.pi / 2)
    assert edges["phi_hi"] == pytest.approx(2 * np.pi * np.cos(np.pi / 4))


def test_domain_validation():
    with pytest.raises(ValueError):
        Domain(phi_range=(-1.5, 0.5))
    with pytest.raises(ValueError):
        Domain(lambda_range=(-0.5, 0.5), periodic_lambda=True)
    assert ChartPoint(0.1, 0.2, 0.3).t == 0.3
