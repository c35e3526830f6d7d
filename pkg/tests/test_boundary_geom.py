import jax.numpy as jnp
import numpy as np
import pytest

from bgeom import DomainError
from bgeom.boundary_geom import (
    boundary_curvature_report,
    boundary_norms,
    inward_normal,
    intrinsic_derivative,
    nabla_nu,
    restrict_and_correct,
    second_fundamental_form,
)
from bgeom.metrics import build_metric, unit_ball

from oracles import warped_orthonormal_l, warped_second_fundamental_form


def test_unit_ball_second_fundamental_form_is_induced_metric():
    m = unit_ball(3)
    x = np.array([0.2, -0.3, 0.0])
    sff = second_fundamental_form(m, x)
    np.testing.assert_allclose(sff.l, sff.gbar, atol=1e-12)
    np.testing.assert_allclose(sff.shape_operator(), np.eye(2), atol=1e-12)


def test_unit_ball_gauss_equation():
    m = unit_ball(3)
    rep = boundary_curvature_report(m, np.array([0.1, 0.2, 0.0]))
    assert rep.gauss_residual <= 1e-5
    assert rep.sectional == pytest.approx(1.0, abs=1e-10)
    assert rep.ambient_norms[0] < 1e-12


def test_warped_oracle():
    c0, c1 = 1.0, 0.3
    m = build_metric("warped_product", 3, {"c0": c0, "c1": c1, "c2": 0.0, "fiber_curvature": 0.5})
    u = np.array([0.3, -0.1])
    sff = second_fundamental_form(m, np.append(u, 0.0))
    np.testing.assert_allclose(sff.l, warped_second_fundamental_form(c0, c1, 0.5, u), atol=1e-12)
    eig = np.linalg.eigvals(sff.shape_operator())
    np.testing.assert_allclose(eig, warped_orthonormal_l(c0, c1), atol=1e-12)


def test_inward_normal_and_nabla_nu_sign():
    m = build_metric("hyperbolic_slab", 2)
    x = np.array([0.1, 0.0])
    nu = inward_normal(m, x)
    g = m.eval(x)
    assert nu[-1] > 0 and nu @ g @ nu == pytest.approx(1.0)
    nn = nabla_nu(m, x)
    assert nn.sign == -1.0
    assert nn.residual < 1e-12 and nn.normal_component < 1e-12


def test_horocycle_norms():
    # boundary of the slab is a horocycle: |l| = 1 and the boundary is flat
    m = build_metric("hyperbolic_slab", 2)
    xs = np.array([[-0.5, 0.0], [0.0, 0.0], [0.7, 0.0]])
    out = boundary_norms(m, xs, 1)
    np.testing.assert_allclose(np.asarray(out[0])[:, 0], 1.0, atol=1e-12)
    with pytest.raises(DomainError):
        boundary_norms(m, np.array([[0.0, 0.1]]), 0)


@pytest.mark.parametrize("name", ["hyperbolic_slab", "warped_product", "spherical_cap"])
def test_restriction_formula_matches_intrinsic_derivative(name):
    m = build_metric(name, 3)
    rng = np.random.default_rng(11)
    A = rng.normal(size=(3, 3))
    B = rng.normal(size=(3, 3))

    def T(y):
        return jnp.sin(A @ y)[:, None] * jnp.cos(B @ y)[None, :] + A

    x = np.array([0.1, -0.2, 0.0])
    a = restrict_and_correct(m, T, x, 2)
    fd = intrinsic_derivative(m, T, x, 2, method="fd")
    ad = intrinsic_derivative(m, T, x, 2, method="ad")
    assert np.max(np.abs(a - fd)) <= 1e-5
    assert np.max(np.abs(a - ad)) <= 1e-10
