import numpy as np
import pytest

from bgeom.charts import collar_chart, gaussian_chart, pullback_metric_jet
from bgeom.frames import NU_GAMMA_FACTOR, boundary_l, step2_residuals, step4_residuals, synchronous_frame
from bgeom.metrics import build_metric, cap_center

from oracles import warped_orthonormal_l

STEP2_KEYS = {"orthonormality", "ab_inverse", "metric_from_a", "gamma_ode", "gij", "tgamma_gamma",
              "radial_gauge", "bgamma"}


def test_flat_step2_is_exact():
    m = build_metric("flat_half_space", 2)
    rep = step2_residuals(gaussian_chart(m, np.array([0.0, 0.5]), 0.3), n=50)
    assert set(rep.residuals) == STEP2_KEYS
    assert rep.max_residual == 0.0


@pytest.mark.parametrize("name", ["spherical_cap", "hyperbolic_slab", "warped_product"])
def test_step2_curved(name):
    m = build_metric(name, 2)
    p = cap_center(2) if name == "spherical_cap" else np.array([0.1, 0.6])
    rep = step2_residuals(gaussian_chart(m, p, 0.25), n=50, seed=3)
    assert rep.n_samples == 50
    assert rep.max_residual <= 1e-4


def test_synchronous_frame_orthonormal_at_center():
    m = build_metric("perturbed", 3, {"base": "hyperbolic_slab", "seed": 1})
    chart = gaussian_chart(m, np.array([0.0, 0.0, 0.7]), 0.2)
    fr = synchronous_frame(chart, np.zeros((1, 3)), k=1)
    np.testing.assert_allclose(fr.a[0][0], np.eye(3), atol=1e-12)
    assert fr.metric_residual() < 1e-10


@pytest.mark.parametrize("name", ["hyperbolic_slab", "warped_product", "spherical_cap"])
def test_step4_collar_identities(name):
    m = build_metric(name, 2)
    c = collar_chart(m, np.array([0.1, 0.0]), 0.25, 0.25)
    rep = step4_residuals(c, n=30, seed=0)
    r = rep.residuals
    assert r["ith"] <= 1e-6 and r["ith_tangential"] <= 1e-6
    for key in ("nu_gamma", "nu_gamma_jets", "nu_a", "nu_a_jets", "theta1", "nu_gamma_tangential"):
        assert r[key] <= 1e-4, key
    for key in ("init_gamma_m", "init_gamma_i", "init_a"):
        assert r[key] <= 1e-5, key
    assert rep.extras["nu_gamma_factor"] == NU_GAMMA_FACTOR == -2.0


def test_nu_gamma_factor_fit_on_curved_collar():
    m = build_metric("spherical_cap", 2)
    rep = step4_residuals(collar_chart(m, np.array([0.0, 0.0]), 0.25, 0.25), n=20, seed=1)
    assert rep.extras["nu_gamma_factor_fitted"] == pytest.approx(-2.0, abs=1e-4)


@pytest.mark.parametrize("c0,c1,kappa", [(1.0, 0.3, 0.0), (1.0, -1.0, 1.0), (1.5, 0.4, -0.5)])
def test_boundary_initial_values_against_warped_oracle(c0, c1, kappa):
    m = build_metric("warped_product", 3, {"c0": c0, "c1": c1, "c2": 0.2, "fiber_curvature": kappa})
    c = collar_chart(m, np.array([0.1, -0.1, 0.0]), 0.2, 0.2)
    vs = np.array([[0.0, 0.0], [0.05, -0.1], [-0.12, 0.07]])
    l, fr0 = boundary_l(c, vs)
    lam = warped_orthonormal_l(c0, c1)
    np.testing.assert_allclose(l[0], lam * np.eye(2), atol=1e-10)
    # away from the base point l(d_i, s_j) = lam g-bar(d_i, s_j) = lam a^j_i
    np.testing.assert_allclose(l, lam * np.swapaxes(fr0.a[0][:, :2, :2], 1, 2), atol=1e-5)
    gbar = pullback_metric_jet(c, np.hstack([vs, np.zeros((3, 1))]), 0)[0][:, :2, :2]
    np.testing.assert_allclose(np.einsum("nai,naj->nij", fr0.a[0][:, :2, :2], fr0.a[0][:, :2, :2]), gbar, atol=1e-8)
    G0 = fr0.gamma[0]
    np.testing.assert_allclose(G0[:, -1, :2, :2], np.swapaxes(l, 1, 2), atol=1e-5)
    np.testing.assert_allclose(G0[:, :2, -1, :2], -np.swapaxes(l, 1, 2), atol=1e-5)
    np.testing.assert_allclose(fr0.a[0][:, :, -1], np.broadcast_to(np.eye(3)[:, -1], (3, 3)), atol=1e-5)
