import numpy as np
import pytest

from bgeom import CapabilityError, DomainError, ShapeError
from bgeom.metrics import build_metric, cap_center
from bgeom.tensor_core import (
    DomainSpec,
    TensorValue,
    christoffel,
    curvature_norms,
    fornberg_weights,
    riemann,
    tensor_norm,
)

from oracles import constant_curvature_riemann, curvature_norm_2d


def test_fornberg_central_second_derivative():
    w = fornberg_weights(np.array([-1.0, 0.0, 1.0]), 2)
    np.testing.assert_allclose(w, [1.0, -2.0, 1.0], atol=1e-14)


def test_domain_rejects_bad_boxes():
    with pytest.raises(ValueError):
        DomainSpec.half_space([0.0, 0.1], [1.0, 1.0])
    with pytest.raises(ValueError):
        DomainSpec.half_space([0.0, 0.0], [0.0, 1.0])
    dom = DomainSpec.half_space([-1, 0], [1, 1])
    with pytest.raises(DomainError):
        dom.check(np.array([0.0, -0.1]))


def test_flat_christoffel_and_curvature_vanish():
    m = build_metric("flat_half_space", 3)
    x = np.array([0.1, -0.2, 0.3])
    assert np.all(christoffel(m, x)[0] == 0.0)
    cb = riemann(m, x, k=1)
    assert np.all(cb.norms == 0.0)


@pytest.mark.parametrize("name,K", [("spherical_cap", 1.0), ("hyperbolic_slab", -1.0)])
def test_constant_curvature_models(name, K):
    m = build_metric(name, 2)
    x = cap_center(2) if name == "spherical_cap" else np.array([0.2, 0.5])
    cb = riemann(m, x, k=1)
    np.testing.assert_allclose(cb.R, constant_curvature_riemann(cb.metric, K), atol=1e-10)
    assert abs(cb.sectional([1, 0], [0, 1]) - K) < 1e-10
    assert cb.symmetry_residual() < 1e-12 and cb.bianchi_residual() < 1e-12
    assert abs(cb.norms[0] - curvature_norm_2d(K)) < 1e-10
    assert cb.norms[1] < 1e-9


def test_hyperbolic_christoffel_closed_form():
    # g = delta / y^2: Gamma^m_aa = 1/y, Gamma^m_mm = -1/y, Gamma^a_am = -1/y
    m = build_metric("hyperbolic_slab", 2)
    x = np.array([0.3, 0.5])
    y = 1.5
    G = christoffel(m, x)[0]
    expect = np.zeros((2, 2, 2))
    expect[1, 0, 0] = 1 / y
    expect[1, 1, 1] = -1 / y
    expect[0, 0, 1] = expect[0, 1, 0] = -1 / y
    np.testing.assert_allclose(G, expect, atol=1e-13)


def test_finite_difference_jets_agree_with_analytic():
    m = build_metric("warped_product", 2)
    fd = m.with_jet_source("finite-difference")
    x = np.array([0.1, 0.4])
    for a, b in zip(m.jet(x, 2), fd.jet(x, 2)):
        np.testing.assert_allclose(a, b, atol=1e-7)
    cb_a, cb_f = riemann(m, x, 0), riemann(fd, x, 0)
    np.testing.assert_allclose(cb_a.R, cb_f.R, atol=1e-6)


def test_batched_norms_match_pointwise():
    m = build_metric("perturbed", 2, {"base": "spherical_cap", "seed": 4})
    xs = np.array([[0.0, 0.3], [0.2, 0.6], [-0.4, 1.0]])
    batch = curvature_norms(m, xs, 1)
    for x, row in zip(xs, batch):
        np.testing.assert_allclose(riemann(m, x, 1).norms, row, rtol=1e-12)


def test_capability_gate():
    m = build_metric("flat_half_space", 2, k_max=2)
    with pytest.raises(CapabilityError):
        riemann(m, np.array([0.0, 0.5]), k=1)


def test_tensor_value_algebra():
    base = np.zeros(2)
    v = TensorValue(base, (1, 0), [3.0, 4.0])
    w = TensorValue(base, (0, 1), [1.0, 2.0])
    assert tensor_norm(v, np.eye(2)) == pytest.approx(5.0)
    assert v.product(w).contract(0, 0).comps == pytest.approx(11.0)
    with pytest.raises(ShapeError):
        TensorValue(base, (0, 2), np.zeros(3))
    with pytest.raises(ShapeError):
        tensor_norm(v)
    S = TensorValue(base, (0, 2), [[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_allclose(S.permute([1, 0]).comps, [[1.0, 3.0], [2.0, 4.0]])
    g = np.diag([4.0, 1.0])
    np.testing.assert_allclose(S.dual_first(g).comps, [[0.25, 0.5], [3.0, 4.0]])
