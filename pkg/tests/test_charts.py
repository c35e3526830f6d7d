import math

import numpy as np
import pytest

from bgeom import DomainError, RadiusError
from bgeom.charts import (
    chart_transition,
    collar_chart,
    comparison_envelope,
    gauss_lemma_residuals,
    gaussian_chart,
    pullback_metric_jet,
    rauch_window,
    sample_chart,
)
from bgeom.metrics import build_metric, cap_center

from oracles import HYPERBOLIC_ENVELOPE, SPHERE_ENVELOPE, hyperbolic_envelope, sphere_envelope


def test_oracle_values_frozen():
    for r, v in SPHERE_ENVELOPE.items():
        assert sphere_envelope(r) == pytest.approx(v, rel=1e-15)
    for r, v in HYPERBOLIC_ENVELOPE.items():
        assert hyperbolic_envelope(r) == pytest.approx(v, rel=1e-15)
    assert round(SPHERE_ENVELOPE[math.pi / 4], 5) == 0.81057


def _ring(r, n=8):
    a = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return r * np.stack([np.cos(a), np.sin(a)], axis=1)


@pytest.mark.parametrize("name,table", [("spherical_cap", SPHERE_ENVELOPE), ("hyperbolic_slab", HYPERBOLIC_ENVELOPE)])
def test_normal_coordinate_eigenvalues(name, table):
    m = build_metric(name, 2)
    p = cap_center(2) if name == "spherical_cap" else np.array([0.0, 0.9])
    chart = gaussian_chart(m, p, 0.55)
    for r in (0.25, 0.5):
        g = pullback_metric_jet(chart, _ring(r), 0)[0]
        ev = np.linalg.eigvalsh(g)
        np.testing.assert_allclose(ev[:, 0 if name == "spherical_cap" else 1], table[r], atol=1e-5)
        np.testing.assert_allclose(ev[:, 1 if name == "spherical_cap" else 0], 1.0, atol=1e-5)


def test_comparison_envelope_brackets():
    lo, hi = comparison_envelope(1.0, 0.5)
    assert lo == pytest.approx(SPHERE_ENVELOPE[0.5], abs=1e-12)
    assert hi == pytest.approx(HYPERBOLIC_ENVELOPE[0.5], abs=1e-12)
    assert comparison_envelope(0.0, 0.5) == pytest.approx((1.0, 1.0))


def test_rauch_window_inside_envelope():
    m = build_metric("perturbed", 2, {"base": "spherical_cap", "seed": 2})
    chart = gaussian_chart(m, cap_center(2), 0.3)
    w = rauch_window(chart, sample_chart(chart, 64, seed=1))
    assert w.inside
    assert w.envelope[0] <= w.lambda_min <= w.lambda_max <= w.envelope[1]


@pytest.mark.parametrize("name", ["flat_half_space", "spherical_cap", "hyperbolic_slab", "warped_product"])
def test_gauss_lemma(name):
    m = build_metric(name, 2)
    lo, hi = np.asarray(m.domain.lower), np.asarray(m.domain.upper)
    p = 0.5 * (lo + hi)
    g = gaussian_chart(m, p, 0.25)
    res = gauss_lemma_residuals(g, sample_chart(g, 100, seed=0))
    assert max(np.max(v) for v in res.values()) <= 1e-7
    c = collar_chart(m, np.array([p[0], 0.0]), 0.25, 0.25)
    res = gauss_lemma_residuals(c, sample_chart(c, 100, seed=0))
    assert max(np.max(v) for v in res.values()) <= 1e-7


def test_chart_round_trip():
    m = build_metric("warped_product", 2)
    c = collar_chart(m, np.array([0.1, 0.0]), 0.3, 0.3)
    ys = sample_chart(c, 20, seed=5)
    xs = c.forward(ys)
    back, ok = c.inverse(xs, strict=False)
    assert ok.all()
    np.testing.assert_allclose(back, ys, atol=1e-9)
    # the boundary is the level set t = 0
    assert np.all(np.abs(c.forward(np.array([[0.1, 0.0], [-0.2, 0.0]]))[:, -1]) < 1e-12)


def test_flat_transition_is_rigid():
    m = build_metric("flat_half_space", 2)
    a = gaussian_chart(m, np.array([0.0, 0.5]), 0.3)
    b = gaussian_chart(m, np.array([0.1, 0.5]), 0.3)
    tr = chart_transition(a, b, n=40, seed=0)
    assert not tr.empty
    J = tr.jets[1]
    np.testing.assert_allclose(np.einsum("nji,njk->nik", J, J), np.broadcast_to(np.eye(2), J.shape), atol=1e-10)
    assert tr.sup[2] < 1e-9


def test_disjoint_charts_have_empty_overlap():
    m = build_metric("flat_half_space", 2)
    a = gaussian_chart(m, np.array([-0.6, 0.5]), 0.2)
    b = gaussian_chart(m, np.array([0.6, 0.5]), 0.2)
    assert chart_transition(a, b, n=16).empty


def test_chart_validation_errors():
    m = build_metric("spherical_cap", 2)
    with pytest.raises(RadiusError):
        gaussian_chart(m, cap_center(2), 5.0)
    with pytest.raises(DomainError):
        collar_chart(m, np.array([0.0, 0.2]), 0.2, 0.2)
