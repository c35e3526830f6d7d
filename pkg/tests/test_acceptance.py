"""Acceptance criteria, one test per criterion, at the contract tolerances.

Each test records a pass/fail line that is printed in the terminal summary.
"""

import dataclasses
import json
import math
import time

import jax.numpy as jnp
import numpy as np
import yaml

from bgeom import cli
from bgeom.atlas import build_cover, estimate_constants, partition_of_unity, theorem_main_report, volume_bounds
from bgeom.boundary_geom import boundary_curvature_report, intrinsic_derivative, restrict_and_correct
from bgeom.charts import collar_chart, gauss_lemma_residuals, gaussian_chart, pullback_metric_jet, sample_chart
from bgeom.frames import boundary_l, step2_residuals, step4_residuals
from bgeom.metrics import FAMILIES, build_metric, cap_center, unit_ball

from oracles import (
    CAP_AREA_03,
    HYPERBOLIC_AREA_03,
    HYPERBOLIC_ENVELOPE,
    SPHERE_ENVELOPE,
    warped_orthonormal_l,
)

BUILTINS = ["flat_half_space", "spherical_cap", "hyperbolic_slab", "warped_product"]


def _centre(m):
    return 0.5 * (np.asarray(m.domain.lower) + np.asarray(m.domain.upper))


def test_1_gauss_lemma(acceptance):
    worst, slowest = 0.0, 0.0
    for name in BUILTINS:
        t0 = time.perf_counter()
        m = build_metric(name, 2)
        p = _centre(m)
        for chart in (gaussian_chart(m, p, 0.25), collar_chart(m, np.array([p[0], 0.0]), 0.25, 0.25)):
            res = gauss_lemma_residuals(chart, sample_chart(chart, 100, seed=0))
            worst = max(worst, *(float(np.max(v)) for v in res.values()))
        slowest = max(slowest, time.perf_counter() - t0)
    ok = worst <= 1e-7 and slowest <= 10.0
    acceptance(1, "Gauss lemma", ok, f"max residual {worst:.2e} (gate 1e-7), slowest metric {slowest:.1f} s (gate 10 s)")
    assert worst <= 1e-7
    assert slowest <= 10.0


def test_2_synchronous_frame(acceptance):
    worst = 0.0
    flat = step2_residuals(gaussian_chart(build_metric("flat_half_space", 2), np.array([0.0, 0.5]), 0.3), n=50)
    for name in BUILTINS[1:]:
        m = build_metric(name, 2)
        p = cap_center(2) if name == "spherical_cap" else _centre(m)
        worst = max(worst, step2_residuals(gaussian_chart(m, p, 0.25), n=50, seed=1).max_residual)
    ok = worst <= 1e-4 and flat.max_residual == 0.0
    acceptance(2, "synchronous-frame identities", ok,
               f"curved max {worst:.2e} (gate 1e-4), flat max {flat.max_residual!r} (exact 0)")
    assert worst <= 1e-4
    assert flat.max_residual == 0.0


def test_3_collar_identities(acceptance):
    ith = ode = 0.0
    for name in BUILTINS[1:]:
        m = build_metric(name, 2)
        r = step4_residuals(collar_chart(m, np.array([0.1, 0.0]), 0.25, 0.25), n=30).residuals
        ith = max(ith, r["ith"], r["ith_tangential"])
        ode = max(ode, r["nu_gamma"], r["nu_gamma_jets"], r["nu_a"], r["nu_a_jets"])
    c0, c1 = 1.0, 0.3
    m = build_metric("warped_product", 2, {"c0": c0, "c1": c1, "c2": 0.2})
    l, fr0 = boundary_l(collar_chart(m, np.array([0.1, 0.0]), 0.2, 0.2), np.array([[0.0], [0.08], [-0.1]]))
    lam = warped_orthonormal_l(c0, c1)
    init = max(
        float(np.max(np.abs(l - lam * np.swapaxes(fr0.a[0][:, :1, :1], 1, 2)))),
        float(np.max(np.abs(fr0.gamma[0][:, -1, :1, :1] - lam))),
        float(np.max(np.abs(fr0.gamma[0][:, :1, -1, :1] + lam))),
        float(np.max(np.abs(fr0.a[0][:, :, -1] - np.eye(2)[:, -1]))),
    )
    ok = ith <= 1e-6 and ode <= 1e-4 and init <= 1e-5
    acceptance(3, "collar identities", ok,
               f"ith {ith:.2e} (1e-6), nu_gamma/nu_a {ode:.2e} (1e-4), warped initial values {init:.2e} (1e-5)")
    assert ith <= 1e-6
    assert ode <= 1e-4
    assert init <= 1e-5


def test_4_normal_coordinate_envelopes(acceptance):
    worst = 0.0
    for name, table, p in (("spherical_cap", SPHERE_ENVELOPE, cap_center(2)),
                           ("hyperbolic_slab", HYPERBOLIC_ENVELOPE, np.array([0.0, 0.9]))):
        chart = gaussian_chart(build_metric(name, 2), p, 0.55)
        for r in (0.25, 0.5):
            a = np.linspace(0, 2 * np.pi, 12, endpoint=False)
            ys = r * np.stack([np.cos(a), np.sin(a)], axis=1)
            ev = np.sort(np.linalg.eigvalsh(pullback_metric_jet(chart, ys, 0)[0]), axis=1)
            expect = np.sort([1.0, table[r]])
            worst = max(worst, float(np.max(np.abs(ev - expect))))
    example = round(math.sin(math.pi / 4) ** 2 / (math.pi / 4) ** 2, 5)
    ok = worst <= 1e-5 and example == 0.81057
    acceptance(4, "constant-curvature envelopes", ok, f"max eigenvalue error {worst:.2e} (gate 1e-5)")
    assert worst <= 1e-5
    assert example == 0.81057


def test_5_boundary_calculus(acceptance):
    ball = unit_ball(3)
    gauss, sec = 0.0, []
    for x in ([0.0, 0.0, 0.0], [0.3, -0.2, 0.0], [-0.5, 0.4, 0.0]):
        rep = boundary_curvature_report(ball, np.array(x))
        gauss = max(gauss, rep.gauss_residual)
        sec.append(rep.sectional)
    rng = np.random.default_rng(2024)
    formula = 0.0
    for name in ("hyperbolic_slab", "spherical_cap", "warped_product"):
        m = build_metric(name, 3)
        for _ in range(3):
            A, B = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
            x = np.append(rng.uniform(-0.5, 0.5, 2), 0.0)

            def T(y, A=A, B=B):
                return jnp.sin(A @ y)[:, None] * jnp.cos(B @ y)[None, :] + A

            a = restrict_and_correct(m, T, x, 2)
            formula = max(formula, float(np.max(np.abs(a - intrinsic_derivative(m, T, x, 2, method="fd")))))
    sec_err = float(np.max(np.abs(np.array(sec) - 1.0)))
    ok = gauss <= 1e-5 and sec_err <= 1e-5 and formula <= 1e-5
    acceptance(5, "boundary calculus", ok,
               f"Gauss residual {gauss:.2e}, |K-bar - 1| {sec_err:.2e}, formula vs FD {formula:.2e} (gates 1e-5)")
    assert gauss <= 1e-5
    assert sec_err <= 1e-5
    assert formula <= 1e-5


def test_6_atlas(acceptance):
    flat = build_metric("flat_half_space", 2, box=([0.0, 0.0], [1.0, 1.0]))
    const = estimate_constants(flat, K=1)
    cov = build_cover(flat, const, 0.1, n_samples=1000, seed=0)
    pu = partition_of_unity(cov)
    # interior family populated through a shorter collar
    flat2 = build_metric("flat_half_space", 2, box=([0.0, 0.0], [0.5, 0.6]))
    c2 = dataclasses.replace(estimate_constants(flat2, K=1), R2=0.6, r0=0.12)
    cov2 = build_cover(flat2, c2, 0.045, n_samples=1000, seed=0)
    pu2 = partition_of_unity(cov2, charts=[0, len(cov2.boundary_centers)])
    sum_err = max(pu.sum_error, pu2.sum_error)
    mult_ok = cov.multiplicity <= cov.multiplicity_bound and cov2.multiplicity <= cov2.multiplicity_bound
    windows = {}
    for name, exact in (("spherical_cap", CAP_AREA_03), ("hyperbolic_slab", HYPERBOLIC_AREA_03)):
        m = build_metric(name, 2)
        vb = volume_bounds(m, estimate_constants(m, K=0), 0.3, seed=0)
        windows[name] = (vb, exact)
    vflat = volume_bounds(flat, const, 0.1, seed=0)
    mc_ok = all(vb.inside for vb, _ in windows.values()) and vflat.inside
    exact_ok = all(vb.contains(e) for vb, e in windows.values())
    ok = sum_err <= 1e-12 and mult_ok and mc_ok and exact_ok and len(cov.samples) == 1000
    detail = (f"sum error {sum_err:.1e} (1e-12), M_f {cov.multiplicity}/{cov2.multiplicity} <= "
              f"{cov.multiplicity_bound:.0f}/{cov2.multiplicity_bound:.0f}, "
              + ", ".join(f"{n} MC {vb.mc_volume:.5f} in [{vb.D1:.5f}, {vb.D2:.5f}] exact {e:.5f}"
                          for n, (vb, e) in windows.items()))
    acceptance(6, "atlas", ok, detail)
    assert len(cov.samples) == 1000 and len(cov2.samples) == 1000
    assert sum_err <= 1e-12
    assert mult_ok
    assert mc_ok
    assert exact_ok


def test_7_correspondence(acceptance):
    t0 = time.perf_counter()
    failures = []
    count = 0
    for name in FAMILIES:
        metrics = [build_metric(name, 2)] + [
            build_metric("perturbed", 2, {"base": name, "seed": s, "amplitude": 0.1}) for s in (1, 2, 3)]
        for m in metrics:
            rep = theorem_main_report(m, K=1, seed=0)
            count += 1
            flags = (rep["finite_coordinate_free"], rep["finite_coordinate"], rep["finite_from_charts"], rep["stable"])
            if not all(flags) or rep["chart_failures"]:
                failures.append((m.name, flags, rep["chart_failures"]))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed <= 300.0 and count == 16
    acceptance(7, "bounded-geometry correspondence", ok,
               f"{count} metrics, failures {failures or 'none'}, {elapsed:.0f} s (gate 300 s)")
    assert not failures
    assert count == 16
    assert elapsed <= 300.0


def test_8_cli_determinism(acceptance, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"metric": {"name": "hyperbolic_slab"}, "atlas": {"r": 0.1}}))
    same = []
    for cmd in (["analyze"], ["verify", "--suite", "rules"], ["transition"]):
        outs = []
        for run in ("a", "b"):
            out = tmp_path / f"{cmd[0]}_{run}"
            code = cli.main(cmd[:1] + ["--config", str(cfg), "--out", str(out), "--seed", "7"] + cmd[1:])
            assert code == cli.EXIT_OK
            outs.append((out / "report.json").read_bytes())
        json.loads(outs[0])
        same.append(outs[0] == outs[1])
    ok = all(same)
    acceptance(8, "CLI determinism", ok, f"byte-identical report.json for analyze/verify/transition: {same}")
    assert ok
