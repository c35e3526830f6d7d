"""Command-line interface: ``bgeom {analyze,verify,atlas,transition}``.

Every command reads one YAML config, writes ``report.json`` plus CSV tables
into ``--out`` and keeps wall-clock timings in a separate ``timings.json``
so that reports are byte-identical across runs with the same config and
seed.

Exit codes: 0 pass, 1 usage error, 2 skipped suite, 3 coverage failure,
4 empty chart overlap, 5 a residual or gate failed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import enable_compilation_cache
from .errors import (
    CoverageError,
    DomainError,
    GeometryError,
    InversionError,
    RadiusError,
    StiffnessError,
)
from .metrics import DEFAULTS, FAMILIES, build_metric

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SKIPPED = 2
EXIT_COVERAGE = 3
EXIT_EMPTY = 4
EXIT_FAILED = 5

METRIC_NAMES = tuple(FAMILIES) + ("perturbed",)
SUITES = ("gauss", "step2", "step4", "rules")

# residual gates per suite
GATES = {
    "gauss": {"radial": 1e-7, "orthogonal": 1e-7},
    "step2": {"*": 1e-4},
    "step4": {"ith": 1e-6, "ith_tangential": 1e-6, "init_gamma_m": 1e-5, "init_gamma_i": 1e-5,
              "init_a": 1e-5, "*": 1e-4},
    "rules": {"*": 1e-5},
}

CONFIG_DEFAULTS = {
    "metric": {"name": None, "dim": 2, "params": {}, "box": None, "k_max": 3},
    "analyze": {"K": 1, "sample_budget": None, "n_norm_samples": 128, "chart_radius": 0.25},
    "verify": {"suite": "all", "n_points": 100, "n_frame_points": 50, "n_collar_points": 30,
               "chart_radius": 0.25},
    "atlas": {"r": 0.1, "n_samples": 1000, "budget": 2000, "volume_radius": None, "n_mc": 4000},
    "transition": {"chart1": None, "chart2": None, "order": 2, "n": 64},
}


class UsageError(Exception):
    """Invalid configuration or arguments."""


# ----------------------------------------------------------------------------
# configuration


@dataclass
class MetricSpec:
    name: str
    dim: int
    params: dict
    box: tuple | None
    k_max: int = 3

    def build(self):
        try:
            return build_metric(self.name, self.dim, self.params, self.box, k_max=self.k_max)
        except (ValueError, GeometryError) as exc:
            raise UsageError(f"metric: {exc}") from exc


@dataclass
class Config:
    metric: MetricSpec
    sections: dict
    raw: dict = field(default_factory=dict)

    @property
    def sha256(self):
        return hashlib.sha256(_dumps(self.raw).encode()).hexdigest()


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _check_params(name, params):
    if not isinstance(params, dict):
        raise UsageError("metric.params: expected a mapping")
    allowed = dict(DEFAULTS[name])
    if name == "perturbed":
        allowed["base_params"] = {}
    errors = []
    for key, value in params.items():
        if key not in allowed:
            errors.append(f"metric.params.{key}: unknown parameter for {name}")
        elif name == "perturbed" and key == "base":
            if value not in FAMILIES:
                errors.append(f"metric.params.base: unknown base family {value!r}")
        elif name == "perturbed" and key == "base_params":
            if not isinstance(value, dict) or not all(_is_number(v) for v in value.values()):
                errors.append("metric.params.base_params: expected a numeric mapping")
        elif not _is_number(value):
            errors.append(f"metric.params.{key}: expected a finite number, got {value!r}")
    if name == "perturbed" and not errors:
        amp = params.get("amplitude", allowed["amplitude"])
        if not 0 <= amp < 0.5:
            errors.append("metric.params.amplitude: must lie in [0, 0.5)")
    if errors:
        raise UsageError("; ".join(errors))


def parse_config(data):
    """Validate a config mapping and fill in defaults."""
    if not isinstance(data, dict):
        raise UsageError("config: expected a mapping at top level")
    unknown = set(data) - set(CONFIG_DEFAULTS)
    if unknown:
        raise UsageError(f"config: unknown sections {sorted(unknown)}")
    m = dict(CONFIG_DEFAULTS["metric"])
    m.update(data.get("metric") or {})
    if m["name"] not in METRIC_NAMES:
        raise UsageError(f"metric.name: expected one of {list(METRIC_NAMES)}, got {m['name']!r}")
    if not isinstance(m["dim"], int) or isinstance(m["dim"], bool) or m["dim"] < 2:
        raise UsageError("metric.dim: expected an integer >= 2")
    if not isinstance(m["k_max"], int) or m["k_max"] < 1:
        raise UsageError("metric.k_max: expected a positive integer")
    _check_params(m["name"], m["params"] or {})
    box = m["box"]
    if box is not None:
        try:
            lower, upper = [float(v) for v in box["lower"]], [float(v) for v in box["upper"]]
        except (TypeError, KeyError, ValueError) as exc:
            raise UsageError("metric.box: expected {lower: [...], upper: [...]}") from exc
        if len(lower) != m["dim"] or len(upper) != m["dim"]:
            raise UsageError("metric.box: lower/upper must have dim entries")
        if lower[-1] != 0.0:
            raise UsageError("metric.box: the last lower coordinate must be 0 (boundary x_m = 0)")
        if any(a >= b for a, b in zip(lower, upper)):
            raise UsageError("metric.box: lower must be below upper")
        box = (lower, upper)
    spec = MetricSpec(m["name"], m["dim"], dict(m["params"] or {}), box, m["k_max"])
    sections = {}
    for key in ("analyze", "verify", "atlas", "transition"):
        sec = dict(CONFIG_DEFAULTS[key])
        given = data.get(key) or {}
        if not isinstance(given, dict):
            raise UsageError(f"{key}: expected a mapping")
        bad = set(given) - set(sec)
        if bad:
            raise UsageError(f"{key}: unknown keys {sorted(bad)}")
        sec.update(given)
        sections[key] = sec
    if sections["verify"]["suite"] not in SUITES + ("all",):
        raise UsageError(f"verify.suite: expected one of {list(SUITES) + ['all']}")
    r = sections["atlas"]["r"]
    if not _is_number(r) or r <= 0:
        raise UsageError("atlas.r: expected a positive number")
    raw = {"metric": {"name": spec.name, "dim": spec.dim, "params": spec.params,
                      "box": None if box is None else {"lower": box[0], "upper": box[1]},
                      "k_max": spec.k_max}}
    raw.update(sections)
    return Config(spec, sections, raw)


def load_config(path):
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise UsageError(f"config is not valid YAML: {exc}") from exc
    return parse_config(data)


# ----------------------------------------------------------------------------
# reports


def _clean(obj):
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def _dumps(obj):
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def gate(value, limit):
    """A numeric entry together with its tolerance gate."""
    value = float(value)
    return {"value": value, "gate": float(limit), "pass": bool(math.isfinite(value) and value <= limit)}


@dataclass
class Report:
    command: str
    config: Config
    seed: int
    workers: int
    results: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    status: str = "pass"

    def as_dict(self):
        return {
            "command": {"name": self.command, "seed": self.seed, "workers": self.workers},
            "config": self.config.raw,
            "config_sha256": self.config.sha256,
            "status": self.status,
            "checks": self.checks,
            "results": self.results,
            "tables": sorted(self.tables),
        }

    def to_json(self):
        return _dumps(self.as_dict())

    @staticmethod
    def from_json(text):
        return json.loads(text)

    def all_pass(self):
        return all(_all_pass(v) for v in self.checks.values())


def _all_pass(node):
    if isinstance(node, dict):
        if "pass" in node and "gate" in node:
            return bool(node["pass"])
        return all(_all_pass(v) for v in node.values())
    return True


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def write_outputs(out, report):
    os.makedirs(out, exist_ok=True)
    files = {"report.json": report.to_json(), "timings.json": _dumps(report.timings)}
    for name, (header, rows) in report.tables.items():
        files[name] = _csv_text(header, rows)
    for name, text in files.items():
        fd, tmp = tempfile.mkstemp(dir=out, prefix=".tmp-")
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, os.path.join(out, name))


class _Timer:
    def __init__(self, timings, key):
        self.timings, self.key = timings, key

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.timings[self.key] = time.perf_counter() - self.t0


# ----------------------------------------------------------------------------
# shared helpers


def _box(metric):
    return np.asarray(metric.domain.lower, float), np.asarray(metric.domain.upper, float)


def default_interior_point(metric, height=0.6):
    lo, hi = _box(metric)
    p = 0.5 * (lo + hi)
    p[-1] = lo[-1] + height * (hi[-1] - lo[-1])
    return p


def default_boundary_point(metric):
    lo, hi = _box(metric)
    p = 0.5 * (lo + hi)
    p[-1] = 0.0
    return p


def _coord_header(prefix, m, unit="coord"):
    return [f"{prefix}{i + 1} [{unit}]" for i in range(m)]


# ----------------------------------------------------------------------------
# commands


def cmd_analyze(config, seed=0, workers=1):
    from .atlas import estimate_constants, interior_samples
    from .boundary_geom import boundary_curvature_report
    from .charts import gaussian_chart, rauch_window, sample_chart
    from .tensor_core import curvature_norms

    rep = Report("analyze", config, seed, workers)
    sec = config.sections["analyze"]
    metric = config.metric.build()
    K = int(sec["K"])
    with _Timer(rep.timings, "constants"):
        const = estimate_constants(metric, K=K, sample_budget=sec["sample_budget"], seed=seed)
    rep.results["constants"] = const.as_dict()
    rep.checks["radii_positive"] = {
        name: {"value": float(v), "gate": 0.0, "pass": bool(v > 0)}
        for name, v in (("r_C", const.r_C), ("r_inj_boundary", const.r_inj_boundary), ("r_i", const.r_i))
    }
    rep.checks["finite_constants"] = {
        "value": bool(np.all(np.isfinite(const.C_R + const.C_l))), "gate": True,
        "pass": bool(np.all(np.isfinite(const.C_R + const.C_l))),
    }
    with _Timer(rep.timings, "rauch"):
        radius = min(float(sec["chart_radius"]), const.R3)
        try:
            chart = gaussian_chart(metric, default_interior_point(metric), radius)
            w = rauch_window(chart, sample_chart(chart, 64, seed))
            rep.results["rauch_window"] = {
                "center": chart.center, "radius": w.radius, "lambda_min": w.lambda_min,
                "lambda_max": w.lambda_max, "curvature_bound": w.curvature_bound,
                "envelope": w.envelope, "inside_envelope": w.inside,
            }
        except (RadiusError, DomainError, StiffnessError) as exc:
            rep.results["rauch_window"] = {"skipped": str(exc)}
    with _Timer(rep.timings, "boundary"):
        bp = default_boundary_point(metric)
        bc = boundary_curvature_report(metric, bp, k=min(K, metric.k_max - 2))
        rep.results["boundary_curvature"] = bc.as_dict()
    with _Timer(rep.timings, "norms"):
        xs = interior_samples(metric, int(sec["n_norm_samples"]), seed + 101)
        norms = curvature_norms(metric, xs, K)
    m = metric.dim
    header = _coord_header("x", m) + [f"curvature_norm_k{k} [length^-{k + 2}]" for k in range(K + 1)]
    rep.tables["norms.csv"] = (header, [list(x) + list(n) for x, n in zip(xs, norms)])
    rep.status = "pass" if rep.all_pass() else "fail"
    return rep, (EXIT_OK if rep.status == "pass" else EXIT_FAILED)


def _gated(suite, residuals):
    gates = GATES[suite]
    return {k: gate(v, gates.get(k, gates.get("*"))) for k, v in residuals.items()}


def _suite_gauss(metric, sec, seed):
    from .charts import collar_chart, gauss_lemma_residuals, gaussian_chart, sample_chart

    r = float(sec["chart_radius"])
    n = int(sec["n_points"])
    out = {}
    g = gaussian_chart(metric, default_interior_point(metric), r)
    res = gauss_lemma_residuals(g, sample_chart(g, n, seed))
    out["gaussian"] = _gated("gauss", {k: float(np.max(v)) for k, v in res.items()})
    c = collar_chart(metric, default_boundary_point(metric), r, r)
    res = gauss_lemma_residuals(c, sample_chart(c, n, seed))
    out["collar"] = _gated("gauss", {k: float(np.max(v)) for k, v in res.items()})
    return out


def _suite_step2(metric, sec, seed):
    from .charts import gaussian_chart
    from .frames import step2_residuals

    g = gaussian_chart(metric, default_interior_point(metric), float(sec["chart_radius"]))
    rep = step2_residuals(g, n=int(sec["n_frame_points"]), seed=seed)
    return {"gaussian": _gated("step2", rep.residuals)}


def _suite_step4(metric, sec, seed):
    from .charts import collar_chart
    from .frames import step4_residuals

    r = float(sec["chart_radius"])
    c = collar_chart(metric, default_boundary_point(metric), r, r)
    rep = step4_residuals(c, n=int(sec["n_collar_points"]), seed=seed)
    out = {"collar": _gated("step4", rep.residuals)}
    out["collar"]["nu_gamma_factor"] = {"value": rep.extras["nu_gamma_factor"],
                                        "fitted": rep.extras["nu_gamma_factor_fitted"]}
    return out


def _suite_rules(metric, sec, seed):
    import jax.numpy as jnp

    from .atlas import boundary_samples
    from .boundary_geom import boundary_curvature_report, intrinsic_derivative, restrict_and_correct

    m = metric.dim
    rng = np.random.default_rng(seed)
    xs = boundary_samples(metric, 3, seed + 7)
    lo, hi = _box(metric)
    xs[:, :-1] = lo[:-1] + 0.2 * (hi[:-1] - lo[:-1]) + 0.6 * (xs[:, :-1] - lo[:-1])
    worst_fd = 0.0
    for x in xs:
        A = rng.normal(size=(m, m))
        B = rng.normal(size=(m, m))

        def T(y, A=A, B=B):
            return jnp.sin(A @ y)[:, None] * jnp.cos(B @ y)[None, :] + A

        a = restrict_and_correct(metric, T, x, 2)
        b = intrinsic_derivative(metric, T, x, 2, method="fd")
        worst_fd = max(worst_fd, float(np.max(np.abs(a - b))))
    gauss = max(boundary_curvature_report(metric, x, 0).gauss_residual for x in xs)
    return {"boundary": _gated("rules", {"formula_vs_fd": worst_fd, "gauss_equation": gauss})}


_SUITE_FUNCS = {"gauss": _suite_gauss, "step2": _suite_step2, "step4": _suite_step4, "rules": _suite_rules}


def cmd_verify(config, suite=None, seed=0, workers=1):
    rep = Report("verify", config, seed, workers)
    sec = config.sections["verify"]
    suite = suite or sec["suite"]
    if suite not in SUITES + ("all",):
        raise UsageError(f"unknown suite {suite!r}")
    metric = config.metric.build()
    names = SUITES if suite == "all" else (suite,)
    skipped = []
    rows = []
    for name in names:
        with _Timer(rep.timings, name):
            try:
                rep.checks[name] = _SUITE_FUNCS[name](metric, sec, seed)
            except (RadiusError, DomainError, StiffnessError, InversionError) as exc:
                skipped.append(name)
                rep.results.setdefault("skipped", {})[name] = f"{type(exc).__name__}: {exc}"
                continue
        for chart, vals in rep.checks[name].items():
            for key, v in vals.items():
                if isinstance(v, dict) and "gate" in v:
                    rows.append([name, chart, key, v["value"], v["gate"], int(v["pass"])])
    rep.results["suites"] = list(names)
    rep.tables["residuals.csv"] = (["suite", "chart", "residual", "value [dimensionless]",
                                    "gate [dimensionless]", "pass"], rows)
    if not rep.all_pass():
        rep.status = "fail"
        return rep, EXIT_FAILED
    if skipped:
        rep.status = "skipped"
        return rep, EXIT_SKIPPED
    return rep, EXIT_OK


def cmd_atlas(config, r=None, seed=0, workers=1):
    from .atlas import build_cover, estimate_constants, partition_of_unity, volume_bounds

    rep = Report("atlas", config, seed, workers)
    sec = config.sections["atlas"]
    r = float(sec["r"] if r is None else r)
    metric = config.metric.build()
    with _Timer(rep.timings, "constants"):
        const = estimate_constants(metric, K=1, seed=seed)
    rep.results["constants"] = const.as_dict()
    if not r < const.r_m:
        raise UsageError(f"atlas.r = {r} rejected: the cover needs r < r_m = min(R1/2, R2/12, R3, r0/2) "
                         f"= {const.r_m:.6g} for this metric")
    m = metric.dim
    try:
        with _Timer(rep.timings, "cover"):
            cover = build_cover(metric, const, r, n_samples=int(sec["n_samples"]), budget=int(sec["budget"]),
                                seed=seed)
        with _Timer(rep.timings, "partition"):
            pu = partition_of_unity(cover, seed=seed)
    except CoverageError as exc:
        bad = np.atleast_2d(np.asarray(exc.uncovered, float))
        rep.status = "coverage_failure"
        rep.results["coverage_error"] = str(exc)
        rep.tables["uncovered.csv"] = (_coord_header("x", m), [list(x) for x in bad])
        return rep, EXIT_COVERAGE
    with _Timer(rep.timings, "volumes"):
        vr = sec["volume_radius"] if sec["volume_radius"] is not None else r
        ball = volume_bounds(metric, const, vr, n_mc=int(sec["n_mc"]), seed=seed)
        cyl = volume_bounds(metric, const, vr, n_mc=int(sec["n_mc"]), seed=seed, cylinder=True)
    cd = cover.as_dict()
    rep.results["cover"] = {k: v for k, v in cd.items() if k not in ("boundary_centers", "interior_centers")}
    rep.results["partition"] = pu.as_dict()
    rep.results["volumes"] = {"ball": ball.as_dict(), "cylinder": cyl.as_dict()}
    rep.checks["partition_sum"] = gate(pu.sum_error, 1e-12)
    rep.checks["coverage"] = {"value": cover.half_radius_coverage, "gate": True, "pass": cover.half_radius_coverage}
    rep.checks["multiplicity"] = {"value": cover.multiplicity, "gate": cover.multiplicity_bound,
                                  "pass": bool(cover.multiplicity <= cover.multiplicity_bound)}
    for name, vb in (("ball", ball), ("cylinder", cyl)):
        rep.checks[f"volume_{name}"] = {"value": vb.mc_volume, "gate": [vb.D1, vb.D2],
                                        "pass": vb.inside, "sigma": 3}
    rows = [[int(lbl), "boundary" if lbl >= 0 else "interior"] + list(x)
            for lbl, x in zip(cover.labels, cover.centers)]
    rep.tables["centers.csv"] = (["label", "family"] + _coord_header("x", m), rows)
    sums = pu.values.sum(axis=1)
    rep.tables["partition.csv"] = (
        _coord_header("x", m) + ["collar_t [length]", "sum_phi [dimensionless]", "F [dimensionless]",
                                  "max_phi [dimensionless]"],
        [list(z) + [t, s, F, p] for z, t, s, F, p in
         zip(cover.samples, cover.collar_t, sums, pu.F, pu.values.max(axis=1))],
    )
    rep.status = "pass" if rep.all_pass() else "fail"
    return rep, (EXIT_OK if rep.status == "pass" else EXIT_FAILED)


def _make_chart(metric, spec, which):
    from .charts import collar_chart, gaussian_chart

    spec = dict(spec or {})
    kind = spec.get("kind", "gaussian")
    try:
        if kind == "gaussian":
            center = spec.get("center")
            if center is None:
                center = default_interior_point(metric)
                if which == 2:
                    center = center + np.eye(metric.dim)[0] * 0.1
            return gaussian_chart(metric, np.asarray(center, float), float(spec.get("radius", 0.25)))
        if kind == "collar":
            center = spec.get("center")
            center = default_boundary_point(metric) if center is None else np.asarray(center, float)
            radii = spec.get("radii", [0.25, 0.25])
            return collar_chart(metric, center, float(radii[0]), float(radii[1]))
    except DomainError as exc:
        raise UsageError(f"transition.chart{which}: {exc}") from exc
    raise UsageError(f"transition.chart{which}.kind: expected 'gaussian' or 'collar'")


def cmd_transition(config, seed=0, workers=1):
    from .charts import chart_transition, pullback_metric_jet

    rep = Report("transition", config, seed, workers)
    sec = config.sections["transition"]
    metric = config.metric.build()
    order = int(sec["order"])
    try:
        c1 = _make_chart(metric, sec["chart1"], 1)
        c2 = _make_chart(metric, sec["chart2"], 2)
    except (RadiusError, StiffnessError) as exc:
        rep.status = "skipped"
        rep.results["skipped"] = f"{type(exc).__name__}: {exc}"
        return rep, EXIT_SKIPPED
    with _Timer(rep.timings, "transition"):
        tr = chart_transition(c1, c2, order=order, n=int(sec["n"]), seed=seed)
    rep.results["charts"] = [{"kind": c.kind, "center": c.center, "radii": list(c.radii)} for c in (c1, c2)]
    rep.results["n_requested"] = int(sec["n"])
    rep.results["n_in_overlap"] = int(tr.ok.sum())
    if tr.empty:
        rep.status = "empty_overlap"
        return rep, EXIT_EMPTY
    J = tr.jets[1]
    sv = np.linalg.svd(J, compute_uv=False)
    rep.results["sup_derivatives"] = {str(k): tr.sup[k] for k in range(order + 1)}
    rep.results["jacobian_singular_values"] = [float(sv.min()), float(sv.max())]
    # D f^T g~1 D f = g~2 bounds the operator norm by sqrt(lambda_max(g~2) / lambda_min(g~1))
    g1 = pullback_metric_jet(c1, tr.values, 0)[0]
    g2 = pullback_metric_jet(c2, tr.ys, 0)[0]
    env = math.sqrt(np.linalg.eigvalsh(g2).max() / np.linalg.eigvalsh(g1).min())
    rep.checks["jacobian_envelope"] = gate(float(sv.max()), env * (1 + 1e-8))
    iso = np.einsum("nji,njk,nkl->nil", J, g1, J) - g2
    rep.checks["isometry"] = gate(float(np.max(np.abs(iso))), 1e-6)
    m = metric.dim
    header = _coord_header("y2_", m) + _coord_header("f", m) + ["jacobian_norm [dimensionless]"]
    rows = [list(y) + list(f) + [s[0]] for y, f, s in zip(tr.ys, tr.values, sv)]
    rep.tables["transition.csv"] = (header, rows)
    rep.status = "pass" if rep.all_pass() else "fail"
    return rep, (EXIT_OK if rep.status == "pass" else EXIT_FAILED)


# ----------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    p = _Parser(prog="bgeom", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (("analyze", "estimate bounded-geometry constants"),
                        ("verify", "run residual suites"),
                        ("atlas", "build a cover and partition of unity"),
                        ("transition", "sample a chart transition map")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="YAML config file")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--workers", type=int, default=1, help="worker count (recorded; kernels are vectorised)")
        s.add_argument("--seed", type=_seed, default=0, help="seed for all sampling")
        if name == "verify":
            s.add_argument("--suite", choices=SUITES + ("all",), default=None)
        if name == "atlas":
            s.add_argument("--r", type=float, default=None, help="cover radius (overrides atlas.r)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    enable_compilation_cache()
    seed = args.seed % 2**32
    try:
        config = load_config(args.config)
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        t0 = time.perf_counter()
        if args.command == "analyze":
            rep, code = cmd_analyze(config, seed, args.workers)
        elif args.command == "verify":
            rep, code = cmd_verify(config, args.suite, seed, args.workers)
        elif args.command == "atlas":
            rep, code = cmd_atlas(config, args.r, seed, args.workers)
        else:
            rep, code = cmd_transition(config, seed, args.workers)
        rep.timings["total"] = time.perf_counter() - t0
    except UsageError as exc:
        print(f"bgeom: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    write_outputs(args.out, rep)
    print(f"bgeom {args.command}: {rep.status} (exit {code})")
    return code


if __name__ == "__main__":
    sys.exit(main())
