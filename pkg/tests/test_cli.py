import json

import numpy as np
import pytest
import yaml

from bgeom import cli
from bgeom.errors import CoverageError

FLAT = {"metric": {"name": "flat_half_space", "dim": 2, "box": {"lower": [0, 0], "upper": [1, 1]}},
        "atlas": {"r": 0.1, "n_mc": 1000}}


def _config(tmp_path, data, name="config.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


def test_parse_config_defaults():
    cfg = cli.parse_config({"metric": {"name": "hyperbolic_slab"}})
    assert cfg.metric.dim == 2 and cfg.sections["verify"]["suite"] == "all"
    assert cfg.sha256 == cli.parse_config({"metric": {"name": "hyperbolic_slab"}}).sha256


@pytest.mark.parametrize("data,field", [
    ({"metric": {"name": "torus"}}, "metric.name"),
    ({"metric": {"name": "hyperbolic_slab", "params": {"scale": "big"}}}, "metric.params.scale"),
    ({"metric": {"name": "hyperbolic_slab", "params": {"bogus": 1}}}, "metric.params.bogus"),
    ({"metric": {"name": "perturbed", "params": {"amplitude": 0.7}}}, "metric.params.amplitude"),
    ({"metric": {"name": "flat_half_space", "box": {"lower": [0, 0.1], "upper": [1, 1]}}}, "metric.box"),
    ({"metric": {"name": "flat_half_space"}, "atlas": {"r": -1}}, "atlas.r"),
    ({"metric": {"name": "flat_half_space"}, "extra": {}}, "unknown sections"),
])
def test_config_diagnostics_name_the_field(data, field):
    with pytest.raises(cli.UsageError, match=field.replace(".", r"\.")):
        cli.parse_config(data)


def test_malformed_params_exit_1_without_files(tmp_path, capsys):
    cfg = _config(tmp_path, {"metric": {"name": "hyperbolic_slab", "params": {"scale": "x"}}})
    out = tmp_path / "out"
    assert cli.main(["analyze", "--config", cfg, "--out", str(out)]) == cli.EXIT_USAGE
    assert not out.exists()
    assert "metric.params.scale" in capsys.readouterr().err


def test_bad_arguments_exit_1(tmp_path):
    with pytest.raises(SystemExit) as e:
        cli.main(["verify", "--config", "x.yaml", "--out", str(tmp_path), "--suite", "nope"])
    assert e.value.code == cli.EXIT_USAGE


def test_atlas_radius_above_rm_is_usage_error(tmp_path, capsys):
    cfg = _config(tmp_path, FLAT)
    out = tmp_path / "out"
    assert cli.main(["atlas", "--config", cfg, "--out", str(out), "--r", "0.5"]) == cli.EXIT_USAGE
    assert "r_m" in capsys.readouterr().err and not out.exists()


def test_verify_flat_and_determinism(tmp_path):
    cfg = _config(tmp_path, FLAT)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["verify", "--config", cfg, "--out", str(a), "--suite", "step2", "--seed", "4"]) == 0
    assert cli.main(["verify", "--config", cfg, "--out", str(b), "--suite", "step2", "--seed", "4"]) == 0
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    rep = json.loads((a / "report.json").read_text())
    assert rep["command"]["seed"] == 4 and rep["status"] == "pass"
    for v in rep["checks"]["step2"]["gaussian"].values():
        assert v["value"] == 0.0 and v["gate"] == 1e-4 and v["pass"]
    header = (a / "residuals.csv").read_text().splitlines()[0]
    assert "[dimensionless]" in header
    assert "total" in json.loads((a / "timings.json").read_text())


def test_atlas_command(tmp_path):
    cfg = _config(tmp_path, FLAT)
    out = tmp_path / "out"
    assert cli.main(["atlas", "--config", cfg, "--out", str(out)]) == cli.EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["checks"]["partition_sum"]["pass"]
    assert rep["checks"]["multiplicity"]["value"] <= rep["checks"]["multiplicity"]["gate"]
    rows = (out / "centers.csv").read_text().splitlines()
    assert rows[0].startswith("label,family,x1 [coord]") and len(rows) > 1


def test_atlas_coverage_failure_exit_3(tmp_path, monkeypatch):
    import bgeom.atlas as atlas

    def fail(*a, **k):
        raise CoverageError("gap", np.array([[0.5, 0.5], [0.2, 0.1]]))

    monkeypatch.setattr(atlas, "build_cover", fail)
    cfg = _config(tmp_path, FLAT)
    out = tmp_path / "out"
    assert cli.main(["atlas", "--config", cfg, "--out", str(out)]) == cli.EXIT_COVERAGE
    lines = (out / "uncovered.csv").read_text().splitlines()
    assert lines[0] == "x1 [coord],x2 [coord]" and len(lines) == 3


def test_transition_empty_overlap_exit_4(tmp_path):
    data = {"metric": {"name": "flat_half_space", "box": {"lower": [-1, 0], "upper": [1, 1]}},
            "transition": {"chart1": {"center": [-0.6, 0.5], "radius": 0.2},
                           "chart2": {"center": [0.6, 0.5], "radius": 0.2}}}
    out = tmp_path / "out"
    assert cli.main(["transition", "--config", _config(tmp_path, data), "--out", str(out)]) == cli.EXIT_EMPTY
    assert json.loads((out / "report.json").read_text())["results"]["n_in_overlap"] == 0


def test_transition_hyperbolic(tmp_path):
    out = tmp_path / "out"
    cfg = _config(tmp_path, {"metric": {"name": "hyperbolic_slab"}, "transition": {"n": 32}})
    assert cli.main(["transition", "--config", cfg, "--out", str(out)]) == cli.EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["checks"]["isometry"]["pass"] and rep["checks"]["jacobian_envelope"]["pass"]


def test_verify_skipped_suite_exit_2(tmp_path, monkeypatch):
    from bgeom.errors import RadiusError

    def skip(*a, **k):
        raise RadiusError("chart radius exceeds the conjugate radius")

    monkeypatch.setitem(cli._SUITE_FUNCS, "step4", skip)
    cfg = _config(tmp_path, FLAT)
    out = tmp_path / "out"
    assert cli.main(["verify", "--config", cfg, "--out", str(out), "--suite", "step4"]) == cli.EXIT_SKIPPED
    assert "step4" in json.loads((out / "report.json").read_text())["results"]["skipped"]


def test_report_round_trip(tmp_path):
    cfg = cli.parse_config(FLAT)
    rep = cli.Report("verify", cfg, 3, 1, checks={"x": cli.gate(float("inf"), 1.0)}, results={"a": np.float64(0.1)})
    text = rep.to_json()
    again = json.dumps(json.loads(text), sort_keys=True, indent=2) + "\n"
    assert again == text
    assert json.loads(text)["checks"]["x"] == {"value": "inf", "gate": 1.0, "pass": False}


def test_analyze_flat_and_horocycle(tmp_path):
    out = tmp_path / "flat"
    assert cli.main(["analyze", "--config", _config(tmp_path, FLAT), "--out", str(out)]) == cli.EXIT_OK
    c = json.loads((out / "report.json").read_text())["results"]["constants"]
    assert max(c["curvature_sup"]) == 0.0 and max(c["second_fundamental_form_sup"]) == 0.0
    assert (out / "norms.csv").read_text().splitlines()[0].endswith("curvature_norm_k1 [length^-3]")
    out = tmp_path / "hyp"
    cfg = _config(tmp_path, {"metric": {"name": "hyperbolic_slab"}}, "h.yaml")
    assert cli.main(["analyze", "--config", cfg, "--out", str(out)]) == cli.EXIT_OK
    c = json.loads((out / "report.json").read_text())["results"]["constants"]
    assert abs(c["second_fundamental_form_sup"][0] - 1.0) <= 1e-4


@pytest.mark.parametrize("name,suite", [("spherical_cap", "step2"), ("hyperbolic_slab", "step4")])
def test_verify_curved_suites(tmp_path, name, suite):
    out = tmp_path / "out"
    cfg = _config(tmp_path, {"metric": {"name": name}})
    assert cli.main(["verify", "--config", cfg, "--out", str(out), "--suite", suite]) == cli.EXIT_OK


def test_atlas_hyperbolic_multiplicity(tmp_path):
    out = tmp_path / "out"
    cfg = _config(tmp_path, {"metric": {"name": "hyperbolic_slab"}, "atlas": {"r": 0.1, "n_mc": 1000}})
    assert cli.main(["atlas", "--config", cfg, "--out", str(out)]) == cli.EXIT_OK
    chk = json.loads((out / "report.json").read_text())["checks"]["multiplicity"]
    assert chk["value"] <= chk["gate"]


def test_transition_cap_pair_envelope(tmp_path):
    from bgeom.metrics import cap_center

    c = cap_center(2).tolist()
    data = {"metric": {"name": "spherical_cap"},
            "transition": {"chart1": {"center": c, "radius": 0.3},
                           "chart2": {"center": [c[0] + 0.15, c[1]], "radius": 0.3}}}
    out = tmp_path / "out"
    assert cli.main(["transition", "--config", _config(tmp_path, data), "--out", str(out)]) == cli.EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    env = rep["checks"]["jacobian_envelope"]
    assert env["pass"] and env["value"] <= env["gate"]
