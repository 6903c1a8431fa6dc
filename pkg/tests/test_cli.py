import json

import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from dirbeam.cli import (
    ConfigError,
    _set_path,
    dump_config,
    load_config,
    main,
    parse_config,
    preset_names,
    run_scenario,
    run_sweep,
    validate_config,
)

BASE = """
name: small
geometry:
  patches:
    - {kind: straight, start: [0, 0, 0], end: [2, 0, 0], d1: [0, 0, 1]}
section: {h1: 0.1, h2: 0.2}
material: {kind: stvk, E: 1.0e4}
discretization: {p: 2, n_el: 2}
boundary:
  - {patch: 0, end: left, fix: [phi, d1, d2]}
loads:
  end_forces:
    - {patch: 0, end: right, force: [0, 0, 1.0e-3]}
stages:
  - {steps: 2}
probes:
  tip: {patch: 0, at: end}
"""

SWEEP = BASE + """
sweep:
  metric: probe.tip.u3
  rows:
    name: p
    keys: [discretization.p]
    values: [[2], [3]]
  columns:
    name: load
    keys: [loads.end_forces.0.force]
    values: [[[0, 0, 1.0e-3]], [[0, 0, 2.0e-3]]]
    labels: [small, large]
"""


def base():
    return yaml.safe_load(BASE)


def test_defaults_are_resolved():
    cfg = parse_config(BASE)
    d = cfg.discretization
    assert (d.p_d, d.n_G, d.policy, d.eas, d.formulation) == (1, 3, "loc-ur", True, "mixed")
    assert d.p_p.interior == [1] * 15
    assert cfg.material.nu == 0.0 and cfg.material.density == 1.0
    assert cfg.solver.max_iter == 50


def test_selective_degrees_in_resolved_dump():
    data = base()
    data["discretization"].update(policy="loc-sr", p_d=2)
    cfg = validate_config(data)
    assert cfg.discretization.p_p.interior[:3] == [0, 1, 1]
    assert cfg.discretization.p_p.boundary[:3] == [1, 1, 1]


@pytest.mark.parametrize("mutate,fragment", [
    (lambda d: d.update(colour="red"), "colour"),
    (lambda d: d["section"].update(h3=1.0), "section.h3"),
    (lambda d: d["discretization"].update(p_d=3), "p_d must satisfy"),
    (lambda d: d["discretization"].update(policy="loc-xx"), "discretization.policy"),
    (lambda d: d["material"].update(nu=0.5), "material.nu"),
    (lambda d: d["boundary"][0].update(end="right"), "both constrained and loaded"),
    (lambda d: d["probes"]["tip"].update(patch=4), "out of range"),
    (lambda d: d["geometry"]["patches"][0].update(d1=[1, 0, 0]), None),
    (lambda d: d.pop("section"), "section"),
])
def test_invalid_configurations_are_rejected(mutate, fragment):
    data = base()
    mutate(data)
    if fragment is None:
        # accepted by the schema, rejected when the model is built
        with pytest.raises(ConfigError, match="normal to the axis"):
            run_scenario(validate_config(data))
        return
    with pytest.raises(ConfigError, match=fragment.replace(".", r"\.")):
        validate_config(data)


def test_malformed_yaml_is_reported():
    with pytest.raises(ConfigError, match="malformed"):
        parse_config("name: [unclosed")
    with pytest.raises(ConfigError, match="mapping"):
        parse_config("- a\n- b\n")


@pytest.mark.parametrize("name", preset_names())
def test_presets_round_trip(name):
    cfg = load_config(name)
    assert parse_config(dump_config(cfg)) == cfg
    assert dump_config(parse_config(dump_config(cfg))) == dump_config(cfg)


@settings(max_examples=30, deadline=None)
@given(p=st.integers(1, 6), n_el=st.integers(1, 50), data=st.data(),
       policy=st.sampled_from(["glo", "loc", "loc-ur", "loc-sr"]), eas=st.booleans())
def test_round_trip_over_discretizations(p, n_el, data, policy, eas):
    if policy == "loc-sr" and p < 2:
        return
    p_d = data.draw(st.integers(1, p))
    d = base()
    d["discretization"] = dict(p=p, n_el=n_el, p_d=p_d, policy=policy, eas=eas)
    cfg = validate_config(d)
    assert parse_config(dump_config(cfg)) == cfg


def test_set_path_handles_list_indices():
    d = base()
    _set_path(d, "loads.end_forces.0.force", [1, 2, 3])
    _set_path(d, "discretization.n_el", 7)
    assert d["loads"]["end_forces"][0]["force"] == [1, 2, 3]
    assert d["discretization"]["n_el"] == 7


def test_sweep_is_deterministic(tmp_path):
    cfg = parse_config(SWEEP)
    first = run_sweep(cfg, tmp_path / "a")
    second = run_sweep(cfg, tmp_path / "b")
    assert first == second
    assert (tmp_path / "a" / "small.csv").read_bytes() == (tmp_path / "b" / "small.csv").read_bytes()
    rows = first.splitlines()
    assert rows[0] == "p,small,large"
    assert [r.split(",")[0] for r in rows[1:]] == ["2", "3"]
    # 9 significant digits
    assert all(len(c.lstrip("-").replace(".", "").split("e")[0].lstrip("0")) <= 9
               for r in rows[1:] for c in r.split(",")[1:])


def test_empty_sweep_writes_header_only():
    data = yaml.safe_load(SWEEP)
    data["sweep"]["rows"]["values"] = []
    assert run_sweep(validate_config(data)) == "p,small,large\n"


def test_run_writes_reports(tmp_path):
    cfg = parse_config(BASE)
    summary = run_scenario(cfg, tmp_path)
    assert {p.name for p in tmp_path.iterdir()} == {"iterations.log", "probes.csv", "summary.json",
                                                    "config.resolved.yaml"}
    on_disk = json.loads((tmp_path / "summary.json").read_text())
    assert on_disk["iterations"] == summary["iterations"]
    assert parse_config((tmp_path / "config.resolved.yaml").read_text()) == cfg
    lines = (tmp_path / "probes.csv").read_text().splitlines()
    assert lines[0] == "step,load_factor,angle_rad,tip.u1,tip.u2,tip.u3"
    assert len(lines) == 3
    first = (tmp_path / "probes.csv").read_bytes()
    run_scenario(cfg, tmp_path)
    assert (tmp_path / "probes.csv").read_bytes() == first


def test_command_line(tmp_path, capsys):
    assert main(["presets", "list"]) == 0
    assert "pure_bending" in capsys.readouterr().out.split()
    path = tmp_path / "c.yaml"
    path.write_text(BASE)
    assert main(["--out", str(tmp_path / "out"), "--seed", "3", "run", str(path)]) == 0
    assert (tmp_path / "out" / "summary.json").exists()
    assert main(["run", "no-such-preset"]) == 2
    assert main(["modal", "modal_free_free"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) >= 12
