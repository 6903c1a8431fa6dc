"""Scenario configuration, runners, sweeps and report files.

Configurations are YAML documents validated against a strict schema (unknown keys are
rejected). Presets for the standard benchmarks ship in ``dirbeam/presets``.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path
from typing import Annotated, Any, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import solver as sv
from .element import DegreePolicy
from .joints import JointSpec
from .section import CrossSection, Material
from .splines import circular_arc, straight_line

log = logging.getLogger("dirbeam")

Vec3 = tuple[float, float, float]
End = Literal["left", "right"]


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# ---------------------------------------------------------------------------
# schema


class StraightPatch(_Strict):
    kind: Literal["straight"]
    start: Vec3
    end: Vec3
    d1: Vec3


class ArcPatch(_Strict):
    kind: Literal["arc"]
    radius: float = Field(gt=0)
    angle_deg: float = Field(gt=0, lt=180)
    center: Vec3 = (0.0, 0.0, 0.0)
    start_angle_deg: float = 0.0
    d1: Vec3


PatchCfg = Annotated[Union[StraightPatch, ArcPatch], Field(discriminator="kind")]


class JointCfg(_Strict):
    members: list[tuple[int, End]] = Field(min_length=2)


class GeometryCfg(_Strict):
    patches: list[PatchCfg] = Field(min_length=1)
    joints: list[JointCfg] = []


class SectionCfg(_Strict):
    h1: float = Field(gt=0)
    h2: float = Field(gt=0)
    n_quad: int = Field(default=3, ge=1)


class MaterialCfg(_Strict):
    kind: Literal["stvk", "neohooke"]
    E: float = Field(gt=0)
    nu: float = Field(default=0.0, gt=-1, lt=0.5)
    density: float = Field(default=1.0, gt=0)


class PhysicalDegrees(_Strict):
    interior: list[int]
    boundary: list[int]


class DiscretizationCfg(_Strict):
    p: int = Field(ge=1)
    n_el: int = Field(ge=1)
    p_d: Optional[int] = None
    policy: Literal["glo", "loc", "loc-ur", "loc-sr"] = "loc-ur"
    n_G: Optional[int] = Field(default=None, ge=1)
    eas: bool = True
    formulation: Literal["mixed", "displacement"] = "mixed"
    continuity: Literal["max", "c0"] = "max"
    p_p: Optional[PhysicalDegrees] = None

    @model_validator(mode="after")
    def _resolve(self):
        p_d = max(1, self.p - 1) if self.p_d is None else self.p_d
        if not 1 <= p_d <= self.p:
            raise ValueError(f"p_d must satisfy 1 <= p_d <= p (got p_d={p_d}, p={self.p})")
        object.__setattr__(self, "p_d", p_d)
        if self.n_G is None:
            object.__setattr__(self, "n_G", self.p + 1)
        pp = None
        if self.formulation == "mixed":
            pol = DegreePolicy(self.policy, self.p, p_d)
            pp = PhysicalDegrees(interior=list(pol.component_degrees(False)),
                                 boundary=list(pol.component_degrees(True)))
        if self.p_p is not None and self.p_p != pp:
            raise ValueError("p_p does not match the degrees implied by p and policy")
        object.__setattr__(self, "p_p", pp)
        return self


class BoundaryCfg(_Strict):
    patch: int = Field(ge=0)
    end: End
    fix: list[str] = Field(min_length=1)


class EndForceCfg(_Strict):
    patch: int = Field(ge=0)
    end: End
    force: Vec3 = (0.0, 0.0, 0.0)
    couple1: Vec3 = (0.0, 0.0, 0.0)
    couple2: Vec3 = (0.0, 0.0, 0.0)


class FollowerCfg(_Strict):
    patch: int = Field(ge=0)
    end: End
    magnitude: float
    director: Literal[1, 2] = 1


class DistributedCfg(_Strict):
    patch: int = Field(ge=0)
    force: Vec3 = (0.0, 0.0, 0.0)
    couple1: Vec3 = (0.0, 0.0, 0.0)
    couple2: Vec3 = (0.0, 0.0, 0.0)


class LoadsCfg(_Strict):
    end_forces: list[EndForceCfg] = []
    follower_moments: list[FollowerCfg] = []
    distributed: list[DistributedCfg] = []


class RotationCfg(_Strict):
    patch: int = Field(ge=0)
    end: End
    axis: Vec3
    angle_deg: float


class StageCfg(_Strict):
    steps: int = Field(ge=1)
    load: tuple[float, float] = (0.0, 1.0)
    rotation: Optional[RotationCfg] = None


class SolverCfg(_Strict):
    max_iter: int = Field(default=50, ge=1)
    residual_tol: float = Field(default=1e-9, gt=0)
    energy_tol: float = Field(default=1e-12, gt=0)
    residual_atol: float = Field(default=0.0, ge=0)
    energy_atol: float = Field(default=0.0, ge=0)
    divergence: float = Field(default=1e20, gt=1)
    roundoff_factor: float = Field(default=10.0, ge=0)


class ProbeCfg(_Strict):
    patch: int = Field(ge=0)
    at: Union[Literal["start", "end"], float] = "end"


class PureBendingRef(_Strict):
    patch: int = 0
    follower: int = 0


class TipRef(_Strict):
    probe: str
    values: Vec3


class ReferenceCfg(_Strict):
    pure_bending: Optional[PureBendingRef] = None
    tip: Optional[TipRef] = None


class ModalCfg(_Strict):
    n_modes: int = Field(default=12, ge=1)
    shift: Optional[float] = None


class SweepAxis(_Strict):
    name: str
    keys: list[str] = Field(min_length=1)
    values: list[list[Any]] = []
    labels: Optional[list[str]] = None

    @model_validator(mode="after")
    def _shape(self):
        for v in self.values:
            if len(v) != len(self.keys):
                raise ValueError(f"each value needs {len(self.keys)} entries, got {v!r}")
        if self.labels is not None and len(self.labels) != len(self.values):
            raise ValueError("labels and values differ in length")
        return self

    def label(self, i: int) -> str:
        if self.labels is not None:
            return self.labels[i]
        return "/".join(_fmt(v) for v in self.values[i])


class SweepCfg(_Strict):
    rows: SweepAxis
    columns: Optional[SweepAxis] = None
    metric: str


class ScenarioConfig(_Strict):
    name: str
    description: str = ""
    geometry: GeometryCfg
    section: SectionCfg
    material: MaterialCfg
    discretization: DiscretizationCfg
    boundary: list[BoundaryCfg] = []
    loads: LoadsCfg = LoadsCfg()
    stages: list[StageCfg] = [StageCfg(steps=1)]
    solver: SolverCfg = SolverCfg()
    probes: dict[str, ProbeCfg] = {}
    reference: Optional[ReferenceCfg] = None
    modal: Optional[ModalCfg] = None
    sweep: Optional[SweepCfg] = None

    @model_validator(mode="after")
    def _cross_checks(self):
        n = len(self.geometry.patches)
        used = [b.patch for b in self.boundary]
        used += [x.patch for x in self.loads.end_forces + self.loads.follower_moments + self.loads.distributed]
        used += [p.patch for p in self.probes.values()]
        used += [s.rotation.patch for s in self.stages if s.rotation is not None]
        used += [m[0] for j in self.geometry.joints for m in j.members]
        bad = [i for i in used if i >= n]
        if bad:
            raise ValueError(f"patch index {bad[0]} out of range (have {n} patches)")
        dirichlet = {(b.patch, b.end) for b in self.boundary}
        for x in self.loads.end_forces + self.loads.follower_moments:
            if (x.patch, x.end) in dirichlet:
                raise ValueError(f"patch {x.patch} end {x.end} is both constrained and loaded")
        if self.reference and self.reference.tip and self.reference.tip.probe not in self.probes:
            raise ValueError(f"reference probe {self.reference.tip.probe!r} is not defined")
        if self.reference and self.reference.pure_bending:
            pb = self.reference.pure_bending
            if pb.follower >= len(self.loads.follower_moments):
                raise ValueError("pure_bending reference needs a follower moment")
            if not isinstance(self.geometry.patches[pb.patch], StraightPatch):
                raise ValueError("pure_bending reference needs a straight patch")
        return self


# ---------------------------------------------------------------------------
# parsing


def parse_config(text: str) -> ScenarioConfig:
    """Validate YAML text; errors name the offending key path."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from exc
    return validate_config(data)


def validate_config(data) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            path = ".".join(str(p) for p in err["loc"]) or "<root>"
            lines.append(f"{path}: {err['msg']}")
        raise ConfigError("; ".join(sorted(set(lines)))) from None


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False, default_flow_style=None)


def preset_names() -> list[str]:
    root = resources.files("dirbeam") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_config(ref: str) -> ScenarioConfig:
    """Load a configuration from a file path or a preset name."""
    path = Path(ref)
    if path.exists():
        return parse_config(path.read_text())
    if ref in preset_names():
        return parse_config((resources.files("dirbeam") / "presets" / f"{ref}.yaml").read_text())
    raise ConfigError(f"no configuration file or preset named {ref!r}")


# ---------------------------------------------------------------------------
# model construction


def _patch_geometry(pc) -> sv.PatchGeometry:
    if isinstance(pc, StraightPatch):
        curve = straight_line(pc.start, pc.end)
    else:
        curve = circular_arc(pc.radius, math.radians(pc.angle_deg), pc.center, math.radians(pc.start_angle_deg))
    t = curve.derivatives(curve.knot_vector.domain[0], 1)[1]
    t = t / np.linalg.norm(t)
    d1 = np.asarray(pc.d1, dtype=float)
    if np.linalg.norm(d1) == 0 or abs(d1 @ t) > 1e-10 * np.linalg.norm(d1):
        raise ConfigError("d1 must be a nonzero vector normal to the axis at the patch start")
    d1 = d1 / np.linalg.norm(d1)
    return sv.PatchGeometry(curve, np.array([d1, np.cross(t, d1)]))


def build_scenario(cfg: ScenarioConfig):
    """(model, load case, Newton settings) for a validated configuration."""
    dc = cfg.discretization
    disc = sv.Discretization(p=dc.p, n_el=dc.n_el, p_d=dc.p_d, policy=dc.policy, n_gauss=dc.n_G,
                             eas=dc.eas, formulation=dc.formulation, continuity=dc.continuity)
    sec = CrossSection(cfg.section.h1, cfg.section.h2, cfg.section.n_quad)
    mat = Material(cfg.material.kind, cfg.material.E, cfg.material.nu, cfg.material.density)
    joints = [JointSpec(tuple(tuple(m) for m in j.members)) for j in cfg.geometry.joints]
    model = sv.build_model([_patch_geometry(p) for p in cfg.geometry.patches], disc, sec, mat, joints)
    lc = sv.LoadCase(
        end_loads=[sv.EndLoad(f.patch, f.end, f.force, f.couple1, f.couple2) for f in cfg.loads.end_forces],
        follower_moments=[sv.FollowerMoment(f.patch, f.end, f.magnitude, f.director)
                          for f in cfg.loads.follower_moments],
        distributed=[sv.DistributedLoad(d.patch, d.force, d.couple1, d.couple2) for d in cfg.loads.distributed],
        constraints=[sv.EndConstraint(b.patch, b.end, tuple(b.fix)) for b in cfg.boundary],
        stages=[sv.Stage(s.steps, tuple(s.load), None if s.rotation is None else sv.PrescribedRotation(
            s.rotation.patch, s.rotation.end, s.rotation.axis, math.radians(s.rotation.angle_deg)))
            for s in cfg.stages],
    )
    settings = sv.NewtonSettings(**cfg.solver.model_dump())
    return model, lc, settings


def pure_bending_reference(cfg: ScenarioConfig):
    """u_ref(X) = R sin(X/R) - X along the straight patch, R = E I / M at the final load factor."""
    pb = cfg.reference.pure_bending
    fm = cfg.loads.follower_moments[pb.follower]
    h = (cfg.section.h1, cfg.section.h2)
    b = fm.director - 1
    inertia = h[1 - b] * h[b] ** 3 / 12
    moment = fm.magnitude * cfg.stages[-1].load[1]
    radius = cfg.material.E * inertia / moment
    pc = cfg.geometry.patches[pb.patch]
    start = np.asarray(pc.start, dtype=float)
    t = np.asarray(pc.end, dtype=float) - start
    t = t / np.linalg.norm(t)

    def u_ref(X):
        x = float((np.asarray(X) - start) @ t)
        return radius * math.sin(x / radius) - x

    component = int(np.argmax(np.abs(t)))
    return u_ref, component, radius


# ---------------------------------------------------------------------------
# runners


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".9g")
    return str(v)


def _probe_values(model, cfg, state):
    out = {}
    for name, pr in cfg.probes.items():
        pos, disp = sv.probe(model, state, pr.patch, pr.at)
        out[name] = {"position": pos.tolist(), "displacement": disp.tolist()}
    return out


def run_scenario(cfg: ScenarioConfig, out_dir: Path | None = None) -> dict:
    """Solve a scenario; optionally write iteration log, probe table, turn table and summary."""
    model, lc, settings = build_scenario(cfg)
    rows = []

    def on_step(step, state):
        rows.append((step, _probe_values(model, cfg, state)))

    try:
        result = sv.newton_solve(model, lc, settings, on_step=on_step)
    except sv.NonConvergenceError as exc:
        if out_dir is not None:
            _write_log(Path(out_dir), exc.log)
        raise
    final = result.states[-1]
    summary = {
        "name": cfg.name,
        "steps": len(result.iterations),
        "iterations": result.iterations,
        "total_iterations": int(sum(result.iterations)),
        "probes": _probe_values(model, cfg, final),
        "metrics": {},
    }
    ref = cfg.reference
    if ref is not None and ref.pure_bending is not None:
        u_ref, comp, radius = pure_bending_reference(cfg)
        summary["metrics"]["l2_error"] = sv.l2_error(model, final, ref.pure_bending.patch, u_ref, comp)
        summary["metrics"]["radius"] = radius
    if ref is not None and ref.tip is not None:
        u = summary["probes"][ref.tip.probe]["displacement"]
        summary["metrics"]["tip_error"] = sv.relative_tip_error(u, ref.tip.values).tolist()
    turns = _turn_table(result, rows)
    if turns:
        summary["turns"] = turns
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_log(out, result.log)
        _write_probe_table(out / "probes.csv", cfg, result, rows)
        if turns:
            _write_turn_table(out / "turns.csv", cfg, turns)
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        (out / "config.resolved.yaml").write_text(dump_config(cfg))
    return summary


def _turn_table(result, rows):
    """Probe displacements at every completed full turn of a prescribed rotation (turn 0 = before)."""
    out = []
    prev = None
    for k, angles in enumerate(result.angles):
        if not angles:
            prev = k
            continue
        total = max(abs(a) for a in angles.values())
        n = total / (2 * math.pi)
        if abs(n - round(n)) < 1e-9 and round(n) >= 1:
            if not out and prev is not None:
                out.append({"turn": 0, "probes": rows[prev][1]})
            out.append({"turn": int(round(n)), "probes": rows[k][1]})
    return out


def _write_log(out: Path, records):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "iterations.log", "w") as fh:
        fh.write("# step iteration residual energy\n")
        for step, it, res, en in records:
            fh.write(f"{step} {it} {res:.9e} {en:.9e}\n")


def _write_probe_table(path: Path, cfg, result, rows):
    names = list(cfg.probes)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "load_factor", "angle_rad"] + [f"{n}.u{i}" for n in names for i in (1, 2, 3)])
        for (step, probes), lam, ang in zip(rows, result.factors, result.angles):
            a = max((abs(v) for v in ang.values()), default=0.0)
            w.writerow([step, _fmt(lam), _fmt(a)] + [_fmt(x) for n in names for x in probes[n]["displacement"]])


def _write_turn_table(path: Path, cfg, turns):
    names = list(cfg.probes)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["turn"] + [f"{n}.u{i}" for n in names for i in (1, 2, 3)])
        for t in turns:
            w.writerow([t["turn"]] + [_fmt(x) for n in names for x in t["probes"][n]["displacement"]])


def run_modal(cfg: ScenarioConfig, out_dir: Path | None = None) -> dict:
    """Eigenvalues of the reduced tangent at the undeformed state with the consistent mass."""
    model, lc, _ = build_scenario(cfg)
    mc = cfg.modal or ModalCfg()
    K, M, _ = sv.modal_matrices(model, lc)
    w2, _ = sv.modal_analysis(K, M, mc.n_modes, mc.shift)
    freq = np.sqrt(np.clip(w2, 0, None)) / (2 * math.pi)
    summary = {"name": cfg.name, "omega2": w2.tolist(), "frequency_hz": freq.tolist()}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "eigenvalues.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["mode", "omega2", "frequency_hz"])
            for i, (a, f) in enumerate(zip(w2, freq), start=1):
                w.writerow([i, _fmt(a), _fmt(f)])
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _set_path(data: dict, dotted: str, value):
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        node = node[int(k)] if isinstance(node, list) else node.setdefault(k, {})
    last = keys[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value


def metric_value(summary: dict, metric: str) -> float:
    """Metric names: probe.<name>.u1|u2|u3, l2_error, tip_error.<i>, iterations.last, iterations.total."""
    parts = metric.split(".")
    if parts[0] == "probe" and len(parts) == 3 and parts[2] in ("u1", "u2", "u3"):
        return summary["probes"][parts[1]]["displacement"][int(parts[2][1]) - 1]
    if metric == "l2_error":
        return summary["metrics"]["l2_error"]
    if parts[0] == "tip_error" and len(parts) == 2:
        return summary["metrics"]["tip_error"][int(parts[1])]
    if metric == "iterations.last":
        return summary["iterations"][-1]
    if metric == "iterations.total":
        return summary["total_iterations"]
    raise ConfigError(f"unknown metric {metric!r}")


def run_sweep(cfg: ScenarioConfig, out_dir: Path | None = None) -> str:
    """Run every (row, column) combination; return the CSV text (and write it to out_dir)."""
    if cfg.sweep is None:
        raise ConfigError("sweep: section missing")
    sw = cfg.sweep
    base = cfg.model_dump(mode="json")
    base.pop("sweep")
    base["discretization"].pop("p_p", None)
    cols = [None] if sw.columns is None else list(range(len(sw.columns.values)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = [sw.rows.name] + ([sw.metric] if sw.columns is None else
                               [sw.columns.label(j) for j in cols])
    w.writerow(header)
    for i, rv in enumerate(sw.rows.values):
        line = [sw.rows.label(i)]
        for j in cols:
            data = copy.deepcopy(base)
            for k, v in zip(sw.rows.keys, rv):
                _set_path(data, k, v)
            if j is not None:
                for k, v in zip(sw.columns.keys, sw.columns.values[j]):
                    _set_path(data, k, v)
            case = validate_config(data)
            try:
                line.append(_fmt(float(metric_value(run_scenario(case), sw.metric))))
            except (sv.NonConvergenceError, np.linalg.LinAlgError) as exc:
                log.warning("sweep cell %s / %s failed: %s", sw.rows.label(i),
                            "-" if j is None else sw.columns.label(j), exc)
                line.append("diverged")
        w.writerow(line)
    text = buf.getvalue()
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{cfg.name}.csv").write_text(text)
    return text


# ---------------------------------------------------------------------------
# command line


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="dirbeam", description="Mixed isogeometric beam solver with extensible directors.")
    ap.add_argument("--out", type=Path, default=None, help="output directory for reports")
    ap.add_argument("--log-level", default="WARNING", help="logging level (DEBUG, INFO, ...)")
    ap.add_argument("--seed", type=int, default=None, help="reserved; runs are deterministic")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "solve a scenario"), ("sweep", "run a parameter study"),
                           ("modal", "eigenvalues at the undeformed state")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="YAML file or preset name")
    pp = sub.add_parser("presets", help="preset configurations")
    pp.add_argument("action", choices=["list", "show"])
    pp.add_argument("name", nargs="?")
    args = ap.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")

    try:
        if args.command == "presets":
            if args.action == "list":
                for n in preset_names():
                    print(n)
            else:
                if args.name is None:
                    ap.error("presets show needs a name")
                print(dump_config(load_config(args.name)), end="")
            return 0
        cfg = load_config(args.config)
        if args.command == "run":
            summary = run_scenario(cfg, args.out)
            print(json.dumps({k: summary[k] for k in ("name", "iterations", "probes", "metrics")}, indent=2))
        elif args.command == "modal":
            summary = run_modal(cfg, args.out)
            for i, (a, f) in enumerate(zip(summary["omega2"], summary["frequency_hz"]), start=1):
                print(f"{i:3d} {a: .9e} {f: .9e}")
        else:
            print(run_sweep(cfg, args.out), end="")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except sv.NonConvergenceError as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
