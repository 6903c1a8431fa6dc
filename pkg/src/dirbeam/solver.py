"""Model assembly, boundary conditions, loads, Newton continuation and modal analysis."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import brentq
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import joints as jt
from .element import (
    DegreePolicy,
    ElementKinematics,
    ElementState,
    eas_operator,
    element_system,
    full_matrix,
    physical_operator,
    recover_internal,
    stacked_residual,
    static_condense,
    update_state,
)
from .section import CrossSection, Material, N_STRAIN, section_operators
from .splines import (
    KnotVector,
    NurbsCurve,
    bspline_ders,
    gauss_legendre,
    mesh_elements,
    rational_ders,
    refine,
)

log = logging.getLogger(__name__)

__all__ = [
    "Discretization",
    "PatchGeometry",
    "Patch",
    "Model",
    "ModelState",
    "DofMap",
    "EndLoad",
    "FollowerMoment",
    "DistributedLoad",
    "EndConstraint",
    "PrescribedRotation",
    "Stage",
    "LoadCase",
    "NewtonSettings",
    "NonConvergenceError",
    "SolveResult",
    "build_model",
    "assemble",
    "external_loads",
    "newton_solve",
    "newton_increment",
    "monolithic_increment",
    "constrained_dofs",
    "modal_matrices",
    "mass_matrix",
    "modal_analysis",
    "l2_error",
    "relative_tip_error",
    "probe",
    "euler_bernoulli_free_free",
]


class NonConvergenceError(RuntimeError):
    def __init__(self, message, log_records=None):
        super().__init__(message)
        self.log = log_records or []


# ---------------------------------------------------------------------------
# discretization and model


@dataclass(frozen=True)
class Discretization:
    p: int
    n_el: int
    p_d: int | None = None
    policy: str = "loc-ur"
    n_gauss: int | None = None
    eas: bool = True
    formulation: str = "mixed"  # or "displacement"
    continuity: str = "max"  # or "c0" for FEA-like meshes

    def __post_init__(self):
        if self.p_d is None:
            object.__setattr__(self, "p_d", max(1, self.p - 1))
        if self.formulation not in ("mixed", "displacement"):
            raise ValueError(f"unknown formulation {self.formulation!r}")
        if self.continuity not in ("max", "c0"):
            raise ValueError(f"unknown continuity {self.continuity!r}")
        if self.n_el < 1:
            raise ValueError("need at least one element")
        DegreePolicy(self.policy, self.p, self.p_d)

    @property
    def gauss(self) -> int:
        return self.p + 1 if self.n_gauss is None else self.n_gauss

    @property
    def degree_policy(self) -> DegreePolicy:
        return DegreePolicy(self.policy, self.p, self.p_d)


@dataclass(frozen=True)
class PatchGeometry:
    """Initial axis curve and the section directors at its start."""

    curve: NurbsCurve
    D0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "D0", np.asarray(self.D0, dtype=float).reshape(2, 3))


@dataclass
class Patch:
    geometry: PatchGeometry
    axis: NurbsCurve
    dir_kv: KnotVector
    dir_weights: np.ndarray
    elements: list[ElementKinematics]
    end_directors: dict  # "left"/"right" -> (2, 3)
    end_tangents: dict
    xi_gauss: list  # per element quadrature parameters

    @property
    def n_cp(self) -> int:
        return self.axis.knot_vector.n_cp

    @property
    def n_cpd(self) -> int:
        return self.dir_kv.n_cp

    def end_cp(self, end: str, director: bool = False) -> int:
        n = self.n_cpd if director else self.n_cp
        return 0 if end == "left" else n - 1


def _interior_multiset(kv: KnotVector) -> list[float]:
    return list(kv.interior_knots())


def _knots_to_insert(existing: list[float], target: list[float]) -> list[float]:
    pool = list(existing)
    out = []
    for u in target:
        if u in pool:
            pool.remove(u)
        else:
            out.append(u)
    if pool:
        raise ValueError("geometry has interior knots that are not part of the requested mesh")
    return out


def _director_space(geom: NurbsCurve, disc: Discretization, targets: list[float]):
    pd = disc.p_d
    a, b = geom.knot_vector.domain
    mult_d = pd if disc.continuity == "c0" else 1
    distinct = sorted(set(targets))
    interior = [u for u in distinct for _ in range(mult_d)]
    if geom.is_rational and pd >= geom.degree:
        curve = refine(geom, pd, _knots_to_insert(_interior_multiset(elevate_kv(geom, pd)), interior))
        return curve.knot_vector, curve.weights
    kv = KnotVector(pd, np.concatenate([np.full(pd + 1, a), interior, np.full(pd + 1, b)]))
    return kv, np.ones(kv.n_cp)


def elevate_kv(curve: NurbsCurve, degree: int) -> KnotVector:
    return refine(curve, degree).knot_vector


def _span_of(kv: KnotVector, a: float, b: float) -> int:
    U = kv.knots
    for i in range(kv.degree, kv.n_cp):
        if U[i] == a and U[i + 1] == b:
            return i
    raise ValueError("director mesh does not share the element spans")


def build_patch(geom: PatchGeometry, disc: Discretization, section: CrossSection) -> Patch:
    g = geom.curve
    a, b = g.knot_vector.domain
    mult = disc.p if disc.continuity == "c0" else 1
    cuts = list(np.linspace(a, b, disc.n_el + 1)[1:-1])
    targets = [u for u in cuts for _ in range(mult)]
    elevated = refine(g, disc.p)
    axis = refine(g, disc.p, _knots_to_insert(_interior_multiset(elevated.knot_vector), targets))
    dkv, dw = _director_space(g, disc, targets)
    spans = mesh_elements(axis.knot_vector)
    if len(spans) != disc.n_el:
        raise ValueError("mesh construction produced an unexpected number of elements")

    gp, gw = gauss_legendre(disc.gauss)
    xi_all = [a + (gp + 1) * (x2 - x1) / 2 + (x1 - a) for x1, x2, _ in spans]
    flat = np.concatenate([[a], np.concatenate(xi_all), [b]])
    order = np.argsort(flat, kind="stable")
    frames_sorted = jt.smallest_rotation_frame(g, geom.D0, flat[order])
    frames = np.empty_like(frames_sorted)
    frames[order] = frames_sorted
    end_dirs = {"left": frames[0], "right": frames[-1]}
    end_tan = {"left": _tangent(g, a), "right": _tangent(g, b)}

    p, pd = disc.p, disc.p_d
    policy = disc.degree_policy
    raw = []
    for e, (x1, x2, span) in enumerate(spans):
        dspan = _span_of(dkv, x1, x2)
        xs = xi_all[e]
        h = (x2 - x1) / 2
        n = xs.size
        N = np.empty((n, p + 1)); Nx = np.empty((n, p + 1))
        Nd = np.empty((n, pd + 1)); Ndx = np.empty((n, pd + 1))
        t = np.empty((n, 3)); D = frames[1 + e * n : 1 + (e + 1) * n]
        Ds = np.empty((n, 2, 3)); jac = np.empty(n)
        for k, x in enumerate(xs):
            _, R = axis.basis_ders(x, 2, span)
            P = axis.control_points[span - p : span + 1]
            X1, X2 = R[1] @ P, R[2] @ P
            jac[k] = np.linalg.norm(X1)
            if jac[k] <= 0:
                raise ValueError(f"vanishing tangent at xi={x}")
            t[k] = X1 / jac[k]
            ts = (X2 - t[k] * (t[k] @ X2)) / jac[k] ** 2
            Ds[k] = [-(Da @ ts) * t[k] for Da in D[k]]
            N[k], Nx[k] = R[0], R[1]
            _, Rd = rational_ders(dkv, dw, x, 1, dspan)
            Nd[k], Ndx[k] = Rd[0], Rd[1]
        raw.append(dict(
            axis_idx=np.arange(span - p, span + 1), dir_idx=np.arange(dspan - pd, dspan + 1),
            wj=gw * h * jac, N=N, Ns=Nx / jac[:, None], Nd=Nd, Nds=Ndx / jac[:, None],
            t=t, D=D.copy(), Ds=Ds, xbar=gp.copy(), boundary=(e == 0 or e == len(spans) - 1),
        ))

    if disc.formulation == "mixed" and disc.policy == "glo":
        elements = [_global_element(raw, axis, dkv, disc, section, cuts)]
    else:
        elements = []
        for r in raw:
            ops = section_operators(section, r["t"], r["D"], r["Ds"])
            L = None
            if disc.formulation == "mixed":
                L = physical_operator(policy.component_degrees(r["boundary"]), r["xbar"])
            La = eas_operator(r["xbar"]) if disc.eas else None
            elements.append(ElementKinematics(
                r["axis_idx"], r["dir_idx"], r["wj"], r["N"], r["Ns"], r["Nd"], r["Nds"],
                r["t"], r["D"], r["Ds"], ops, L, La))
    return Patch(geom, axis, dkv, dw, elements, end_dirs, end_tan, xi_all)


def _global_element(raw, axis, dkv, disc, section, cuts):
    """Single integration domain spanning the patch with continuous physical fields."""
    n_cp, n_cpd = axis.knot_vector.n_cp, dkv.n_cp
    pp = disc.p - 1
    a, b = axis.knot_vector.domain
    pkv = KnotVector(pp, np.concatenate([np.full(pp + 1, a), cuts, np.full(pp + 1, b)]))
    ng = len(raw[0]["wj"])
    n_tot = ng * len(raw)
    N = np.zeros((n_tot, n_cp)); Ns = np.zeros((n_tot, n_cp))
    Nd = np.zeros((n_tot, n_cpd)); Nds = np.zeros((n_tot, n_cpd))
    Lsc = np.zeros((n_tot, pkv.n_cp))
    La = np.zeros((n_tot, 9, 18 * len(raw))) if disc.eas else None
    for e, r in enumerate(raw):
        rows = slice(e * ng, (e + 1) * ng)
        N[rows, r["axis_idx"]] = r["N"]; Ns[rows, r["axis_idx"]] = r["Ns"]
        Nd[rows, r["dir_idx"]] = r["Nd"]; Nds[rows, r["dir_idx"]] = r["Nds"]
        x1, x2 = cuts_span(cuts, a, b, e)
        for k, xb in enumerate(r["xbar"]):
            x = x1 + (xb + 1) * (x2 - x1) / 2
            span, B = bspline_ders(pkv, x, 0)
            Lsc[e * ng + k, span - pp : span + 1] = B[0]
        if La is not None:
            La[rows, :, 18 * e : 18 * (e + 1)] = eas_operator(r["xbar"])
    L = np.zeros((n_tot, N_STRAIN, N_STRAIN * pkv.n_cp))
    for c in range(N_STRAIN):
        L[:, c, c * pkv.n_cp : (c + 1) * pkv.n_cp] = Lsc
    cat = lambda k: np.concatenate([r[k] for r in raw])
    t, D, Ds = cat("t"), cat("D"), cat("Ds")
    return ElementKinematics(np.arange(n_cp), np.arange(n_cpd), cat("wj"), N, Ns, Nd, Nds, t, D, Ds,
                             section_operators(section, t, D, Ds), L, La)


def cuts_span(cuts, a, b, e):
    pts = [a] + list(cuts) + [b]
    return pts[e], pts[e + 1]


def _tangent(curve, xi):
    d = curve.derivatives(xi, 1)[1]
    return d / np.linalg.norm(d)


# ---------------------------------------------------------------------------
# DOF bookkeeping


@dataclass
class DofMap:
    axis: list  # per patch (n_cp, 3) int arrays
    director: list  # per patch (n_cpd, 6)
    n_dof: int
    joint_slots: dict  # (patch, dir cp) -> joint index
    fictitious: list


def build_dofmap(patches: Sequence[Patch], joints: Sequence[jt.JointSpec]) -> DofMap:
    alias_axis = {}
    joint_of = {}
    for k, j in enumerate(joints):
        owner = j.members[0]
        for pid, end in j.members:
            cp = patches[pid].end_cp(end, director=True)
            if (pid, cp) in joint_of:
                raise ValueError("patch end listed in two joints")
            joint_of[(pid, cp)] = k
            if (pid, end) != owner:
                alias_axis[(pid, patches[pid].end_cp(end))] = (owner[0], patches[owner[0]].end_cp(owner[1]))
    counter = 0
    axis = []
    director = []
    theta = {}
    fict = []
    for pid, patch in enumerate(patches):
        a = np.empty((patch.n_cp, 3), dtype=int)
        for i in range(patch.n_cp):
            if (pid, i) in alias_axis:
                opid, oi = alias_axis[(pid, i)]
                if opid > pid:
                    raise ValueError("the first joint member must be the lowest patch index")
                a[i] = axis[opid][oi]
            else:
                a[i] = np.arange(counter, counter + 3)
                counter += 3
        axis.append(a)
        d = np.empty((patch.n_cpd, 6), dtype=int)
        for i in range(patch.n_cpd):
            k = joint_of.get((pid, i))
            if k is None:
                d[i] = np.arange(counter, counter + 6)
                counter += 6
                continue
            if k not in theta:
                theta[k] = np.arange(counter, counter + 3)
                counter += 3
            d[i, :3] = theta[k]
            d[i, 3:] = np.arange(counter, counter + 3)
            fict.append(counter + 2)
            counter += 3
        director.append(d)
    for patch_id, patch in enumerate(patches):
        for e in patch.elements:
            hits = [i for i in e.dir_idx if (patch_id, i) in joint_of]
            if len(hits) > 1:
                raise ValueError("an element may carry at most one joint end")
    return DofMap(axis, director, counter, joint_of, fict)


# ---------------------------------------------------------------------------
# state


@dataclass
class ModelState:
    phi: list
    dbar: list
    internal: list

    def copy(self) -> "ModelState":
        return ModelState([p.copy() for p in self.phi], [d.copy() for d in self.dbar],
                          [[s.copy() for s in ss] for ss in self.internal])


@dataclass
class Model:
    patches: list[Patch]
    joints: list[jt.JointSpec]
    section: CrossSection
    material: Material
    disc: Discretization
    dofmap: DofMap

    def initial_state(self) -> ModelState:
        return ModelState(
            [p.axis.control_points.copy() for p in self.patches],
            [np.zeros((p.n_cpd, 6)) for p in self.patches],
            [[ElementState.zeros(k) for k in p.elements] for p in self.patches],
        )

    def element_dofs(self, pid: int, kin: ElementKinematics) -> np.ndarray:
        dm = self.dofmap
        return np.concatenate([dm.axis[pid][kin.axis_idx].ravel(), dm.director[pid][kin.dir_idx].ravel()])

    def element_y(self, state: ModelState, pid: int, kin: ElementKinematics) -> np.ndarray:
        return np.concatenate([state.phi[pid][kin.axis_idx].ravel(), state.dbar[pid][kin.dir_idx].ravel()])

    def joint_slot(self, pid: int, kin: ElementKinematics):
        for pos, i in enumerate(kin.dir_idx):
            if (pid, i) in self.dofmap.joint_slots:
                return 3 * kin.N.shape[1] + 6 * pos, i
        return None

    def directors_at_cp(self, state: ModelState, pid: int, cp: int, end: str):
        D = self.patches[pid].end_directors[end]
        return D + state.dbar[pid][cp].reshape(2, 3)


def build_model(geometries: Sequence[PatchGeometry], disc: Discretization, section: CrossSection,
                material: Material, joints: Sequence[jt.JointSpec] = ()) -> Model:
    patches = [build_patch(g, disc, section) for g in geometries]
    if joints and disc.policy == "glo":
        raise ValueError("patch-global physical fields are not supported together with joints")
    for j in joints:
        pts = [patches[pid].axis.control_points[patches[pid].end_cp(end)] for pid, end in j.members]
        if max(np.linalg.norm(q - pts[0]) for q in pts) > 1e-9 * (1 + np.linalg.norm(pts[0])):
            raise ValueError("joint members do not share an end point")
    return Model(patches, list(joints), section, material, disc, build_dofmap(patches, joints))


# ---------------------------------------------------------------------------
# loads and constraints


@dataclass(frozen=True)
class EndLoad:
    """Dead boundary resultants (force n0 and director couples m1, m2) at a patch end."""

    patch: int
    end: str
    force: tuple = (0.0, 0.0, 0.0)
    couple1: tuple = (0.0, 0.0, 0.0)
    couple2: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class FollowerMoment:
    """End moment from a linear axial traction M*zeta_b/I_b that follows the section normal."""

    patch: int
    end: str
    magnitude: float
    director: int = 1


@dataclass(frozen=True)
class DistributedLoad:
    patch: int
    force: tuple = (0.0, 0.0, 0.0)
    couple1: tuple = (0.0, 0.0, 0.0)
    couple2: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class EndConstraint:
    """Fixed components at a patch end: names phi, d1, d2 or single components like d1.z."""

    patch: int
    end: str
    fix: tuple


@dataclass(frozen=True)
class PrescribedRotation:
    patch: int
    end: str
    axis: tuple
    angle: float  # radians per step


@dataclass(frozen=True)
class Stage:
    steps: int
    load: tuple = (0.0, 1.0)  # load factor at stage start and end
    rotation: PrescribedRotation | None = None


@dataclass
class LoadCase:
    end_loads: list = field(default_factory=list)
    follower_moments: list = field(default_factory=list)
    distributed: list = field(default_factory=list)
    constraints: list = field(default_factory=list)
    stages: list = field(default_factory=lambda: [Stage(1)])


_COMPONENT = {"x": 0, "y": 1, "z": 2}


def constrained_dofs(model: Model, lc: LoadCase) -> np.ndarray:
    fixed = np.zeros(model.dofmap.n_dof, dtype=bool)
    fixed[model.dofmap.fictitious] = True
    for c in lc.constraints:
        patch = model.patches[c.patch]
        if (c.patch, patch.end_cp(c.end, True)) in model.dofmap.joint_slots:
            raise ValueError("constraints at joint ends are not supported")
        a = model.dofmap.axis[c.patch][patch.end_cp(c.end)]
        d = model.dofmap.director[c.patch][patch.end_cp(c.end, True)]
        for name in c.fix:
            base, _, comp = name.partition(".")
            if base == "phi":
                idx = a
            elif base == "d1":
                idx = d[:3]
            elif base == "d2":
                idx = d[3:]
            else:
                raise ValueError(f"unknown constraint component {name!r}")
            if comp:
                if comp not in _COMPONENT:
                    raise ValueError(f"unknown constraint component {name!r}")
                idx = idx[[_COMPONENT[comp]]]
            fixed[idx] = True
    return fixed


def _end_gauss(model, pid, end):
    patch = model.patches[pid]
    return patch.end_cp(end), patch.end_cp(end, True)


def external_loads(model: Model, lc: LoadCase, state: ModelState, factor: float):
    """Full-length external load vector and its derivative with respect to the unknowns."""
    dm = model.dofmap
    F = np.zeros(dm.n_dof)
    Kl = {}  # (row dofs, col dofs) -> block
    for ld in lc.end_loads:
        cp, dcp = _end_gauss(model, ld.patch, ld.end)
        if (ld.patch, dcp) in dm.joint_slots:
            raise ValueError("loads at joint ends are not supported")
        F[dm.axis[ld.patch][cp]] += factor * np.asarray(ld.force, dtype=float)
        F[dm.director[ld.patch][dcp][:3]] += factor * np.asarray(ld.couple1, dtype=float)
        F[dm.director[ld.patch][dcp][3:]] += factor * np.asarray(ld.couple2, dtype=float)
    for fm in lc.follower_moments:
        cp, dcp = _end_gauss(model, fm.patch, fm.end)
        if (fm.patch, dcp) in dm.joint_slots:
            raise ValueError("loads at joint ends are not supported")
        d = model.directors_at_cp(state, fm.patch, dcp, fm.end)
        c = np.cross(d[0], d[1])
        nc = np.linalg.norm(c)
        a = c / nc
        M = factor * fm.magnitude
        dofs = dm.director[fm.patch][dcp]
        target = dofs[:3] if fm.director == 1 else dofs[3:]
        F[target] += M * a
        P = (np.eye(3) - np.outer(a, a)) / nc
        Kl[(tuple(target), tuple(dofs[:3]))] = -M * P @ jt.skew(d[1])
        Kl[(tuple(target), tuple(dofs[3:]))] = M * P @ jt.skew(d[0])
    for dl in lc.distributed:
        patch = model.patches[dl.patch]
        q = np.concatenate([dl.force, dl.couple1, dl.couple2]).astype(float) * factor
        for kin in patch.elements:
            gd = model.element_dofs(dl.patch, kin)
            ne = kin.N.shape[1]
            fe = np.zeros(kin.m_e)
            fe[: 3 * ne] = np.einsum("n,ni,k->ik", kin.wj, kin.N, q[:3]).ravel()
            fd = np.zeros((kin.Nd.shape[1], 6))
            fd[:, :3] = np.einsum("n,ni,k->ik", kin.wj, kin.Nd, q[3:6])
            fd[:, 3:] = np.einsum("n,ni,k->ik", kin.wj, kin.Nd, q[6:9])
            fe[3 * ne :] = fd.ravel()
            if model.joint_slot(dl.patch, kin) is not None and np.any(q[3:]):
                raise ValueError("distributed couples on elements with joints are not supported")
            np.add.at(F, gd, fe)
    return F, Kl


# ---------------------------------------------------------------------------
# assembly


@dataclass
class _ElementRecord:
    pid: int
    index: int
    dofs: np.ndarray
    system: object
    Xi: np.ndarray | None


def assemble(model: Model, state: ModelState, include_internal: bool = True):
    """Condensed global tangent (sparse, full size) and internal force; plus per-element records."""
    n = model.dofmap.n_dof
    rows, cols, vals = [], [], []
    Fint = np.zeros(n)
    records = []
    for pid, patch in enumerate(model.patches):
        for k, kin in enumerate(patch.elements):
            y = model.element_y(state, pid, kin)
            s = element_system(kin, y, state.internal[pid][k], model.material)
            Ke, Fe = static_condense(s)
            Xi = None
            slot = model.joint_slot(pid, kin)
            if slot is not None:
                off, cp = slot
                end = "left" if cp == 0 else "right"
                d = model.directors_at_cp(state, pid, cp, end)
                Ke, Fe, Xi = jt.transform_element(Ke, Fe, off, d[0], d[1], s.f_y)
            dofs = model.element_dofs(pid, kin)
            rows.append(np.repeat(dofs, dofs.size))
            cols.append(np.tile(dofs, dofs.size))
            vals.append(Ke.ravel())
            np.add.at(Fint, dofs, Fe)
            records.append(_ElementRecord(pid, k, dofs, s, Xi))
    K = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsr()
    return K, Fint, records


def _apply_load_tangent(K, Kl, n):
    if not Kl:
        return K
    rows, cols, vals = [], [], []
    for (r, c), blk in Kl.items():
        rows.append(np.repeat(r, len(c)))
        cols.append(np.tile(c, len(r)))
        vals.append(-blk.ravel())
    extra = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return (K + extra).tocsr()


def _solve(K, R):
    if R.size == 0:
        return R.copy()
    try:
        lu = spla.splu(K.tocsc())
        x = lu.solve(R)
    except RuntimeError as exc:
        raise np.linalg.LinAlgError(f"singular reduced tangent: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise np.linalg.LinAlgError("singular reduced tangent")
    return x


def _update(model: Model, state: ModelState, records, dfull):
    for rec in records:
        dy = dfull[rec.dofs]
        if rec.Xi is not None:
            dy = rec.Xi @ dy
        de, dr, da = recover_internal(rec.system, dy)
        update_state(state.internal[rec.pid][rec.index], de, dr, da)
    dm = model.dofmap
    for pid, patch in enumerate(model.patches):
        state.phi[pid] += dfull[dm.axis[pid]]
        for i in range(patch.n_cpd):
            dofs = dm.director[pid][i]
            if (pid, i) in dm.joint_slots:
                end = "left" if i == 0 else "right"
                D = patch.end_directors[end]
                d = D + state.dbar[pid][i].reshape(2, 3)
                d1, d2 = jt.update_joint_state(d[0], d[1], dfull[dofs[:3]], dfull[dofs[3:5]])
                state.dbar[pid][i] = np.concatenate([d1 - D[0], d2 - D[1]])
            else:
                state.dbar[pid][i] += dfull[dofs]


def newton_increment(model: Model, state: ModelState, lc: LoadCase, factor: float, fixed: np.ndarray):
    """One condensed Newton update in place; returns (residual norm, energy norm, increment)."""
    K, Fint, records = assemble(model, state)
    Fext, Kl = external_loads(model, lc, state, factor)
    K = _apply_load_tangent(K, Kl, model.dofmap.n_dof)
    free = ~fixed
    R = (Fext - Fint)[free]
    dfree = _solve(K[free][:, free], R)
    dfull = np.zeros(model.dofmap.n_dof)
    dfull[free] = dfree
    _update(model, state, records, dfull)
    return float(np.linalg.norm(R)), float(abs(dfree @ R)), dfull, float(np.linalg.norm(Fext[free]))


def monolithic_increment(model: Model, state: ModelState, lc: LoadCase, factor: float, fixed: np.ndarray):
    """One Newton update of the uncondensed saddle-point system, in place.

    Reference path for checking static condensation: the element fields r, e and alpha stay
    global unknowns. Joints are not supported here.
    """
    if model.joints:
        raise ValueError("the monolithic path does not handle joints")
    n = model.dofmap.n_dof
    blocks, offsets, total = [], [], n
    for pid, patch in enumerate(model.patches):
        for k, kin in enumerate(patch.elements):
            s = element_system(kin, model.element_y(state, pid, kin), state.internal[pid][k], model.material)
            m_int = (2 * s.k_re.shape[0] if s.mixed else 0) + (s.k_aa.shape[0] if s.has_eas else 0)
            blocks.append((pid, k, model.element_dofs(pid, kin), s))
            offsets.append(total)
            total += m_int
    K = np.zeros((total, total))
    f = np.zeros(total)
    for (pid, k, dofs, s), off in zip(blocks, offsets):
        if s.mixed:
            Kf, ff = full_matrix(s), stacked_residual(s)
        else:
            Kf, ff = s.k_yy, s.f_y
            if s.has_eas:
                Kf = np.block([[s.k_yy, s.k_ay.T], [s.k_ay, s.k_aa]])
                ff = np.concatenate([s.f_y, s.f_a])
        idx = np.concatenate([dofs, np.arange(off, off + Kf.shape[0] - dofs.size)])
        K[np.ix_(idx, idx)] += Kf
        np.add.at(f, idx, ff)
    Fext, Kl = external_loads(model, lc, state, factor)
    for (r, c), blk in Kl.items():
        K[np.ix_(r, c)] -= blk
    R = -f
    R[:n] += Fext
    free = np.concatenate([~fixed, np.ones(total - n, dtype=bool)])
    d = np.zeros(total)
    d[free] = np.linalg.solve(K[np.ix_(free, free)], R[free])
    dm = model.dofmap
    for (pid, k, dofs, s), off in zip(blocks, offsets):
        st = state.internal[pid][k]
        if s.mixed:
            mp = s.k_re.shape[0]
            st.r += d[off : off + mp]
            st.e += d[off + mp : off + 2 * mp]
            off += 2 * mp
        if s.has_eas:
            st.alpha += d[off : off + s.k_aa.shape[0]]
    for pid in range(len(model.patches)):
        state.phi[pid] += d[dm.axis[pid]]
        state.dbar[pid] += d[dm.director[pid]]
    return d[:n]


@dataclass
class NewtonSettings:
    """Convergence: energy below energy_tol times the largest first-iteration energy of the run,
    or residual below residual_tol times max(external load norm, largest first residual);
    the absolute floors cover restarts from an equilibrium state. A residual below
    roundoff_factor * eps * max|K| * model size is indistinguishable from zero and also counts."""

    max_iter: int = 50
    residual_tol: float = 1e-9
    energy_tol: float = 1e-12
    residual_atol: float = 0.0
    energy_atol: float = 0.0
    divergence: float = 1e20
    roundoff_factor: float = 10.0

    def __post_init__(self):
        if self.max_iter < 1 or self.residual_tol <= 0 or self.energy_tol <= 0 or self.divergence <= 1:
            raise ValueError("invalid Newton settings")
        if self.residual_atol < 0 or self.energy_atol < 0 or self.roundoff_factor < 0:
            raise ValueError("absolute tolerances must be non-negative")

    def converged(self, res, energy, e_ref, r_ref, fext, r_floor=0.0) -> bool:
        if res == 0.0 and energy == 0.0:
            return True
        return (energy <= max(self.energy_tol * e_ref, self.energy_atol)
                or res <= max(self.residual_tol * max(fext, r_ref), self.residual_atol, r_floor))


@dataclass
class SolveResult:
    states: list  # converged state after each step
    log: list  # (step, iteration, residual, energy)
    iterations: list  # per step
    factors: list
    angles: list


def roundoff_scale(model: Model) -> float:
    """eps * max|K| * model size at the reference state: the force level of assembly roundoff."""
    K, _, _ = assemble(model, model.initial_state())
    size = max(1.0, max(float(np.abs(model.patches[p].axis.control_points).max()) for p in range(len(model.patches))))
    return float(np.finfo(float).eps * abs(K).max() * size)


def _set_prescribed(model: Model, state: ModelState, rot: PrescribedRotation, angle: float):
    patch = model.patches[rot.patch]
    dcp = patch.end_cp(rot.end, True)
    D = patch.end_directors[rot.end]
    axis = np.asarray(rot.axis, dtype=float)
    Q = jt.rodrigues_exp(angle * axis / np.linalg.norm(axis))
    state.dbar[rot.patch][dcp] = (D @ Q.T - D).ravel()


def newton_solve(model: Model, lc: LoadCase, settings: NewtonSettings | None = None,
                 state: ModelState | None = None,
                 on_step: Callable | None = None) -> SolveResult:
    """Incremental-iterative solution over all load stages."""
    settings = settings or NewtonSettings()
    state = model.initial_state() if state is None else state.copy()
    fixed = constrained_dofs(model, lc)
    records = []
    result = SolveResult([], records, [], [], [])
    r_floor = settings.roundoff_factor * roundoff_scale(model)
    e_ref = 0.0
    r_ref = 0.0
    step = 0
    angle = {}
    turns = {}
    for stage in lc.stages:
        if stage.rotation is not None:
            rot = stage.rotation
            patch = model.patches[rot.patch]
            d = model.dofmap.director[rot.patch][patch.end_cp(rot.end, True)]
            if not fixed[d].all():
                raise ValueError("prescribed rotation requires both directors fixed at that end")
        for k in range(1, stage.steps + 1):
            step += 1
            lam = stage.load[0] + (stage.load[1] - stage.load[0]) * k / stage.steps
            if stage.rotation is not None:
                key = (stage.rotation.patch, stage.rotation.end)
                # count steps instead of summing increments, so full turns stay exact
                counts = turns.setdefault(key, {})
                counts[stage.rotation.angle] = counts.get(stage.rotation.angle, 0) + 1
                angle[key] = sum(inc * n for inc, n in counts.items())
                _set_prescribed(model, state, stage.rotation, math.remainder(angle[key], 2 * math.pi))
            r_first = None
            for it in range(1, settings.max_iter + 1):
                res, energy, _, fext = newton_increment(model, state, lc, lam, fixed)
                records.append((step, it, res, energy))
                log.debug("step %d iter %d residual %.3e energy %.3e", step, it, res, energy)
                if not (np.isfinite(res) and np.isfinite(energy)):
                    raise NonConvergenceError(f"non-finite residual at step {step}", records)
                if it == 1:
                    r_first = res
                    e_ref = max(e_ref, energy)
                    r_ref = max(r_ref, res)
                if res > settings.divergence * max(r_first, fext, 1e-300):
                    raise NonConvergenceError(f"divergence at step {step}, iteration {it}", records)
                if settings.converged(res, energy, e_ref, r_ref, fext, r_floor):
                    break
            else:
                raise NonConvergenceError(f"no convergence in {settings.max_iter} iterations at step {step}", records)
            result.iterations.append(it)
            result.factors.append(lam)
            result.angles.append(dict(angle))
            result.states.append(state.copy())
            if on_step is not None:
                on_step(step, state)
    return result


# ---------------------------------------------------------------------------
# postprocessing


def probe(model: Model, state: ModelState, pid: int, xi: float | str):
    """Current position and displacement of the axis at parameter xi (or 'start'/'end')."""
    patch = model.patches[pid]
    a, b = patch.axis.knot_vector.domain
    x = {"start": a, "end": b}.get(xi, xi) if isinstance(xi, str) else xi
    span, R = patch.axis.basis_ders(float(x), 0)
    idx = np.arange(span - patch.axis.degree, span + 1)
    pos = R[0] @ state.phi[pid][idx]
    return pos, pos - R[0] @ patch.axis.control_points[idx]


def l2_error(model: Model, state: ModelState, pid: int, u_ref: Callable, component: int = 0) -> float:
    """Relative L2 error of one displacement component along the initial arc length."""
    patch = model.patches[pid]
    num = den = 0.0
    s0 = 0.0
    for kin in patch.elements:
        X = kin.N @ patch.axis.control_points[kin.axis_idx]
        u = kin.N @ state.phi[pid][kin.axis_idx] - X
        ur = np.array([u_ref(Xk) for Xk in X])
        num += kin.wj @ (u[:, component] - ur) ** 2
        den += kin.wj @ ur**2
    if den == 0:
        raise ValueError("reference solution has zero norm")
    return float(np.sqrt(num / den))


def relative_tip_error(u, u_ref):
    u = np.asarray(u, dtype=float)
    u_ref = np.asarray(u_ref, dtype=float)
    if np.any(u_ref == 0):
        raise ValueError("reference component is zero")
    return np.abs((u - u_ref) / u_ref)


def mass_matrix(model: Model) -> sp.csr_matrix:
    """Consistent mass matrix on the full DOF space (joint blocks linearized at the initial state)."""
    n = model.dofmap.n_dof
    rho = model.material.density
    rows, cols, vals = [], [], []
    for pid, patch in enumerate(model.patches):
        for kin in patch.elements:
            ops = kin.ops
            z1, z2 = ops.z1, ops.z2
            rA = rho * ops.jw.sum(1)
            I1 = rho * ops.jw @ z1
            I2 = rho * ops.jw @ z2
            I11 = rho * ops.jw @ (z1 * z1)
            I22 = rho * ops.jw @ (z2 * z2)
            I12 = rho * ops.jw @ (z1 * z2)
            small = np.array([[rA, I1, I2], [I1, I11, I12], [I2, I12, I22]]).transpose(2, 0, 1)
            Irho = np.einsum("nij,kl->nikjl", small, np.eye(3)).reshape(-1, 9, 9)
            ne, ned = kin.N.shape[1], kin.Nd.shape[1]
            Ne = np.zeros((len(kin.wj), 9, kin.m_e))
            eye = np.eye(3)
            for I in range(ne):
                Ne[:, 0:3, 3 * I : 3 * I + 3] = kin.N[:, I, None, None] * eye
            for J in range(ned):
                c = 3 * ne + 6 * J
                Ne[:, 3:6, c : c + 3] = kin.Nd[:, J, None, None] * eye
                Ne[:, 6:9, c + 3 : c + 6] = kin.Nd[:, J, None, None] * eye
            Me = np.einsum("n,nim,nij,njk->mk", kin.wj, Ne, Irho, Ne)
            slot = model.joint_slot(pid, kin)
            if slot is not None:
                off, cp = slot
                D = patch.end_directors["left" if cp == 0 else "right"]
                X = np.eye(kin.m_e)
                X[off : off + 6, off : off + 6] = jt.xi_transform(D[0], D[1])[1]
                Me = X.T @ Me @ X
            dofs = model.element_dofs(pid, kin)
            rows.append(np.repeat(dofs, dofs.size))
            cols.append(np.tile(dofs, dofs.size))
            vals.append(Me.ravel())
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsr()


def modal_analysis(K, M, n_modes: int | None = None, shift: float | None = None):
    """Lowest eigenpairs of K v = w2 M v, ascending, mass-normalized modes.

    Solved in shift-inverted form M v = mu (K - shift M) v with mu = 1 / (w2 - shift), which
    keeps the near-zero rigid modes resolvable next to the very stiff director stretch modes.
    The default shift is negative and scaled to the matrices, so K - shift M is positive definite.
    """
    Kd = K.toarray() if sp.issparse(K) else np.array(K, dtype=float)
    Md = M.toarray() if sp.issparse(M) else np.array(M, dtype=float)
    n = Kd.shape[0]
    if n == 0:
        return np.zeros(0), np.zeros((0, 0))
    Kd = 0.5 * (Kd + Kd.T)
    Md = 0.5 * (Md + Md.T)
    dm = np.diag(Md)
    if np.any(dm <= 0):
        raise np.linalg.LinAlgError("mass matrix is not positive definite on the reduced space")
    if shift is None:
        shift = -1e-3 * float(np.median(np.abs(np.diag(Kd)) / dm))
        shift = shift if shift < 0 else -1.0
    k = n if n_modes is None else min(n_modes, n)
    try:
        mu, V = scipy.linalg.eigh(Md, Kd - shift * Md, subset_by_index=(n - k, n - 1))
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"eigensolver breakdown: {exc}") from exc
    keep = mu > 0
    w2 = shift + 1.0 / mu[keep]
    V = V[:, keep]
    order = np.argsort(w2)
    w2, V = w2[order], V[:, order]
    V = V / np.sqrt(np.einsum("ij,ik,kj->j", V, Md, V))
    return w2, V


def modal_matrices(model: Model, lc: LoadCase | None = None, state: ModelState | None = None):
    """Reduced tangent and mass matrices at a state (undeformed by default) plus the free DOF mask."""
    state = model.initial_state() if state is None else state
    K, _, _ = assemble(model, state)
    M = mass_matrix(model)
    free = ~constrained_dofs(model, lc or LoadCase())
    return K[free][:, free], M[free][:, free], free


def euler_bernoulli_free_free(n: int, L: float, EI: float, rhoA: float) -> np.ndarray:
    """First n nonzero free-free circular frequencies from cos(bL) cosh(bL) = 1."""
    f = lambda x: np.cos(x) * np.cosh(x) - 1.0
    roots = []
    for k in range(1, n + 1):
        lo, hi = (k + 0.5) * np.pi - 0.5, (k + 0.5) * np.pi + 0.5
        roots.append(brentq(f, lo, hi, xtol=1e-15))
    beta = np.array(roots) / L
    return beta**2 * np.sqrt(EI / rhoA)
