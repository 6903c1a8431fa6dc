"""Model builders and numerical utilities shared by the test modules."""

from __future__ import annotations

import math

import numpy as np

from dirbeam.element import element_system, full_matrix, stacked_residual
from dirbeam.joints import JointSpec
from dirbeam.section import CrossSection, Material
from dirbeam.solver import (
    Discretization,
    EndConstraint,
    EndLoad,
    FollowerMoment,
    LoadCase,
    PatchGeometry,
    PrescribedRotation,
    Stage,
    assemble,
    build_model,
)
from dirbeam.splines import circular_arc, straight_line

E_PB = 1.2e7
L_PB = 10.0


def pure_bending(p=2, p_d=1, n_el=10, h=1e-4, steps=10, policy="loc-ur", **disc):
    """Straight cantilever closed into a circle by a follower end moment."""
    EI = E_PB * 1.0 * h**3 / 12
    M = 2 * math.pi * EI / L_PB
    geom = PatchGeometry(straight_line([0, 0, 0], [L_PB, 0, 0]), [[0, 0, 1], [0, -1, 0]])
    model = build_model([geom], Discretization(p=p, p_d=p_d, n_el=n_el, policy=policy, **disc),
                        CrossSection(h, 1.0), Material("stvk", E_PB, 0.0))
    lc = LoadCase(follower_moments=[FollowerMoment(0, "right", M, 1)],
                  constraints=[EndConstraint(0, "left", ("phi", "d1.x", "d1.y", "d2"))],
                  stages=[Stage(steps)])
    radius = EI / M
    u_ref = lambda X: radius * math.sin(X[0] / radius) - X[0]
    return model, lc, u_ref


def arc45(p=4, p_d=3, n_el=80, policy="loc-ur", kind="stvk", nu=0.0, slenderness=100.0, steps=1, **disc):
    """45 degree arc cantilever, R = 100, square section, tip force F A = 7.2e3 d^4 / 12."""
    R = 100.0
    d = R / slenderness
    geom = PatchGeometry(circular_arc(R, math.pi / 4), [[-1, 0, 0], [0, 0, 1]])
    model = build_model([geom], Discretization(p=p, p_d=p_d, n_el=n_el, policy=policy, **disc),
                        CrossSection(d, d), Material(kind, 1e7, nu))
    lc = LoadCase(end_loads=[EndLoad(0, "right", force=(0, 0, 7.2e3 * d**4 / 12))],
                  constraints=[EndConstraint(0, "left", ("phi", "d1", "d2"))],
                  stages=[Stage(steps)])
    return model, lc


def lshape(turns=1, n_el=5, load_steps=5):
    """Two jointed patches; end load, then full turns of the root at 36 degrees per step."""
    h = w = 0.5
    T0 = -200.0
    geoms = [PatchGeometry(straight_line([0, 0, 0], [10, 0, 0]), [[0, 0, 1], [0, -1, 0]]),
             PatchGeometry(straight_line([10, 0, 0], [10, 10, 0]), [[0, 0, 1], [1, 0, 0]])]
    model = build_model(geoms, Discretization(p=3, p_d=2, n_el=n_el), CrossSection(h, w),
                        Material("neohooke", 1e7, 0.3), [JointSpec(((0, "right"), (1, "left")))])
    stages = [Stage(load_steps)]
    if turns:
        stages.append(Stage(10 * turns, (1, 1), PrescribedRotation(0, "left", (1, 0, 0), math.pi / 5)))
    lc = LoadCase(end_loads=[EndLoad(1, "right", force=(0, 0, T0 * w), couple1=(0, 0, T0 * w * h / 2))],
                  constraints=[EndConstraint(0, "left", ("phi", "d1", "d2"))],
                  stages=stages)
    return model, lc


def relax_internal(model, state, tol=1e-13, max_iter=30):
    """Solve the element-local field equations (r, e, alpha) at fixed displacements, in place."""
    for pid, patch in enumerate(model.patches):
        for k, kin in enumerate(patch.elements):
            st = state.internal[pid][k]
            if st.r.size == 0 and st.alpha.size == 0:
                continue
            for _ in range(max_iter):
                y = model.element_y(state, pid, kin)
                s = element_system(kin, y, st, model.material)
                my = y.size
                if s.mixed:
                    R = stacked_residual(s)[my:]
                    K = full_matrix(s)[my:, my:]
                else:
                    R, K = s.f_a, s.k_aa
                if np.linalg.norm(R) <= tol * max(1.0, np.abs(stacked_residual(s)).max()):
                    break
                dz = np.linalg.solve(K, -R)
                if s.mixed:
                    mp = st.r.size
                    st.r += dz[:mp]
                    st.e += dz[mp : 2 * mp]
                    st.alpha += dz[2 * mp :]
                else:
                    st.alpha += dz
    return state


def condensed_internal_force(model, state):
    relax_internal(model, state)
    return assemble(model, state)[1]
