import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dirbeam.section import (
    CrossSection,
    Material,
    MaterialStateError,
    constitutive_blocks,
    line_response,
    material_response,
    section_operators,
    voigt_strain_transform,
)

STVK = Material("stvk", 2.0e5, 0.3)
NH = Material("neohooke", 2.0e5, 0.3)


def voigt(E):
    return np.array([E[0, 0], E[1, 1], E[2, 2], 2 * E[0, 1], 2 * E[0, 2], 2 * E[1, 2]])


def straight_ops(section, n=1):
    t = np.tile([1.0, 0, 0], (n, 1))
    D = np.tile([[0, 0, 1.0], [0, -1.0, 0]], (n, 1, 1))
    return section_operators(section, t, D, np.zeros_like(D))


def test_uniaxial_stvk_nu_zero():
    mat = Material("stvk", 1.2e7, 0.0)
    e = 1e-3
    psi, S, _ = material_response(mat, [0, 0, e, 0, 0, 0])
    assert S[2] == pytest.approx(mat.E * e)
    assert psi == pytest.approx(mat.E * e**2 / 2)
    np.testing.assert_allclose(np.delete(S, 2), 0, atol=1e-20)


def test_lame_constants():
    assert STVK.lam == pytest.approx(2e5 * 0.3 / (1.3 * 0.4))
    assert STVK.mu == pytest.approx(2e5 / 2.6)
    with pytest.raises(ValueError):
        Material("stvk", -1.0, 0.3)
    with pytest.raises(ValueError):
        Material("stvk", 1.0, 0.5)
    with pytest.raises(ValueError):
        Material("ogden", 1.0, 0.3)


@settings(max_examples=40, deadline=None)
@given(E=arrays(float, 6, elements=st.floats(-0.15, 0.15)), kind=st.sampled_from(["stvk", "neohooke"]))
def test_stress_and_tangent_match_finite_differences(E, kind):
    mat = STVK if kind == "stvk" else NH
    psi, S, C = material_response(mat, E)
    h = 1e-7
    for a in range(6):
        dE = np.zeros(6)
        dE[a] = h
        pp, Sp, _ = material_response(mat, E + dE)
        pm, Sm, _ = material_response(mat, E - dE)
        assert (pp - pm) / (2 * h) == pytest.approx(S[a], rel=1e-5, abs=1e-3)
        np.testing.assert_allclose((Sp - Sm) / (2 * h), C[:, a], rtol=1e-5, atol=1e-2)
    np.testing.assert_allclose(C, C.T, rtol=1e-12, atol=1e-8)


def test_neohooke_reference_state_and_small_strain_limit():
    psi, S, C = material_response(NH, np.zeros(6))
    assert psi == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(S, 0, atol=1e-9)
    np.testing.assert_allclose(C, material_response(STVK, np.zeros(6))[2], rtol=1e-12)


def test_neohooke_rejects_inverted_state():
    with pytest.raises(MaterialStateError):
        material_response(NH, [-0.6, 0, 0, 0, 0, 0])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_voigt_strain_transform(seed):
    r = np.random.default_rng(seed)
    Q = r.normal(size=(3, 3))
    A = r.normal(size=(3, 3))
    E = A + A.T
    T = voigt_strain_transform(Q)
    np.testing.assert_allclose(T @ voigt(E), voigt(Q.T @ E @ Q), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(voigt_strain_transform(np.eye(3)), np.eye(6), atol=1e-15)


def test_section_quadrature_moments():
    sec = CrossSection(0.3, 0.7, n_quad=3)
    z1, z2, w = sec.quadrature()
    assert w.sum() == pytest.approx(0.21)
    assert (w * z1**2).sum() == pytest.approx(0.7 * 0.3**3 / 12)
    assert (w * z2**2).sum() == pytest.approx(0.3 * 0.7**3 / 12)
    assert abs((w * z1 * z2).sum()) < 1e-15


def test_axial_response_of_straight_section():
    sec = CrossSection(0.2, 0.5)
    mat = Material("stvk", 1.0e4, 0.0)
    ops = straight_ops(sec)
    e = 1e-3
    eps = np.zeros((1, 15))
    eps[0, 0] = e
    _, d_eps, d_alpha = line_response(ops, mat, eps, np.zeros((1, 9)))
    assert d_eps[0, 0] == pytest.approx(mat.E * 0.1 * e)
    np.testing.assert_allclose(d_alpha, 0, atol=1e-12)
    Cee, Cae, Caa = constitutive_blocks(ops, mat, np.zeros((1, 15)), np.zeros((1, 9)))
    assert Cee[0, 0, 0] == pytest.approx(mat.E * 0.1)
    # odd section moments vanish: no coupling of axial strain with linear in-plane modes
    assert abs(Cae[0, 0, 0]) < 1e-10 and abs(Cae[0, 1, 0]) < 1e-10


def test_section_gradients_match_finite_differences():
    sec = CrossSection(0.3, 0.2)
    ops = straight_ops(sec)
    r = np.random.default_rng(3)
    eps = 0.02 * r.normal(size=(1, 15))
    alpha = 0.02 * r.normal(size=(1, 9))
    for mat in (STVK, NH):
        _, de, da = line_response(ops, mat, eps, alpha)
        Cee, Cae, Caa = constitutive_blocks(ops, mat, eps, alpha)
        h = 1e-7
        for k in range(15):
            d = np.zeros((1, 15))
            d[0, k] = h
            fp = line_response(ops, mat, eps + d, alpha)
            fm = line_response(ops, mat, eps - d, alpha)
            assert (fp[0] - fm[0])[0] / (2 * h) == pytest.approx(de[0, k], rel=1e-5, abs=1e-6)
            np.testing.assert_allclose((fp[1] - fm[1])[0] / (2 * h), Cee[0, :, k], rtol=1e-5, atol=1e-2)
            np.testing.assert_allclose((fp[2] - fm[2])[0] / (2 * h), Cae[0, :, k], rtol=1e-5, atol=1e-2)
        for k in range(9):
            d = np.zeros((1, 9))
            d[0, k] = h
            fp = line_response(ops, mat, eps, alpha + d)
            fm = line_response(ops, mat, eps, alpha - d)
            np.testing.assert_allclose((fp[2] - fm[2])[0] / (2 * h), Caa[0, :, k], rtol=1e-5, atol=1e-2)


def test_metric_transform_is_identity_for_straight_beams():
    sec = CrossSection(0.3, 0.2)
    ops = straight_ops(sec)
    from dirbeam.section import amat

    for k in range(len(ops.z1)):
        np.testing.assert_allclose(ops.A[0, k], amat(ops.z1[k], ops.z2[k]), atol=1e-15)
