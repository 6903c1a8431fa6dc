"""Rectangular cross-sections, hyperelastic materials and section-integrated response.

Strain and stress arrays use Voigt order ``[11, 22, 33, 12, 13, 23]`` with
engineering shear strains and tensor shear stresses. Index 3 is the axial
direction, 1 and 2 span the section along the two directors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .splines import gauss_legendre

__all__ = [
    "CrossSection",
    "Material",
    "MaterialStateError",
    "material_response",
    "amat",
    "gmat",
    "voigt_strain_transform",
    "initial_metrics",
    "SectionOperators",
    "section_operators",
    "line_response",
    "constitutive_blocks",
    "N_STRAIN",
    "N_EAS",
]

N_STRAIN = 15
N_EAS = 9

# Voigt index -> tensor index pair
VOIGT = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


class MaterialStateError(ArithmeticError):
    """Deformation outside the admissible range of the material model."""


@dataclass(frozen=True)
class CrossSection:
    h1: float
    h2: float
    n_quad: int = 3

    def __post_init__(self):
        if self.h1 <= 0 or self.h2 <= 0:
            raise ValueError("section dimensions must be positive")

    @property
    def area(self) -> float:
        return self.h1 * self.h2

    def quadrature(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Tensor Gauss rule: arrays ``z1, z2, w`` of length n_quad**2."""
        g, w = gauss_legendre(self.n_quad)
        z1 = np.repeat(g * self.h1 / 2, self.n_quad)
        z2 = np.tile(g * self.h2 / 2, self.n_quad)
        ww = np.outer(w * self.h1 / 2, w * self.h2 / 2).ravel()
        return z1, z2, ww


@dataclass(frozen=True)
class Material:
    kind: str
    E: float
    nu: float
    density: float = 1.0

    def __post_init__(self):
        if self.kind not in ("stvk", "neohooke"):
            raise ValueError(f"unknown material kind {self.kind!r}")
        if self.E <= 0 or not (-1 < self.nu < 0.5):
            raise ValueError("need E > 0 and -1 < nu < 0.5")

    @property
    def lam(self) -> float:
        return self.E * self.nu / ((1 + self.nu) * (1 - 2 * self.nu))

    @property
    def mu(self) -> float:
        return self.E / (2 * (1 + self.nu))


def _voigt_to_tensor(E: np.ndarray) -> np.ndarray:
    T = np.empty(E.shape[:-1] + (3, 3))
    for a, (i, j) in enumerate(VOIGT):
        v = E[..., a] if i == j else E[..., a] / 2
        T[..., i, j] = v
        T[..., j, i] = v
    return T


def _tensor_to_voigt(S: np.ndarray) -> np.ndarray:
    return np.stack([S[..., i, j] for i, j in VOIGT], axis=-1)


def _fourth_to_voigt(C: np.ndarray) -> np.ndarray:
    out = np.empty(C.shape[:-4] + (6, 6))
    for a, (i, j) in enumerate(VOIGT):
        for b, (k, l) in enumerate(VOIGT):
            out[..., a, b] = C[..., i, j, k, l]
    return out


def material_response(mat: Material, E_voigt):
    """Energy density, second Piola-Kirchhoff stress and tangent for Voigt strain(s).

    Accepts a single 6-array or a stack ``(..., 6)``.
    """
    E = np.asarray(E_voigt, dtype=float)
    lam, mu = mat.lam, mat.mu
    if mat.kind == "stvk":
        tr = E[..., 0] + E[..., 1] + E[..., 2]
        sq = (E[..., :3] ** 2).sum(-1) + 0.5 * (E[..., 3:] ** 2).sum(-1)
        psi = 0.5 * lam * tr**2 + mu * sq
        S = np.empty_like(E)
        S[..., :3] = lam * tr[..., None] + 2 * mu * E[..., :3]
        S[..., 3:] = mu * E[..., 3:]
        C = np.zeros(E.shape[:-1] + (6, 6))
        C[..., :3, :3] = lam
        for a in range(3):
            C[..., a, a] += 2 * mu
            C[..., 3 + a, 3 + a] = mu
        return psi, S, C

    Cg = np.eye(3) + 2 * _voigt_to_tensor(E)
    det = np.linalg.det(Cg)
    if np.any(det <= 0) or not np.all(np.isfinite(det)):
        raise MaterialStateError("right Cauchy-Green tensor is not positive definite")
    lnJ = 0.5 * np.log(det)
    Ci = np.linalg.inv(Cg)
    trC = np.trace(Cg, axis1=-2, axis2=-1)
    psi = 0.5 * mu * (trC - 3) - mu * lnJ + 0.5 * lam * lnJ**2
    S = mu * (np.eye(3) - Ci) + (lam * lnJ)[..., None, None] * Ci
    c4 = lam * np.einsum("...ij,...kl->...ijkl", Ci, Ci)
    sym = 0.5 * (np.einsum("...ik,...jl->...ijkl", Ci, Ci) + np.einsum("...il,...jk->...ijkl", Ci, Ci))
    c4 = c4 + 2 * (mu - lam * lnJ)[..., None, None, None, None] * sym
    return psi, _tensor_to_voigt(S), _fourth_to_voigt(c4)


def amat(z1: float, z2: float) -> np.ndarray:
    """Map from the 15 beam strains to Voigt Green-Lagrange strain at (z1, z2)."""
    A = np.zeros((6, N_STRAIN))
    A[0, 12] = 1.0
    A[1, 13] = 1.0
    A[2, :6] = [1.0, z1, z2, z1 * z1, z2 * z2, z1 * z2]
    A[3, 14] = 1.0
    A[4, [6, 8, 9]] = [1.0, z1, z2]
    A[5, [7, 10, 11]] = [1.0, z1, z2]
    return A


def gmat(z1: float, z2: float) -> np.ndarray:
    """Enhanced in-plane section strains: linear and bilinear modes for E11, E22, 2E12."""
    G = np.zeros((6, N_EAS))
    modes = [z1, z2, z1 * z2]
    G[0, 0:3] = modes
    G[1, 3:6] = modes
    G[3, 6:9] = modes
    return G


def voigt_strain_transform(Q: np.ndarray) -> np.ndarray:
    """Matrix T with ``voigt(Q^T E Q) = T @ voigt(E)`` for engineering-shear Voigt vectors."""
    T = np.zeros((6, 6))
    for a, (i, j) in enumerate(VOIGT):
        scale = 1.0 if i == j else 2.0
        for b, (k, l) in enumerate(VOIGT):
            if k == l:
                c = Q[k, i] * Q[l, j]
            else:
                c = 0.5 * (Q[k, i] * Q[l, j] + Q[l, i] * Q[k, j])
            T[a, b] = scale * c
    return T


def initial_metrics(t, D, Ds, z1: float, z2: float):
    """Covariant basis (columns G1, G2, G3) and jacobian j0 at a section point.

    ``t`` is the unit axis tangent, ``D``/``Ds`` the two directors and their arc-length
    derivatives (shape (2, 3)).
    """
    G = np.column_stack([D[0], D[1], t + z1 * Ds[0] + z2 * Ds[1]])
    j0 = float(np.dot(np.cross(G[:, 0], G[:, 1]), G[:, 2]))
    if j0 <= 0:
        raise ValueError(f"non-positive volume jacobian j0={j0}")
    return G, j0


@dataclass
class SectionOperators:
    """Per axis point: section quadrature with strain maps pulled into a local orthonormal frame.

    Arrays have a leading axis over axis points and a second axis over section points.
    """

    A: np.ndarray  # (n, q, 6, 15)
    G: np.ndarray  # (n, q, 6, 9)
    jw: np.ndarray  # (n, q) j0 * weight
    z1: np.ndarray  # (q,)
    z2: np.ndarray  # (q,)


def section_operators(section: CrossSection, t, D, Ds) -> SectionOperators:
    """Precompute metric-corrected strain maps for a batch of axis points.

    ``t`` (n, 3), ``D`` and ``Ds`` (n, 2, 3). The covariant strain components are
    converted to components in the orthonormal frame (D1, D2, t) before the
    material law is applied; for straight beams the conversion is the identity.
    """
    z1, z2, w = section.quadrature()
    n, q = len(t), len(w)
    A = np.empty((n, q, 6, N_STRAIN))
    Gm = np.empty((n, q, 6, N_EAS))
    jw = np.empty((n, q))
    for g in range(n):
        R = np.vstack([D[g, 0], D[g, 1], t[g]])
        for k in range(q):
            Gcov, j0 = initial_metrics(t[g], D[g], Ds[g], z1[k], z2[k])
            T = voigt_strain_transform(np.linalg.inv(Gcov) @ R.T)
            A[g, k] = T @ amat(z1[k], z2[k])
            Gm[g, k] = T @ gmat(z1[k], z2[k])
            jw[g, k] = j0 * w[k]
    return SectionOperators(A, Gm, jw, z1, z2)


def _strains(ops: SectionOperators, eps_p, alpha):
    E = ops.A @ np.atleast_2d(eps_p)[:, None, :, None]
    if alpha is not None:
        E = E + ops.G @ np.atleast_2d(alpha)[:, None, :, None]
    return E[..., 0]


def _integrate(X, Y, C, jw):
    """sum_q jw X^T C Y over section points, per axis point."""
    n, q, a, i = X.shape
    CY = (C @ Y) * jw[:, :, None, None]
    Xt = X.transpose(0, 3, 1, 2).reshape(n, i, q * a)
    return Xt @ CY.reshape(n, q * a, -1)


def line_response(ops: SectionOperators, mat: Material, eps_p, alpha=None):
    """Line energy density and its gradients with respect to beam strains and EAS parameters."""
    energy, d_eps, d_alpha, *_ = section_response(ops, mat, eps_p, alpha)
    return energy, d_eps, d_alpha


def constitutive_blocks(ops: SectionOperators, mat: Material, eps_p, alpha=None):
    """Section-integrated tangents (C_ee, C_ae, C_aa)."""
    return section_response(ops, mat, eps_p, alpha)[3:]


def section_response(ops: SectionOperators, mat: Material, eps_p, alpha=None):
    """Everything at once: (psi, d_eps, d_alpha, C_ee, C_ae, C_aa), one material call."""
    E = _strains(ops, eps_p, alpha)
    psi, S, C = material_response(mat, E)
    energy = (psi * ops.jw).sum(1)
    Sw = (S * ops.jw[:, :, None])[..., None]
    d_eps = (ops.A.transpose(0, 1, 3, 2) @ Sw)[..., 0].sum(1)
    d_alpha = (ops.G.transpose(0, 1, 3, 2) @ Sw)[..., 0].sum(1)
    Cee = _integrate(ops.A, ops.A, C, ops.jw)
    Cae = _integrate(ops.G, ops.A, C, ops.jw)
    Caa = _integrate(ops.G, ops.G, C, ops.jw)
    return energy, d_eps, d_alpha, Cee, Cae, Caa
