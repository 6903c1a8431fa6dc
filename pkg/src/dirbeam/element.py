"""Mixed beam element with extensible directors.

Element unknowns are the axis control points ``phi_I`` (3 each) and the director
displacement control points ``dbar_J = [dbar_1J, dbar_2J]`` (6 each). Physical
stress resultants, physical strains and EAS parameters live element-wise on
discontinuous Lagrange bases and are eliminated by static condensation.

Beam strain order (15):
``[eps, rho1, rho2, k11, k22, 2k12, delta1, delta2, g11, g12, g21, g22, chi11, chi22, 2chi12]``
with ``g_ab = d_a . d_b,s``. Resultants use the same order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .section import N_EAS, N_STRAIN, Material, SectionOperators, section_response
from .splines import LagrangeBasis, lagrange_eval

__all__ = [
    "DegreePolicy",
    "degree_table",
    "ElementKinematics",
    "ElementState",
    "ElementSystem",
    "CondensationError",
    "physical_operator",
    "eas_operator",
    "evaluate_fields",
    "geometric_strains",
    "strain_variation",
    "btotal",
    "geometric_stiffness",
    "element_system",
    "element_vectors",
    "element_stiffness",
    "static_condense",
    "recover_internal",
    "update_state",
    "full_matrix",
    "stacked_residual",
    "postprocess_resultants",
    "STRAIN_GROUPS",
]

STRAIN_GROUPS = ("eps", "rho", "rho", "kappa", "kappa", "kappa", "delta", "delta",
                 "gamma", "gamma", "gamma", "gamma", "chi", "chi", "chi")

# Selectively reduced degrees, p = 2..10, as (interior, boundary element)
_SR_TABLE = {
    "eps":   [(0, 1), (0, 1), (0, 1), (1, 1), (1, 1), (1, 1), (1, 1), (1, 1), (2, 2)],
    "rho":   [(1, 1), (1, 1), (2, 2), (2, 2), (2, 2), (2, 2), (2, 2), (2, 2), (3, 3)],
    "kappa": [(1, 1), (1, 1), (2, 2), (2, 2), (2, 2), (2, 2), (2, 2), (2, 2), (3, 3)],
    "delta": [(0, 1), (0, 1), (0, 2), (1, 2), (1, 2), (1, 2), (1, 2), (1, 2), (2, 2)],
    "gamma": [(0, 1), (0, 1), (0, 1), (0, 1), (0, 1), (0, 1), (1, 1), (1, 2), (2, 2)],
    "chi":   [(0, 0), (0, 0), (0, 1), (0, 0), (1, 1), (1, 1), (1, 1), (1, 1), (2, 2)],
}

POLICIES = ("glo", "loc", "loc-ur", "loc-sr")


class CondensationError(np.linalg.LinAlgError):
    pass


def degree_table(p: int, component: int, boundary: bool = False) -> int:
    """Selectively reduced degree for strain component ``component`` (1..15)."""
    if not 2 <= p <= 10:
        raise ValueError(f"selective reduction tabulated for p in 2..10, got {p}")
    if not 1 <= component <= N_STRAIN:
        raise ValueError("component index must be in 1..15")
    interior, bnd = _SR_TABLE[STRAIN_GROUPS[component - 1]][p - 2]
    return bnd if boundary else interior


@dataclass(frozen=True)
class DegreePolicy:
    mode: str
    p: int
    p_d: int

    def __post_init__(self):
        if self.mode not in POLICIES:
            raise ValueError(f"unknown policy {self.mode!r}")
        if self.p < 1 or not 1 <= self.p_d <= self.p:
            raise ValueError(f"need 1 <= p_d <= p, got p={self.p}, p_d={self.p_d}")

    def component_degrees(self, boundary: bool = False) -> tuple[int, ...]:
        if self.mode in ("loc", "glo"):
            return (self.p - 1,) * N_STRAIN
        if self.mode == "loc-ur":
            return (1,) * N_STRAIN
        return tuple(degree_table(self.p, c + 1, boundary) for c in range(N_STRAIN))


def physical_operator(degrees, xbar) -> np.ndarray:
    """Block-diagonal Lagrange operator (n, 15, sum(degrees+1)) at local coordinates ``xbar``."""
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    sizes = [d + 1 for d in degrees]
    L = np.zeros((xbar.size, len(degrees), sum(sizes)))
    off = 0
    cache = {}
    for c, d in enumerate(degrees):
        if d not in cache:
            cache[d] = lagrange_eval(LagrangeBasis(d), xbar)
        L[:, c, off : off + d + 1] = cache[d]
        off += d + 1
    return L


def eas_operator(xbar) -> np.ndarray:
    """Linear Lagrange interpolation for the nine EAS parameters."""
    return physical_operator((1,) * N_EAS, xbar)


@dataclass
class ElementKinematics:
    """Quadrature data of one element (or, for the patch-global policy, one patch)."""

    axis_idx: np.ndarray
    dir_idx: np.ndarray
    wj: np.ndarray  # quadrature weight times ds/dxi
    N: np.ndarray
    Ns: np.ndarray
    Nd: np.ndarray
    Nds: np.ndarray
    t: np.ndarray  # initial unit tangent (n, 3)
    D: np.ndarray  # initial directors (n, 2, 3)
    Ds: np.ndarray
    ops: SectionOperators
    L: np.ndarray | None  # physical fields (n, 15, m_p); None for displacement-based
    La: np.ndarray | None  # EAS (n, 9, m_a); None without EAS
    Y: np.ndarray = field(init=False)

    def __post_init__(self):
        n, ne = self.N.shape
        ned = self.Nd.shape[1]
        Y = np.zeros((n, 15, self.m_e))
        eye = np.eye(3)
        for I in range(ne):
            Y[:, 0:3, 3 * I : 3 * I + 3] = self.Ns[:, I, None, None] * eye
        base = 3 * ne
        for J in range(ned):
            c1 = base + 6 * J
            c2 = c1 + 3
            Y[:, 3:6, c1 : c1 + 3] = self.Nds[:, J, None, None] * eye
            Y[:, 6:9, c2 : c2 + 3] = self.Nds[:, J, None, None] * eye
            Y[:, 9:12, c1 : c1 + 3] = self.Nd[:, J, None, None] * eye
            Y[:, 12:15, c2 : c2 + 3] = self.Nd[:, J, None, None] * eye
        self.Y = Y

    @property
    def m_e(self) -> int:
        return 3 * self.N.shape[1] + 6 * self.Nd.shape[1]

    @property
    def m_p(self) -> int:
        return 0 if self.L is None else self.L.shape[2]

    @property
    def m_a(self) -> int:
        return 0 if self.La is None else self.La.shape[2]

    def split(self, y):
        ne = self.N.shape[1]
        return y[: 3 * ne].reshape(ne, 3), y[3 * ne :].reshape(-1, 2, 3)


@dataclass
class ElementState:
    r: np.ndarray
    e: np.ndarray
    alpha: np.ndarray

    @classmethod
    def zeros(cls, kin: ElementKinematics) -> "ElementState":
        return cls(np.zeros(kin.m_p), np.zeros(kin.m_p), np.zeros(kin.m_a))

    def copy(self) -> "ElementState":
        return ElementState(self.r.copy(), self.e.copy(), self.alpha.copy())


def evaluate_fields(kin: ElementKinematics, y):
    """Axis tangent, directors and director derivatives at the quadrature points."""
    phi, dbar = kin.split(np.asarray(y, dtype=float))
    phis = kin.Ns @ phi
    d = kin.D + np.einsum("nj,jak->nak", kin.Nd, dbar)
    ds = kin.Ds + np.einsum("nj,jak->nak", kin.Nds, dbar)
    return phis, d, ds


def geometric_strains(phis, d, ds, t, D, Ds) -> np.ndarray:
    """Beam strains (n, 15) from current and initial fields."""
    dot = lambda a, b: np.einsum("...k,...k->...", a, b)
    out = np.empty(phis.shape[:-1] + (N_STRAIN,))
    out[..., 0] = 0.5 * (dot(phis, phis) - dot(t, t))
    for a in range(2):
        out[..., 1 + a] = dot(phis, ds[..., a, :]) - dot(t, Ds[..., a, :])
        out[..., 6 + a] = dot(phis, d[..., a, :]) - dot(t, D[..., a, :])
    out[..., 3] = 0.5 * (dot(ds[..., 0, :], ds[..., 0, :]) - dot(Ds[..., 0, :], Ds[..., 0, :]))
    out[..., 4] = 0.5 * (dot(ds[..., 1, :], ds[..., 1, :]) - dot(Ds[..., 1, :], Ds[..., 1, :]))
    out[..., 5] = dot(ds[..., 0, :], ds[..., 1, :]) - dot(Ds[..., 0, :], Ds[..., 1, :])
    for k, (a, b) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        out[..., 8 + k] = dot(d[..., a, :], ds[..., b, :]) - dot(D[..., a, :], Ds[..., b, :])
    out[..., 12] = 0.5 * (dot(d[..., 0, :], d[..., 0, :]) - dot(D[..., 0, :], D[..., 0, :]))
    out[..., 13] = 0.5 * (dot(d[..., 1, :], d[..., 1, :]) - dot(D[..., 1, :], D[..., 1, :]))
    out[..., 14] = dot(d[..., 0, :], d[..., 1, :]) - dot(D[..., 0, :], D[..., 1, :])
    return out


def strain_variation(phis, d, ds) -> np.ndarray:
    """Matrix (n, 15, 15) taking [dphi_s, dd1_s, dd2_s, dd1, dd2] to strain variations."""
    n = phis.shape[0]
    G = np.zeros((n, N_STRAIN, 15))
    P, S1, S2, D1, D2 = range(0, 15, 3)

    def put(row, col, v):
        G[:, row, col : col + 3] = v

    d1, d2, d1s, d2s = d[:, 0], d[:, 1], ds[:, 0], ds[:, 1]
    put(0, P, phis)
    put(1, P, d1s); put(1, S1, phis)
    put(2, P, d2s); put(2, S2, phis)
    put(3, S1, d1s)
    put(4, S2, d2s)
    put(5, S1, d2s); put(5, S2, d1s)
    put(6, P, d1); put(6, D1, phis)
    put(7, P, d2); put(7, D2, phis)
    put(8, S1, d1); put(8, D1, d1s)
    put(9, S2, d1); put(9, D1, d2s)
    put(10, S1, d2); put(10, D2, d1s)
    put(11, S2, d2); put(11, D2, d2s)
    put(12, D1, d1)
    put(13, D2, d2)
    put(14, D1, d2); put(14, D2, d1)
    return G


def btotal(kin: ElementKinematics, y) -> np.ndarray:
    phis, d, ds = evaluate_fields(kin, y)
    return strain_variation(phis, d, ds) @ kin.Y


# Hessian pattern of each strain with respect to the five field vectors
_HESS = np.zeros((N_STRAIN, 5, 5))
for _c, _pairs in enumerate([
    [(0, 0)], [(0, 1)], [(0, 2)], [(1, 1)], [(2, 2)], [(1, 2)], [(0, 3)], [(0, 4)],
    [(3, 1)], [(3, 2)], [(4, 1)], [(4, 2)], [(3, 3)], [(4, 4)], [(3, 4)],
]):
    for _i, _j in _pairs:
        _HESS[_c, _i, _j] = _HESS[_c, _j, _i] = 1.0


def geometric_stiffness(r) -> np.ndarray:
    """k_G (..., 15, 15) acting on [phi_s, d1_s, d2_s, d1, d2] for resultants ``r`` (..., 15)."""
    small = np.einsum("...c,cij->...ij", r, _HESS)
    return np.einsum("...ij,kl->...ikjl", small, np.eye(3)).reshape(small.shape[:-2] + (15, 15))


@dataclass
class ElementSystem:
    f_y: np.ndarray
    k_yy: np.ndarray
    f_r: np.ndarray | None = None
    f_e: np.ndarray | None = None
    f_a: np.ndarray | None = None
    k_ry: np.ndarray | None = None
    k_re: np.ndarray | None = None
    k_ee: np.ndarray | None = None
    k_ae: np.ndarray | None = None
    k_aa: np.ndarray | None = None
    k_ay: np.ndarray | None = None  # displacement-based EAS coupling

    @property
    def mixed(self) -> bool:
        return self.k_re is not None

    @property
    def has_eas(self) -> bool:
        return self.k_aa is not None


def _wvec(w, A, v):
    """sum_n w_n A_n^T v_n"""
    n, i, m = A.shape
    return (A.reshape(n * i, m).T @ (v * w[:, None]).reshape(n * i))


def _wmat(w, A, C, B):
    """sum_n w_n A_n^T C_n B_n (C may be None for the identity)"""
    n, i, m = A.shape
    CB = B if C is None else C @ B
    CB = CB * w[:, None, None]
    return A.reshape(n * i, m).T @ CB.reshape(n * i, -1)


def element_system(kin: ElementKinematics, y, state: ElementState, mat: Material) -> ElementSystem:
    """Element vectors and stiffness blocks at the current state."""
    phis, d, ds = evaluate_fields(kin, y)
    strains = geometric_strains(phis, d, ds, kin.t, kin.D, kin.Ds)
    B = strain_variation(phis, d, ds) @ kin.Y
    w = kin.wj
    alpha = None if kin.La is None else kin.La @ state.alpha

    if kin.L is None:
        # displacement-based: resultants from the geometric strains
        _, s_e, s_a, Cee, Cae, Caa = section_response(kin.ops, mat, strains, alpha)
        k_yy = _wmat(w, B, Cee, B) + _wmat(w, kin.Y, geometric_stiffness(s_e), kin.Y)
        sysm = ElementSystem(f_y=_wvec(w, B, s_e), k_yy=k_yy)
        if kin.La is not None:
            sysm.f_a = _wvec(w, kin.La, s_a)
            sysm.k_aa = _wmat(w, kin.La, Caa, kin.La)
            sysm.k_ay = _wmat(w, kin.La, Cae, B)
        return sysm

    L = kin.L
    rp = L @ state.r
    ep = L @ state.e
    _, s_e, s_a, Cee, Cae, Caa = section_response(kin.ops, mat, ep, alpha)
    sysm = ElementSystem(
        f_y=_wvec(w, B, rp),
        k_yy=_wmat(w, kin.Y, geometric_stiffness(rp), kin.Y),
        f_r=_wvec(w, L, strains - ep),
        f_e=_wvec(w, L, s_e - rp),
        k_ry=_wmat(w, L, None, B),
        k_re=-_wmat(w, L, None, L),
        k_ee=_wmat(w, L, Cee, L),
    )
    if kin.La is not None:
        La = kin.La
        sysm.f_a = _wvec(w, La, s_a)
        sysm.k_ae = _wmat(w, La, Cae, L)
        sysm.k_aa = _wmat(w, La, Caa, La)
    return sysm


def element_vectors(kin, y, state, mat):
    s = element_system(kin, y, state, mat)
    return s.f_y, s.f_r, s.f_e, s.f_a


def element_stiffness(kin, y, state, mat):
    s = element_system(kin, y, state, mat)
    return s.k_yy, s.k_ry, s.k_re, s.k_ee, s.k_ae, s.k_aa


def _solve(A, b, name):
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise CondensationError(f"singular block {name}") from exc


def static_condense(s: ElementSystem) -> tuple[np.ndarray, np.ndarray]:
    """Condensed element tangent and internal force on the displacement unknowns."""
    if not s.mixed:
        if not s.has_eas:
            return s.k_yy, s.f_y
        Z = _solve(s.k_aa, np.column_stack([s.k_ay, s.f_a]), "k_aa")
        return s.k_yy - s.k_ay.T @ Z[:, :-1], s.f_y - s.k_ay.T @ Z[:, -1]
    X = _solve(s.k_re, np.column_stack([s.k_ry, s.f_r]), "k_re")
    Xy, x = X[:, :-1], X[:, -1]
    kee = s.k_ee
    g = s.f_e - s.k_ee @ x
    if s.has_eas:
        Z = _solve(s.k_aa, np.column_stack([s.k_ae, s.f_a - s.k_ae @ x]), "k_aa")
        kee = kee - s.k_ae.T @ Z[:, :-1]
        g = g - s.k_ae.T @ Z[:, -1]
    return s.k_yy + Xy.T @ kee @ Xy, s.f_y - Xy.T @ g


def recover_internal(s: ElementSystem, dy):
    """Increments (de, dr, dalpha) of the condensed fields for a displacement increment."""
    if not s.mixed:
        da = -_solve(s.k_aa, s.f_a + s.k_ay @ dy, "k_aa") if s.has_eas else np.zeros(0)
        return np.zeros(0), np.zeros(0), da
    de = -_solve(s.k_re, s.f_r + s.k_ry @ dy, "k_re")
    rhs = s.f_e + s.k_ee @ de
    if s.has_eas:
        da = -_solve(s.k_aa, s.f_a + s.k_ae @ de, "k_aa")
        rhs = rhs + s.k_ae.T @ da
    else:
        da = np.zeros(0)
    dr = -_solve(s.k_re.T, rhs, "k_re")
    return de, dr, da


def update_state(state: ElementState, de, dr, da) -> None:
    if de.size:
        state.e += de
        state.r += dr
    if da.size:
        state.alpha += da


def full_matrix(s: ElementSystem) -> np.ndarray:
    """Uncondensed tangent in the unknown order [y, r, e, alpha]."""
    my, mp = s.k_yy.shape[0], s.k_re.shape[0]
    ma = s.k_aa.shape[0] if s.has_eas else 0
    n = my + 2 * mp + ma
    K = np.zeros((n, n))
    iy, ir, ie, ia = slice(0, my), slice(my, my + mp), slice(my + mp, my + 2 * mp), slice(my + 2 * mp, n)
    K[iy, iy] = s.k_yy
    K[iy, ir] = s.k_ry.T
    K[ir, iy] = s.k_ry
    K[ir, ie] = s.k_re
    K[ie, ir] = s.k_re.T
    K[ie, ie] = s.k_ee
    if ma:
        K[ie, ia] = s.k_ae.T
        K[ia, ie] = s.k_ae
        K[ia, ia] = s.k_aa
    return K


def stacked_residual(s: ElementSystem) -> np.ndarray:
    parts = [s.f_y, s.f_r, s.f_e]
    if s.has_eas:
        parts.append(s.f_a)
    return np.concatenate(parts)


def postprocess_resultants(kin: ElementKinematics, y, state: ElementState):
    """Stress resultant n, director couples m~^a and through-thickness resultants l^a at the quadrature points."""
    phis, d, ds = evaluate_fields(kin, y)
    r = np.einsum("nij,j->ni", kin.L, state.r)
    col = lambda k: r[:, k, None]
    n = col(0) * phis + col(1) * ds[:, 0] + col(2) * ds[:, 1] + col(6) * d[:, 0] + col(7) * d[:, 1]
    h = [[col(3), col(5)], [col(5), col(4)]]
    mab = [[col(8), col(9)], [col(10), col(11)]]
    lab = [[col(12), col(14)], [col(14), col(13)]]
    m = np.empty((len(r), 2, 3))
    l = np.empty((len(r), 2, 3))
    for a in range(2):
        m[:, a] = col(1 + a) * phis + sum(h[a][b] * ds[:, b] + mab[b][a] * d[:, b] for b in range(2))
        l[:, a] = col(6 + a) * phis + sum(lab[a][b] * d[:, b] + mab[a][b] * ds[:, b] for b in range(2))
    return n, m, l
