"""B-spline and NURBS curves, k-refinement, arc length and element-local Lagrange bases.

Only clamped (open) knot vectors are supported. Basis evaluation follows the
half-open span convention ``[xi_i, xi_{i+1})`` with the last span closed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

__all__ = [
    "KnotVector",
    "NurbsCurve",
    "LagrangeBasis",
    "bspline_eval",
    "bspline_ders",
    "nurbs_eval",
    "arc_length_map",
    "refine",
    "elevate_degree",
    "insert_knot",
    "lagrange_eval",
    "mesh_elements",
    "uniform_knots",
    "gauss_legendre",
    "straight_line",
    "circular_arc",
]


class DomainError(ValueError):
    """Parameter outside the knot range."""


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss points and weights on [-1, 1]."""
    return np.polynomial.legendre.leggauss(n)


@dataclass(frozen=True)
class KnotVector:
    degree: int
    knots: np.ndarray

    def __post_init__(self):
        U = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", U)
        p = self.degree
        if p < 0:
            raise ValueError("degree must be non-negative")
        if np.any(np.diff(U) < 0):
            raise ValueError("knots must be nondecreasing")
        if U.size - p - 1 < p + 1:
            raise ValueError("too few knots for the requested degree")
        if np.any(U[: p + 1] != U[0]) or np.any(U[-p - 1 :] != U[-1]):
            raise ValueError("only clamped knot vectors are supported")
        if U[-1] <= U[0]:
            raise ValueError("knot vector spans an empty domain")

    @property
    def n_cp(self) -> int:
        return self.knots.size - self.degree - 1

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    def find_span(self, xi: float) -> int:
        """Index i with knots[i] <= xi < knots[i+1]; the last span is closed."""
        a, b = self.domain
        if not (a <= xi <= b):
            raise DomainError(f"xi={xi} outside [{a}, {b}]")
        if xi == b:
            return self.n_cp - 1
        return int(np.searchsorted(self.knots, xi, side="right") - 1)

    def interior_knots(self) -> np.ndarray:
        p = self.degree
        return self.knots[p + 1 : -p - 1]


def uniform_knots(degree: int, n_el: int, domain=(0.0, 1.0), multiplicity: int = 1) -> KnotVector:
    """Clamped knot vector with ``n_el`` equal spans."""
    a, b = domain
    inner = np.linspace(a, b, n_el + 1)[1:-1]
    U = np.concatenate([np.full(degree + 1, a), np.repeat(inner, multiplicity), np.full(degree + 1, b)])
    return KnotVector(degree, U)


def bspline_ders(kv: KnotVector, xi: float, n: int = 1, span: int | None = None):
    """Nonzero basis functions and their derivatives up to order ``n``.

    Returns ``(span, ders)`` where ``ders[k, j]`` is the k-th derivative of
    basis function ``span - p + j``.
    """
    p, U = kv.degree, kv.knots
    i = kv.find_span(xi) if span is None else span
    ndu = np.zeros((p + 1, p + 1))
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = xi - U[i + 1 - j]
        right[j] = U[i + j] - xi
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved
    ders = np.zeros((n + 1, p + 1))
    ders[0] = ndu[:, p]
    a = np.zeros((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, n + 1):
            d = 0.0
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    fac = p
    for k in range(1, n + 1):
        ders[k] *= fac
        fac *= p - k
    return i, ders


def bspline_eval(kv: KnotVector, xi: float):
    """Span index, values and first derivatives of the p+1 nonzero basis functions."""
    span, d = bspline_ders(kv, xi, 1)
    return span, d[0].copy(), d[1].copy()


@dataclass(frozen=True)
class NurbsCurve:
    knot_vector: KnotVector
    control_points: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.control_points, dtype=float))
        n = self.knot_vector.n_cp
        w = np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=float)
        if P.shape[0] != n or w.shape != (n,):
            raise ValueError(f"expected {n} control points and weights, got {P.shape[0]} and {w.shape}")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        object.__setattr__(self, "control_points", P)
        object.__setattr__(self, "weights", w)

    @property
    def degree(self) -> int:
        return self.knot_vector.degree

    @property
    def is_rational(self) -> bool:
        return not np.all(self.weights == self.weights[0])

    def basis_ders(self, xi: float, n: int = 1, span: int | None = None):
        """Rational basis functions and derivatives up to order n <= 2."""
        return rational_ders(self.knot_vector, self.weights, xi, n, span)

    def derivatives(self, xi: float, n: int = 1, span: int | None = None) -> np.ndarray:
        """Rows: X, X', ..., X^(n)."""
        i, R = self.basis_ders(xi, n, span)
        p = self.degree
        return R @ self.control_points[i - p : i + 1]

    def __call__(self, xi: float) -> np.ndarray:
        return self.derivatives(xi, 0)[0]


def rational_ders(kv: KnotVector, w: np.ndarray, xi: float, n: int = 1, span: int | None = None):
    if n > 2:
        raise ValueError("rational derivatives implemented up to second order")
    i, B = bspline_ders(kv, xi, n, span)
    p = kv.degree
    ww = w[i - p : i + 1]
    A = B * ww
    W = A.sum(axis=1)
    R = np.empty_like(A)
    R[0] = A[0] / W[0]
    if n >= 1:
        R[1] = (A[1] - W[1] * R[0]) / W[0]
    if n >= 2:
        R[2] = (A[2] - 2 * W[1] * R[1] - W[2] * R[0]) / W[0]
    return i, R


def nurbs_eval(curve: NurbsCurve, xi: float):
    """Point, tangent X_xi, and the nonzero rational basis values and derivatives."""
    i, R = curve.basis_ders(xi, 1)
    P = curve.control_points[i - curve.degree : i + 1]
    return R[0] @ P, R[1] @ P, R[0], R[1]


def mesh_elements(kv: KnotVector) -> list[tuple[float, float, int]]:
    """Nonzero knot spans as ``(xi1, xi2, span index)``."""
    U = kv.knots
    return [(float(U[i]), float(U[i + 1]), i) for i in range(kv.degree, kv.n_cp) if U[i + 1] > U[i]]


def arc_length_map(curve: NurbsCurve, xi: float, n_gauss: int | None = None):
    """Arc length s(xi) and jacobian ds/dxi, integrated span by span with p+1 Gauss points."""
    ng = curve.degree + 1 if n_gauss is None else n_gauss
    g, wg = gauss_legendre(ng)
    kv = curve.knot_vector
    s = 0.0
    for a, b, span in mesh_elements(kv):
        if xi <= a:
            break
        hi = min(b, xi)
        for gi, wi in zip(g, wg):
            x = a + (gi + 1) * (hi - a) / 2
            jt = np.linalg.norm(curve.derivatives(x, 1, span)[1])
            if jt <= 0:
                raise ValueError(f"vanishing tangent at xi={x}")
            s += wi * jt * (hi - a) / 2
    jt = np.linalg.norm(curve.derivatives(xi, 1)[1])
    if jt <= 0:
        raise ValueError(f"vanishing tangent at xi={xi}")
    return s, jt


def _homogeneous(curve: NurbsCurve) -> np.ndarray:
    return np.column_stack([curve.control_points * curve.weights[:, None], curve.weights])


def _from_homogeneous(kv: KnotVector, Pw: np.ndarray) -> NurbsCurve:
    w = Pw[:, -1]
    return NurbsCurve(kv, Pw[:, :-1] / w[:, None], w)


def insert_knot(curve: NurbsCurve, u: float) -> NurbsCurve:
    """Single knot insertion (Boehm) in homogeneous coordinates."""
    kv = curve.knot_vector
    p, U = kv.degree, kv.knots
    a, b = kv.domain
    if not (a < u < b):
        raise DomainError(f"inserted knot {u} outside open range ({a}, {b})")
    k = kv.find_span(u)
    Pw = _homogeneous(curve)
    n = Pw.shape[0]
    Q = np.empty((n + 1, Pw.shape[1]))
    Q[: k - p + 1] = Pw[: k - p + 1]
    Q[k + 1 :] = Pw[k:]
    for i in range(k - p + 1, k + 1):
        alpha = (u - U[i]) / (U[i + p] - U[i])
        Q[i] = alpha * Pw[i] + (1 - alpha) * Pw[i - 1]
    return _from_homogeneous(KnotVector(p, np.insert(U, k + 1, u)), Q)


def elevate_degree(curve: NurbsCurve, t: int) -> NurbsCurve:
    """Raise the degree by ``t`` keeping the curve unchanged (Piegl-Tiller A5.9)."""
    if t < 0:
        raise ValueError("degree can only be raised")
    if t == 0:
        return curve
    kv = curve.knot_vector
    p, U = kv.degree, kv.knots
    Pw = _homogeneous(curve)
    n = Pw.shape[0] - 1
    m = n + p + 1
    ph = p + t
    ph2 = ph // 2
    dim = Pw.shape[1]

    bezalfs = np.zeros((ph + 1, p + 1))
    bezalfs[0, 0] = bezalfs[ph, p] = 1.0
    for i in range(1, ph2 + 1):
        inv = 1.0 / comb(ph, i)
        for j in range(max(0, i - t), min(p, i) + 1):
            bezalfs[i, j] = inv * comb(p, j) * comb(t, i - j)
    for i in range(ph2 + 1, ph):
        for j in range(max(0, i - t), min(p, i) + 1):
            bezalfs[i, j] = bezalfs[ph - i, p - j]

    n_seg = len(np.unique(U)) - 1
    Qw = np.zeros((Pw.shape[0] + n_seg * t + 1, dim))
    Uh = np.zeros(U.size + (n_seg + 1) * t + 1)
    bpts = np.zeros((p + 1, dim))
    ebpts = np.zeros((ph + 1, dim))
    nextbpts = np.zeros((max(p - 1, 1), dim))
    alfs = np.zeros(max(p - 1, 1))

    mh = ph
    kind = ph + 1
    r = -1
    a = p
    b = p + 1
    cind = 1
    ua = U[0]
    Qw[0] = Pw[0]
    Uh[: ph + 1] = ua
    bpts[:] = Pw[: p + 1]
    while b < m:
        i = b
        while b < m and U[b] == U[b + 1]:
            b += 1
        mul = b - i + 1
        mh += mul + t
        ub = U[b]
        oldr = r
        r = p - mul
        lbz = (oldr + 2) // 2 if oldr > 0 else 1
        rbz = ph - (r + 1) // 2 if r > 0 else ph
        if r > 0:
            numer = ub - ua
            for k in range(p, mul, -1):
                alfs[k - mul - 1] = numer / (U[a + k] - ua)
            for j in range(1, r + 1):
                save = r - j
                s = mul + j
                for k in range(p, s - 1, -1):
                    bpts[k] = alfs[k - s] * bpts[k] + (1 - alfs[k - s]) * bpts[k - 1]
                nextbpts[save] = bpts[p]
        for i in range(lbz, ph + 1):
            ebpts[i] = 0.0
            for j in range(max(0, i - t), min(p, i) + 1):
                ebpts[i] += bezalfs[i, j] * bpts[j]
        if oldr > 1:
            first = kind - 2
            last = kind
            den = ub - ua
            bet = (ub - Uh[kind - 1]) / den
            for tr in range(1, oldr):
                i = first
                j = last
                kj = j - kind + 1
                while j - i > tr:
                    if i < cind:
                        alf = (ub - Uh[i]) / (ua - Uh[i])
                        Qw[i] = alf * Qw[i] + (1 - alf) * Qw[i - 1]
                    if j >= lbz:
                        if j - tr <= kind - ph + oldr:
                            gam = (ub - Uh[j - tr]) / den
                            ebpts[kj] = gam * ebpts[kj] + (1 - gam) * ebpts[kj + 1]
                        else:
                            ebpts[kj] = bet * ebpts[kj] + (1 - bet) * ebpts[kj + 1]
                    i += 1
                    j -= 1
                    kj -= 1
                first -= 1
                last += 1
        if a != p:
            for _ in range(ph - oldr):
                Uh[kind] = ua
                kind += 1
        for j in range(lbz, rbz + 1):
            Qw[cind] = ebpts[j]
            cind += 1
        if b < m:
            bpts[:r] = nextbpts[:r]
            for j in range(r, p + 1):
                bpts[j] = Pw[b - p + j]
            a = b
            b += 1
            ua = ub
        else:
            Uh[kind : kind + ph + 1] = ub
    nh = mh - ph - 1
    return _from_homogeneous(KnotVector(ph, Uh[: nh + ph + 2]), Qw[: nh + 1])


def refine(curve: NurbsCurve, target_degree: int, inserted_knots=()) -> NurbsCurve:
    """k-refinement: degree elevation first, then knot insertion."""
    if target_degree < curve.degree:
        raise ValueError("target degree below current degree")
    a, b = curve.knot_vector.domain
    for u in inserted_knots:
        if not (a < u < b):
            raise DomainError(f"inserted knot {u} outside open range ({a}, {b})")
    out = elevate_degree(curve, target_degree - curve.degree)
    for u in sorted(inserted_knots):
        out = insert_knot(out, u)
    return out


@dataclass(frozen=True)
class LagrangeBasis:
    degree: int
    nodes: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.nodes is None:
            nodes = np.array([0.0]) if self.degree == 0 else np.linspace(-1.0, 1.0, self.degree + 1)
        else:
            nodes = np.asarray(self.nodes, dtype=float)
        if nodes.size != self.degree + 1 or np.any(np.diff(nodes) <= 0):
            raise ValueError("need degree+1 strictly increasing nodes")
        object.__setattr__(self, "nodes", nodes)


def lagrange_eval(basis: LagrangeBasis, xbar) -> np.ndarray:
    """Lagrange polynomial values; accepts scalar or array ``xbar`` (trailing axis = basis)."""
    x = np.asarray(xbar, dtype=float)[..., None]
    nodes = basis.nodes
    out = np.ones(x.shape[:-1] + (nodes.size,))
    for j, xj in enumerate(nodes):
        for m, xm in enumerate(nodes):
            if m != j:
                out[..., j] *= (x[..., 0] - xm) / (xj - xm)
    return out


def straight_line(start, end) -> NurbsCurve:
    return NurbsCurve(KnotVector(1, [0, 0, 1, 1]), np.array([start, end], dtype=float))


def circular_arc(radius: float, angle: float, center=(0.0, 0.0, 0.0), start_angle: float = 0.0) -> NurbsCurve:
    """Single-span rational quadratic arc in the XY plane; ``angle`` < pi, radians."""
    if not (0 < angle < np.pi):
        raise ValueError("single-span arc needs 0 < angle < pi")
    c = np.asarray(center, dtype=float)
    a0, a1 = start_angle, start_angle + angle
    half = angle / 2
    p0 = c + radius * np.array([np.cos(a0), np.sin(a0), 0.0])
    p2 = c + radius * np.array([np.cos(a1), np.sin(a1), 0.0])
    am = a0 + half
    p1 = c + radius / np.cos(half) * np.array([np.cos(am), np.sin(am), 0.0])
    return NurbsCurve(KnotVector(2, [0, 0, 0, 1, 1, 1]), np.array([p0, p1, p2]), np.array([1.0, np.cos(half), 1.0]))
