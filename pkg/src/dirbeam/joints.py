"""Rigid joints between patch ends and initial director frames.

At a joint control point the two directors are written as ``d_a = exp(mu_a) t_a``.
A shared rotation vector couples all members; each member keeps its own two
logarithmic stretches. A sixth, fictitious DOF pads the block to the six
director components and is always constrained.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .splines import NurbsCurve

__all__ = [
    "skew",
    "rodrigues_exp",
    "minimal_rotation",
    "xi_transform",
    "joint_geometric_stiffness",
    "transform_element",
    "update_joint_state",
    "smallest_rotation_frame",
    "frame_derivative",
    "JointSpec",
]


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rodrigues_exp(theta) -> np.ndarray:
    """Rotation matrix exp(skew(theta))."""
    theta = np.asarray(theta, dtype=float)
    a = float(np.linalg.norm(theta))
    if a == 0.0:
        return np.eye(3)
    K = skew(theta / a)
    return np.eye(3) + np.sin(a) * K + (1 - np.cos(a)) * (K @ K)


def minimal_rotation(a, b) -> np.ndarray:
    """Smallest rotation taking unit vector a to unit vector b."""
    c = float(np.dot(a, b))
    if c <= -1 + 1e-12:
        raise ValueError("antiparallel tangents; refine the frame propagation step")
    K = skew(np.cross(a, b))
    return np.eye(3) + K + K @ K / (1 + c)


def xi_transform(d1, d2) -> tuple[np.ndarray, np.ndarray]:
    """Map (dTheta, dmu1, dmu2) to director variations; also the padded 6x6 form."""
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    if np.linalg.norm(d1) == 0 or np.linalg.norm(d2) == 0:
        raise ValueError("degenerate joint: zero director")
    Xi = np.zeros((6, 5))
    Xi[:3, :3] = -skew(d1)
    Xi[3:, :3] = -skew(d2)
    Xi[:3, 3] = d1
    Xi[3:, 4] = d2
    Xi_star = np.zeros((6, 6))
    Xi_star[:, :5] = Xi
    return Xi, Xi_star


def joint_geometric_stiffness(d1, d2, m1, m2, starred: bool = False) -> np.ndarray:
    """Derivative of Xi^T f with respect to (Theta, mu) at fixed f = (m1, m2)."""
    K = np.zeros((6, 6) if starred else (5, 5))
    for a, (d, m) in enumerate(((d1, m1), (d2, m2))):
        d = np.asarray(d, dtype=float)
        m = np.asarray(m, dtype=float)
        dm = float(d @ m)
        mom = np.cross(d, m)
        K[:3, :3] += np.outer(d, m) - dm * np.eye(3)
        K[:3, 3 + a] = mom
        K[3 + a, :3] = mom
        K[3 + a, 3 + a] = dm
    return K


def transform_element(K, F, slot: int, d1, d2, f_y):
    """Transform a condensed element system for a joint at director slot ``slot``.

    ``slot`` is the offset of the six director components of the joint control
    point inside the element vector. ``f_y`` supplies the director stress couples.
    Returns (K_tilde, F_tilde, Xi_tilde).
    """
    m = K.shape[0]
    if slot < 0 or slot + 6 > m:
        raise ValueError("joint slot outside element vector")
    _, Xs = xi_transform(d1, d2)
    X = np.eye(m)
    X[slot : slot + 6, slot : slot + 6] = Xs
    Kt = X.T @ K @ X
    f = f_y[slot : slot + 6]
    Kt[slot : slot + 6, slot : slot + 6] += joint_geometric_stiffness(d1, d2, f[:3], f[3:], starred=True)
    return Kt, X.T @ F, X


def update_joint_state(d1, d2, dtheta, dmu) -> tuple[np.ndarray, np.ndarray]:
    """Rotate unit directors by exp(dtheta) and scale stretches multiplicatively."""
    R = rodrigues_exp(dtheta)
    out = []
    for d, m in zip((d1, d2), dmu):
        lam = float(np.linalg.norm(d))
        out.append(np.exp(np.log(lam) + m) * (R @ (d / lam)))
    return out[0], out[1]


def smallest_rotation_frame(curve: NurbsCurve, D0, xis, substeps: int = 8):
    """Director frames at the sorted parameters ``xis``, propagated from the curve start.

    ``D0`` (2, 3) holds orthonormal section directors at xi = 0, orthogonal to the tangent.
    Between consecutive samples the frame is carried along ``substeps`` minimal rotations.
    Returns an array (len(xis), 2, 3).
    """
    xis = np.asarray(xis, dtype=float)
    if np.any(np.diff(xis) < 0):
        raise ValueError("parameters must be sorted")
    a0 = curve.knot_vector.domain[0]
    D = np.array(D0, dtype=float)
    t_prev = _unit_tangent(curve, a0)
    if abs(D[0] @ D[1]) > 1e-10 or np.max(np.abs(D @ t_prev)) > 1e-10:
        raise ValueError("initial directors must be orthonormal and normal to the tangent")
    if np.dot(np.cross(D[0], D[1]), t_prev) <= 0:
        raise ValueError("initial directors must form a right-handed frame with the tangent")
    out = np.empty((xis.size, 2, 3))
    x_prev = a0
    for k, x in enumerate(xis):
        for y in np.linspace(x_prev, x, substeps + 1)[1:] if x > x_prev else ():
            t = _unit_tangent(curve, y)
            R = minimal_rotation(t_prev, t)
            D = D @ R.T
            t_prev = t
        # remove drift
        D[0] -= (D[0] @ t_prev) * t_prev
        D[0] /= np.linalg.norm(D[0])
        D[1] = np.cross(t_prev, D[0])
        out[k] = D
        x_prev = x
    return out


def frame_derivative(curve: NurbsCurve, xi: float, D) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unit tangent, its arc-length derivative, and D_a,s of a rotation-minimizing frame."""
    X = curve.derivatives(xi, 2)
    j = np.linalg.norm(X[1])
    t = X[1] / j
    ts = (X[2] - t * (t @ X[2])) / j**2
    Ds = np.array([-(Da @ ts) * t for Da in D])
    return t, ts, Ds


def _unit_tangent(curve: NurbsCurve, xi: float) -> np.ndarray:
    d = curve.derivatives(xi, 1)[1]
    n = np.linalg.norm(d)
    if n == 0:
        raise ValueError(f"vanishing tangent at xi={xi}")
    return d / n


@dataclass(frozen=True)
class JointSpec:
    """Members are (patch index, end) with end in {"left", "right"}; the first owns the rotation DOFs."""

    members: tuple

    def __post_init__(self):
        if len(self.members) < 2:
            raise ValueError("a joint needs at least two members")
        for pid, end in self.members:
            if end not in ("left", "right"):
                raise ValueError(f"joint end must be 'left' or 'right', got {end!r}")
