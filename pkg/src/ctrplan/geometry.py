"""Ellipsoids, half-spaces, rotations and twists.

All lengths are meters and all curvatures 1/m.  Every function here is pure.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_SYM_TOL = 1e-12


class GeometryError(ValueError):
    """Invalid geometric input (non-SPD matrix, zero quaternion, ...)."""


@dataclass(frozen=True)
class Ellipsoid:
    """Ell(c, Q) = {x : (x - c)^T Q (x - c) <= 1} with Q symmetric positive definite."""

    c: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(3)
        Q = np.asarray(self.Q, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(Q)) or not np.all(np.isfinite(c)):
            raise GeometryError("ellipsoid with non-finite entries")
        if np.max(np.abs(Q - Q.T)) > _SYM_TOL * max(1.0, np.max(np.abs(Q))):
            raise GeometryError("Q is not symmetric")
        Q = 0.5 * (Q + Q.T)
        if np.linalg.eigvalsh(Q)[0] <= 0.0:
            raise GeometryError("Q is not positive definite")
        c.setflags(write=False)
        Q.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "Q", Q)

    @property
    def semi_axes(self) -> np.ndarray:
        return 1.0 / np.sqrt(np.linalg.eigvalsh(self.Q))

    @property
    def volume(self) -> float:
        return 4.0 * np.pi / (3.0 * np.sqrt(np.linalg.det(self.Q)))

    def contains(self, x, slack: float = 0.0) -> np.ndarray:
        return q_dist_sq(x, self) <= 1.0 + slack

    def with_center(self, c) -> "Ellipsoid":
        return Ellipsoid(c, self.Q)

    def to_dict(self) -> dict:
        return {"c": self.c.tolist(), "Q": self.Q.reshape(-1).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Ellipsoid":
        return cls(np.asarray(d["c"], float), np.asarray(d["Q"], float).reshape(3, 3))

    @classmethod
    def ball(cls, c, radius: float) -> "Ellipsoid":
        return cls(c, np.eye(3) / radius**2)


@dataclass(frozen=True)
class HalfSpace:
    """{x : x^T h <= offset} (sign '<=') or {x : x^T h >= offset} (sign '>=')."""

    h: np.ndarray
    offset: float = 1.0
    sign: str = "<="

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float).reshape(3)
        if not np.linalg.norm(h) > 0.0:
            raise GeometryError("half-space normal must be nonzero")
        if self.sign not in ("<=", ">="):
            raise GeometryError(f"unknown half-space sign {self.sign!r}")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "offset", float(self.offset))

    def violation(self, x) -> np.ndarray:
        """Signed constraint value; <= 0 means x is inside (boundary counts as inside)."""
        v = np.asarray(x, dtype=float) @ self.h - self.offset
        return v if self.sign == "<=" else -v

    def contains(self, x, slack: float = 0.0) -> np.ndarray:
        return self.violation(x) <= slack

    def complement(self) -> "HalfSpace":
        return HalfSpace(self.h, self.offset, ">=" if self.sign == "<=" else "<=")

    def to_dict(self) -> dict:
        return {"h": self.h.tolist(), "offset": self.offset, "sign": self.sign}

    @classmethod
    def from_dict(cls, d: dict) -> "HalfSpace":
        return cls(np.asarray(d["h"], float), d.get("offset", 1.0), d.get("sign", "<="))


@dataclass(frozen=True)
class UnitQuaternion:
    """Scalar-first quaternion (q0, q1, q2, q3), normalized on construction."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not n > 0.0 or not np.isfinite(n):
            raise GeometryError("zero quaternion cannot represent a rotation")
        q = q / n
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    def as_matrix(self) -> np.ndarray:
        return rotation_from_quaternion(self)

    @classmethod
    def from_matrix(cls, R) -> "UnitQuaternion":
        return cls(quaternion_from_rotation(R))


@dataclass(frozen=True)
class Frame:
    """Rigid transform (R, p) with R in SO(3)."""

    R: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float).reshape(3, 3)
        p = np.asarray(self.p, dtype=float).reshape(3)
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-10 or abs(np.linalg.det(R) - 1.0) > 1e-10:
            raise GeometryError("R is not a rotation matrix")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "p", p)

    def as_matrix(self) -> np.ndarray:
        g = np.eye(4)
        g[:3, :3] = self.R
        g[:3, 3] = self.p
        return g


def q_dist_sq(x, e: Ellipsoid) -> np.ndarray:
    """(x - c)^T Q (x - c); vectorized over leading axes of ``x``."""
    d = np.asarray(x, dtype=float) - e.c
    return np.einsum("...i,ij,...j->...", d, e.Q, d)


def _quat_array(q) -> np.ndarray:
    if isinstance(q, UnitQuaternion):
        return q.q
    return UnitQuaternion(q).q


def rotation_from_quaternion(q) -> np.ndarray:
    """Rotation matrix of a scalar-first quaternion (normalized on entry)."""
    q0, q1, q2, q3 = _quat_array(q)
    return np.array(
        [
            [1 - 2 * (q2 * q2 + q3 * q3), 2 * (q1 * q2 - q0 * q3), 2 * (q1 * q3 + q0 * q2)],
            [2 * (q1 * q2 + q0 * q3), 1 - 2 * (q1 * q1 + q3 * q3), 2 * (q2 * q3 - q0 * q1)],
            [2 * (q1 * q3 - q0 * q2), 2 * (q2 * q3 + q0 * q1), 1 - 2 * (q1 * q1 + q2 * q2)],
        ]
    )


def quaternion_from_rotation(R) -> np.ndarray:
    """Scalar-first unit quaternion with q0 >= 0 for a rotation matrix (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    diag = np.diag(R)
    k = int(np.argmax([tr, *diag]))
    if k == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif k == 1:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif k == 2:
        s = 2.0 * np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


def wedge3(x) -> np.ndarray:
    """Hat map: wedge3(x) @ y == cross(x, y)."""
    x1, x2, x3 = np.asarray(x, dtype=float).reshape(3)
    return np.array([[0.0, -x3, x2], [x3, 0.0, -x1], [-x2, x1, 0.0]])


def vee3(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if np.linalg.norm(M + M.T) >= 1e-10:
        raise GeometryError("vee3 requires a skew-symmetric matrix")
    return np.array([M[2, 1], M[0, 2], M[1, 0]])


def wedge6(xi) -> np.ndarray:
    """Twist coordinates (v, w) to the 4x4 twist matrix."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    out = np.zeros((4, 4))
    out[:3, :3] = wedge3(xi[3:])
    out[:3, 3] = xi[:3]
    return out


def vee6(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if np.any(np.abs(X[3]) > 1e-10):
        raise GeometryError("vee6 requires a matrix with a zero bottom row")
    return np.concatenate([X[:3, 3], vee3(X[:3, :3])])


def pd_from_rotation_params(quat, m) -> np.ndarray:
    """Q = R^T diag(m) R with R from ``quat``; eigenvalues of Q are exactly ``m``."""
    m = np.asarray(m, dtype=float).reshape(3)
    if np.any(m <= 0.0):
        raise GeometryError("diagonal entries must be positive")
    R = rotation_from_quaternion(quat)
    Q = R.T @ (m[:, None] * R)
    return 0.5 * (Q + Q.T)


def cholesky_factor(g) -> np.ndarray:
    """Lower-triangular G from (g11, g21, g22, g31, g32, g33)."""
    g = np.asarray(g, dtype=float).reshape(6)
    G = np.zeros((3, 3))
    G[np.tril_indices(3)] = g
    return G


def pd_from_cholesky_params(g) -> np.ndarray:
    """Q = G G^T with G lower triangular, parameters row-major (g11, g21, g22, g31, g32, g33)."""
    G = cholesky_factor(g)
    if np.any(np.diag(G) <= 0.0):
        raise GeometryError("Cholesky diagonal must be positive")
    return G @ G.T


def project_to_rotation(M) -> np.ndarray:
    """Nearest rotation matrix in Frobenius norm (polar factor)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt
