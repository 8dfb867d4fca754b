"""Constraint geometry from labelled clouds.

Hemisphere plane by least squares, a best-fit skull ellipsoid, an ellipsoid
inscribed in the target cloud and enclosing ellipsoids around obstacle
clusters.  Ellipsoid shape matrices are parameterized either as
Q = R^T diag(m) R (quaternion rotation, log-eigenvalues) or as Q = G G^T.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from ctrplan.geometry import (
    Ellipsoid,
    GeometryError,
    HalfSpace,
    cholesky_factor,
    quaternion_from_rotation,
)
from ctrplan.ingestion import extract_boundary
from ctrplan.optim import DenseModel, SolverOptions, solve_nlp

log = logging.getLogger(__name__)


class FitError(RuntimeError):
    pass


@dataclass
class FitResult:
    ellipsoid: Ellipsoid
    objective: float
    residual_max: float
    iterations: int
    degenerate: bool = False


# ---------------------------------------------------------------------------
# parameterizations


def _rh(q):
    """Homogeneous rotation: rotation(q / |q|) * |q|^2."""
    q0, q1, q2, q3 = q
    return np.array(
        [
            [q0 * q0 + q1 * q1 - q2 * q2 - q3 * q3, 2 * (q1 * q2 - q0 * q3), 2 * (q1 * q3 + q0 * q2)],
            [2 * (q1 * q2 + q0 * q3), q0 * q0 - q1 * q1 + q2 * q2 - q3 * q3, 2 * (q2 * q3 - q0 * q1)],
            [2 * (q1 * q3 - q0 * q2), 2 * (q2 * q3 + q0 * q1), q0 * q0 - q1 * q1 - q2 * q2 + q3 * q3],
        ]
    )


def _polarize():
    E = np.eye(4)
    T = np.zeros((3, 3, 4, 4))
    for i in range(4):
        T[:, :, i, i] = _rh(E[i])
        for j in range(i + 1, 4):
            off = 0.5 * (_rh(E[i] + E[j]) - _rh(E[i]) - _rh(E[j]))
            T[:, :, i, j] = T[:, :, j, i] = off
    return T


_RH_TENSOR = _polarize()


class RotationParam:
    """theta = (c[3], q[4], log m[3]);  Q = R(q)^T diag(m) R(q)."""

    size = 10

    @staticmethod
    def initial(c, Q):
        w, V = np.linalg.eigh(Q)
        R = V.T
        if np.linalg.det(R) < 0:
            R[2] *= -1
        return np.concatenate([c, quaternion_from_rotation(R), np.log(w)])

    @staticmethod
    def to_ellipsoid(theta):
        c, q, lm = theta[:3], theta[3:7], theta[7:]
        R = _rh(q) / (q @ q)
        return Ellipsoid(c, R.T @ (np.exp(lm)[:, None] * R))

    @staticmethod
    def qdist(theta, V, grad=False):
        c, q, lm = theta[:3], theta[3:7], theta[7:]
        m = np.exp(lm)
        qq = q @ q
        R = _rh(q) / qq
        D = V - c
        W = D @ R.T
        val = (W * W) @ m
        if not grad:
            return val
        J = np.empty((len(V), 10))
        mW = W * m
        J[:, :3] = -2.0 * mW @ R
        # dR/dq_j = 2 T[:, :, j, :] q / |q|^2 - 2 q_j R / |q|^2
        dR = 2.0 * np.einsum("abjk,k->jab", _RH_TENSOR, q) / qq - 2.0 * q[:, None, None] * R / qq
        dW = np.einsum("jab,nb->nja", dR, D)
        J[:, 3:7] = 2.0 * np.einsum("na,nja->nj", mW, dW)
        J[:, 7:] = W * W * m
        return val, J

    @staticmethod
    def logdet(theta):
        return float(np.sum(theta[7:])), np.concatenate([np.zeros(7), np.ones(3)])

    @staticmethod
    def gauge(theta):
        """0.5 (|q|^2 - 1)^2: fixes the quaternion scale, which Q does not see."""
        q = theta[3:7]
        r = q @ q - 1.0
        grad = np.zeros(10)
        grad[3:7] = 2.0 * r * q
        return 0.5 * r * r, grad


class CholeskyParam:
    """theta = (c[3], g11, g21, g22, g31, g32, g33) with diagonal entries stored as logs."""

    size = 9
    _diag = np.array([0, 2, 5])

    @classmethod
    def initial(cls, c, Q):
        g = np.linalg.cholesky(Q)[np.tril_indices(3)]
        g[cls._diag] = np.log(g[cls._diag])
        return np.concatenate([c, g])

    @classmethod
    def _G(cls, theta):
        g = theta[3:].copy()
        g[cls._diag] = np.exp(g[cls._diag])
        return cholesky_factor(g), g

    @classmethod
    def to_ellipsoid(cls, theta):
        G, _ = cls._G(theta)
        return Ellipsoid(theta[:3], G @ G.T)

    @classmethod
    def qdist(cls, theta, V, grad=False):
        G, g = cls._G(theta)
        D = V - theta[:3]
        W = D @ G
        val = np.sum(W * W, axis=1)
        if not grad:
            return val
        J = np.empty((len(V), 9))
        J[:, :3] = -2.0 * W @ G.T
        rows, cols = np.tril_indices(3)
        Jg = 2.0 * D[:, rows] * W[:, cols]
        Jg[:, cls._diag] *= g[cls._diag]
        J[:, 3:] = Jg
        return val, J

    @classmethod
    def logdet(cls, theta):
        grad = np.zeros(9)
        grad[3 + cls._diag] = 2.0
        return float(2.0 * np.sum(theta[3 + cls._diag])), grad

    @staticmethod
    def gauge(theta):
        return 0.0, np.zeros(9)


PARAMETERIZATIONS = {"rotation": RotationParam, "cholesky": CholeskyParam}


def moment_initialization(points):
    """Mean centre and inverse covariance scaled so the mean Q-distance is 1."""
    V = np.asarray(points, float)
    c = V.mean(axis=0)
    D = V - c
    cov = D.T @ D / len(V)
    Q = np.linalg.inv(cov + 1e-12 * np.trace(cov) * np.eye(3))
    Q /= np.mean(np.einsum("ni,ij,nj->n", D, Q, D))
    return c, 0.5 * (Q + Q.T)


def _check_span(V, need: int, what: str):
    if len(V) < need:
        raise FitError(f"{what}: need at least {need} points, got {len(V)}")
    sv = np.linalg.svd(V - V.mean(axis=0), compute_uv=False)
    if sv[-1] <= 1e-9 * max(sv[0], 1e-300):
        raise FitError(f"{what}: points do not span three dimensions")


# ---------------------------------------------------------------------------
# hemisphere


def fit_hyperplane(points):
    """Least-squares h with v^T h = 1; returns (h, (H_le, H_ge)) split at x^T h = 1."""
    V = np.asarray(points, float).reshape(-1, 3)
    if len(V) < 3:
        raise FitError(f"hyperplane: need at least 3 points, got {len(V)}")
    A = V.T @ V
    sv = np.linalg.svd(V, compute_uv=False)
    centred = np.linalg.svd(V - V.mean(axis=0), compute_uv=False)
    if centred[1] <= 1e-9 * max(centred[0], 1e-300):
        raise FitError("hyperplane: points are collinear")
    if sv[-1] <= 1e-9 * sv[0]:
        raise FitError("hyperplane: plane passes through the origin, x^T h = 1 cannot represent it")
    h = np.linalg.solve(A, V.sum(axis=0))
    return h, (HalfSpace(h, 1.0, "<="), HalfSpace(h, 1.0, ">="))


def select_hemisphere(halfspaces, targets):
    """The half-space holding every target point, or both when targets straddle the plane."""
    T = np.asarray(targets, float).reshape(-1, 3)
    if len(T) == 0:
        raise ValueError("no target points")
    for hs in halfspaces:
        if np.all(hs.contains(T)):
            return [hs]
    return list(halfspaces)


# ---------------------------------------------------------------------------
# skull


def fit_skull(points, hemi: HalfSpace | None = None, parameterization: str = "rotation", max_nfev: int = 2000) -> FitResult:
    """Best-fit ellipsoid minimizing sum((|v - c|_Q^2 - 1)^2) over the points inside ``hemi``."""
    V = np.asarray(points, float).reshape(-1, 3)
    if hemi is not None:
        V = V[hemi.contains(V)]
    _check_span(V, 9, "skull fit")
    P = PARAMETERIZATIONS[parameterization]
    theta0 = P.initial(*moment_initialization(V))

    def res(theta):
        return P.qdist(theta, V) - 1.0

    def jac(theta):
        return P.qdist(theta, V, grad=True)[1]

    sol = least_squares(res, theta0, jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev)
    if sol.status <= 0:
        raise FitError(f"skull fit did not converge (max residual {np.max(np.abs(sol.fun)):.3e})")
    r = sol.fun
    return FitResult(P.to_ellipsoid(sol.x), float(r @ r), float(np.max(np.abs(r))), max(int(sol.nfev), 1))


# ---------------------------------------------------------------------------
# target


def fit_target(
    points,
    delta_mri: float,
    eigen_bound: str = "literal",
    boundary=None,
    options: SolverOptions | None = None,
) -> FitResult:
    """Ellipsoid inside the target cloud: minimize the boundary points' Q-distance sum.

    Boundary voxels must stay outside or on the ellipsoid.  ``eigen_bound``
    selects the eigenvalue constraint: ``"literal"`` enforces
    eig(Q) > (2/delta)^2, ``"semi_axis"`` enforces semi-axes >= delta/2
    (eig(Q) <= (2/delta)^2).
    """
    V = np.asarray(points, float).reshape(-1, 3)
    _check_span(V, 4, "target fit")
    B = extract_boundary(V, delta_mri) if boundary is None else np.asarray(boundary, float)
    bound = np.log((2.0 / delta_mri) ** 2)
    c0, Q0 = moment_initialization(V)
    theta0 = RotationParam.initial(c0, Q0)
    lb = np.full(10, -np.inf)
    ub = np.full(10, np.inf)
    if eigen_bound == "literal":
        lb[7:] = bound + 1e-9
        theta0[7:] = np.maximum(theta0[7:], bound + 1e-3)
    elif eigen_bound == "semi_axis":
        ub[7:] = bound
        theta0[7:] = np.minimum(theta0[7:], bound)
    else:
        raise ValueError(f"unknown eigen_bound {eigen_bound!r}")
    scale = len(B)

    def fun(theta):
        val, J = RotationParam.qdist(theta, B, grad=True)
        gv, gg = RotationParam.gauge(theta)
        return val.sum() / scale + gv, J.sum(axis=0) / scale + gg

    def ineq(theta):
        val, J = RotationParam.qdist(theta, B, grad=True)
        return 1.0 - val, -J

    model = DenseModel(10, fun, ineq=ineq, lb=lb, ub=ub)
    sol = solve_nlp(model, theta0, options=options or SolverOptions(tol_feas=1e-9, tol_stat=1e-7))
    if sol.status == "infeasible" or sol.feas > 1e-6:
        m = np.exp(sol.x[7:])
        raise FitError(
            f"target fit infeasible: eigenvalue bound (2/delta)^2 = {np.exp(bound):.6g} "
            f"with eigenvalues {m}, boundary violation {sol.feas:.3e}"
        )
    e = RotationParam.to_ellipsoid(sol.x)
    qd = RotationParam.qdist(sol.x, B)
    if eigen_bound == "literal" and np.linalg.eigvalsh(e.Q)[0] <= np.exp(bound):
        raise FitError("target fit violates the eigenvalue bound")
    return FitResult(e, float(qd.sum()), float(max(0.0, np.max(1.0 - qd))), max(sol.inner_iterations, 1))


# ---------------------------------------------------------------------------
# obstacles


def _rescale_to_enclose(e: Ellipsoid, V) -> Ellipsoid:
    d = V - e.c
    worst = float(np.max(np.einsum("ni,ij,nj->n", d, e.Q, d)))
    if worst > 1.0:
        return Ellipsoid(e.c, e.Q / (worst * (1.0 + 1e-12)))
    return e


def inflate_degenerate(points, min_semi_axis: float) -> Ellipsoid:
    """Ball-like ellipsoid about the centroid for clusters too small or flat to fit."""
    V = np.asarray(points, float).reshape(-1, 3)
    c = V.mean(axis=0)
    D = V - c
    _, _, Vt = np.linalg.svd(D, full_matrices=True) if len(V) > 1 else (None, None, np.eye(3))
    proj = D @ Vt.T
    spread = np.max(np.abs(proj), axis=0) * np.sqrt(3.0)
    axes = np.maximum(spread, min_semi_axis)
    Q = Vt.T @ np.diag(1.0 / axes**2) @ Vt
    return _rescale_to_enclose(Ellipsoid(c, 0.5 * (Q + Q.T)), V)


def is_degenerate(points, tol: float = 1e-6) -> bool:
    V = np.asarray(points, float).reshape(-1, 3)
    if len(V) < 4:
        return True
    sv = np.linalg.svd(V - V.mean(axis=0), compute_uv=False)
    return sv[-1] <= tol * max(sv[0], 1e-300)


def fit_enclosing(
    points,
    min_semi_axis: float | None = None,
    regularization: float = 1e-6,
    parameterization: str = "rotation",
    options: SolverOptions | None = None,
) -> FitResult:
    """Enclosing ellipsoid maximizing the points' Q-distance sum subject to enclosure.

    A small ``-regularization * log det Q`` term picks the smallest-volume
    encloser among ties.  Degenerate clusters (fewer than four points or no
    3-D extent) get a ball-like ellipsoid with semi-axes of at least
    ``min_semi_axis``.
    """
    V = np.asarray(points, float).reshape(-1, 3)
    if len(V) == 0:
        raise FitError("enclosing fit: empty cluster")
    if is_degenerate(V):
        if min_semi_axis is None:
            raise FitError("enclosing fit: degenerate cluster needs min_semi_axis")
        e = inflate_degenerate(V, min_semi_axis)
        qd = np.einsum("ni,ij,nj->n", V - e.c, e.Q, V - e.c)
        return FitResult(e, float(-qd.sum()), float(qd.max()), 1, degenerate=True)
    P = PARAMETERIZATIONS[parameterization]
    c0, Q0 = moment_initialization(V)
    d0 = np.einsum("ni,ij,nj->n", V - c0, Q0, V - c0)
    theta0 = P.initial(c0, Q0 / d0.max())
    lb = np.full(P.size, -np.inf)
    ub = np.full(P.size, np.inf)
    # keep the centre in the bounding box and semi-axes below the diameter;
    # without this a far-away flat ellipsoid can score nearly as well
    lb[:3], ub[:3] = V.min(axis=0), V.max(axis=0)
    if P is RotationParam:
        diam = float(np.linalg.norm(V.max(axis=0) - V.min(axis=0)))
        lb[7:] = np.log(1.0 / diam**2)
        if min_semi_axis is not None:
            ub[7:] = max(np.log(1.0 / min_semi_axis**2), lb[7] + 1e-6)
        theta0[7:] = np.clip(theta0[7:], lb[7:], ub[7:])
    scale = len(V)

    def fun(theta):
        val, J = P.qdist(theta, V, grad=True)
        ld, gld = P.logdet(theta)
        gv, gg = P.gauge(theta)
        return (
            (-val.sum() - regularization * ld) / scale + gv,
            (-J.sum(axis=0) - regularization * gld) / scale + gg,
        )

    def ineq(theta):
        val, J = P.qdist(theta, V, grad=True)
        return val - 1.0, J

    model = DenseModel(P.size, fun, ineq=ineq, lb=lb, ub=ub)
    sol = solve_nlp(model, theta0, options=options or SolverOptions(tol_feas=1e-9, tol_stat=1e-7, max_iter=5000))
    if sol.status == "infeasible" or not np.all(np.isfinite(sol.x)):
        raise FitError(f"enclosing fit failed ({sol.status}, feasibility {sol.feas:.3e})")
    try:
        e = _rescale_to_enclose(P.to_ellipsoid(sol.x), V)
    except GeometryError as exc:
        raise FitError(f"enclosing fit produced an invalid shape: {exc}") from exc
    qd = np.einsum("ni,ij,nj->n", V - e.c, e.Q, V - e.c)
    return FitResult(e, float(-qd.sum()), float(qd.max()), max(sol.inner_iterations, 1))
