"""Forward kinematics of n concentric pre-curved tubes.

Tube index 0 is the outermost tube.  Along the shared centreline each tube
carries a torsion angle psi_i and a torsion rate u_iz; the innermost tube's
frame (R, p) follows the resultant curvature of all tubes present at s.

The right-hand side helpers take an ``xp`` array namespace so the same model
drives both the numpy shooter below and the jax transcription in
:mod:`ctrplan.planner.transcription`.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from ctrplan.geometry import project_to_rotation

NITINOL_E = 50e9
NITINOL_G = NITINOL_E / (2.0 * (1.0 + 0.33))


class ShootingError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class TubeSetError(ValueError):
    pass


@dataclass(frozen=True)
class Tube:
    L: float
    beta: float = 0.0
    alpha: float = 0.0
    u_star: tuple = (0.0, 0.0, 0.0)
    rho_i: float = 1.0e-3
    rho_o: float = 1.5e-3
    E: float = NITINOL_E
    G: float = NITINOL_G

    def __post_init__(self):
        object.__setattr__(self, "u_star", tuple(float(u) for u in self.u_star))
        object.__setattr__(self, "alpha", float(self.alpha) % (2.0 * np.pi))
        if not self.L > 0:
            raise TubeSetError(f"tube length must be positive, got {self.L}")
        if not -self.L - 1e-12 <= self.beta <= 0.0:
            raise TubeSetError(f"beta must lie in [-L, 0], got {self.beta}")
        if not self.rho_o > self.rho_i > 0:
            raise TubeSetError(f"need rho_o > rho_i > 0, got {self.rho_o}, {self.rho_i}")

    @property
    def ell(self) -> float:
        """Extended length L + beta."""
        return max(self.L + self.beta, 0.0)

    @property
    def I(self) -> float:
        return second_moment(self.rho_i, self.rho_o)

    @property
    def J(self) -> float:
        return 2.0 * self.I


def second_moment(rho_i, rho_o, xp=np):
    """Second moment of area of an annulus with inner/outer diameters rho_i, rho_o."""
    return xp.pi * (rho_o**4 - rho_i**4) / 64.0


@dataclass(frozen=True)
class TubeSet:
    tubes: tuple

    def __post_init__(self):
        tubes = tuple(self.tubes)
        if not tubes:
            raise TubeSetError("a tube set needs at least one tube")
        for k in range(len(tubes) - 1):
            outer, inner = tubes[k], tubes[k + 1]
            if inner.rho_o > outer.rho_i:
                raise TubeSetError(
                    f"nesting violated between tube {k + 1} and tube {k + 2}: "
                    f"rho_o of tube {k + 2} ({inner.rho_o}) exceeds rho_i of tube {k + 1} ({outer.rho_i})"
                )
            if inner.ell < outer.ell:
                raise TubeSetError(
                    f"tube {k + 1} extends beyond tube {k + 2} ({outer.ell} > {inner.ell})"
                )
        object.__setattr__(self, "tubes", tubes)

    def __len__(self):
        return len(self.tubes)

    @property
    def ell(self) -> np.ndarray:
        return np.array([t.ell for t in self.tubes])

    @property
    def ustar_xy(self) -> np.ndarray:
        return np.array([t.u_star[:2] for t in self.tubes])

    @property
    def EI(self) -> np.ndarray:
        return np.array([t.E * t.I for t in self.tubes])

    @property
    def GJ(self) -> np.ndarray:
        return np.array([t.G * t.J for t in self.tubes])

    @property
    def alpha(self) -> np.ndarray:
        return np.array([t.alpha for t in self.tubes])

    @property
    def beta(self) -> np.ndarray:
        return np.array([t.beta for t in self.tubes])

    def to_dict(self) -> dict:
        return {"tubes": [dict(t.__dict__, u_star=list(t.u_star)) for t in self.tubes]}

    @classmethod
    def from_dict(cls, d: dict) -> "TubeSet":
        return cls(tuple(Tube(**t) for t in d["tubes"]))


@dataclass
class RobotPath:
    """Discretized centreline; arrays are indexed by node."""

    s: np.ndarray
    p: np.ndarray
    R: np.ndarray
    psi: np.ndarray
    u_z: np.ndarray
    u_xy: np.ndarray
    segment_ends: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def tip(self) -> np.ndarray:
        return self.p[-1]

    @property
    def length(self) -> float:
        return float(self.s[-1] - self.s[0])

    def to_csv(self) -> str:
        n = self.psi.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s", "px", "py", "pz"] + [f"psi_{i + 1}" for i in range(n)] + [f"uz_{i + 1}" for i in range(n)])
        for k in range(len(self.s)):
            w.writerow([repr(float(v)) for v in (self.s[k], *self.p[k], *self.psi[k], *self.u_z[k])])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "s": self.s.tolist(),
            "p": self.p.tolist(),
            "R": self.R.reshape(len(self.s), 9).tolist(),
            "psi": self.psi.tolist(),
            "u_z": self.u_z.tolist(),
            "segment_ends": self.segment_ends.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def active_set(s: float, tubes: TubeSet) -> list:
    """Indices of tubes present at arc length s (those with s <= ell_i)."""
    ell = tubes.ell
    if s > ell[-1] + 1e-12 or s < 0:
        raise ValueError(f"arc length {s} outside [0, {ell[-1]}]")
    return [i for i in range(len(ell)) if s <= ell[i] + 1e-12]


# ---------------------------------------------------------------------------
# model right-hand side (masked, namespace-agnostic)


def _pairwise_angle(psi, xp):
    # d[i, j] = psi_j - psi_i
    return psi[None, :] - psi[:, None]


def curvature_xy(psi, ustar_xy, EI, mask, xp=np):
    """Resultant bending curvature u_ixy of every tube, expressed in its own frame."""
    w = mask * EI
    d = _pairwise_angle(psi, xp)
    c, s = xp.cos(d), xp.sin(d)
    ux, uy = ustar_xy[:, 0], ustar_xy[:, 1]
    bx = (c * ux[None, :] - s * uy[None, :]) @ w
    by = (s * ux[None, :] + c * uy[None, :]) @ w
    return xp.stack([bx, by], axis=-1) / xp.sum(w)


def torsion_rate(psi, ustar_xy, EI, GJ, mask, xp=np):
    """d/ds u_iz for every tube; zero for tubes outside ``mask``."""
    w = mask * EI
    delta = -_pairwise_angle(psi, xp)  # psi_i - psi_j
    sn, cs = xp.sin(delta), xp.cos(delta)
    ux, uy = ustar_xy[:, 0], ustar_xy[:, 1]
    # B(delta) @ u*_j
    bx = sn * ux[None, :] - cs * uy[None, :]
    by = cs * ux[None, :] + sn * uy[None, :]
    inner = ux[:, None] * bx + uy[:, None] * by
    A = EI / (xp.sum(w) * GJ)
    return mask * A * (inner @ w)


def hat(u, xp=np):
    zero = u[0] * 0.0
    return xp.stack(
        [
            xp.stack([zero, -u[2], u[1]]),
            xp.stack([u[2], zero, -u[0]]),
            xp.stack([-u[1], u[0], zero]),
        ]
    )


def state_rhs(x, ustar_xy, EI, GJ, mask, xp=np):
    """Derivative of the flat state [p(3), R(9), psi(n), u_z(n)]."""
    n = ustar_xy.shape[0]
    R = x[3:12].reshape(3, 3)
    psi = x[12 : 12 + n]
    uz = x[12 + n : 12 + 2 * n]
    uxy = curvature_xy(psi, ustar_xy, EI, mask, xp)[n - 1]
    u = xp.stack([uxy[0], uxy[1], uz[n - 1]])
    dR = R @ hat(u, xp)
    dp = R[:, 2]
    dpsi = mask * uz
    duz = torsion_rate(psi, ustar_xy, EI, GJ, mask, xp)
    return xp.concatenate([dp, dR.reshape(9), dpsi, duz])


def _inverse_transpose(R, xp):
    # R^-T of a 3x3 matrix from cofactors: columns (b x c, c x a, a x b) / det
    a, b, c = R[:, 0], R[:, 1], R[:, 2]
    bc = xp.cross(b, c)
    return xp.stack([bc, xp.cross(c, a), xp.cross(a, b)], axis=1) / (a @ bc)


def orthonormalize(R, xp=np, iterations: int = 2):
    """Polar factor by Newton iteration R <- (R + R^-T) / 2; smooth, so usable under AD."""
    for _ in range(iterations):
        R = 0.5 * (R + _inverse_transpose(R, xp))
    return R


def rk4_step(x, h, ustar_xy, EI, GJ, mask, xp=np):
    """One classical RK4 step of the rod state followed by rotation re-projection."""
    f = lambda y: state_rhs(y, ustar_xy, EI, GJ, mask, xp)  # noqa: E731
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    y = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    R = orthonormalize(y[3:12].reshape(3, 3), xp)
    return xp.concatenate([y[:3], R.reshape(9), y[12:]])


def segment_masks(n: int) -> np.ndarray:
    """masks[k, i] = 1 if tube i is present on segment k = [ell_{k-1}, ell_k]."""
    return np.triu(np.ones((n, n)))


# ---------------------------------------------------------------------------
# public single-point operations


def torsion_rhs(s, psi, u_z, tubes: TubeSet):
    """(dpsi, du_z) restricted to the tubes active at s."""
    idx = active_set(s, tubes)
    if not idx:
        raise ValueError("empty active set")
    psi = np.asarray(psi, float)
    u_z = np.asarray(u_z, float)
    sub = np.array(idx)
    du = torsion_rate(psi, tubes.ustar_xy[sub], tubes.EI[sub], tubes.GJ[sub], np.ones(len(idx)))
    return u_z.copy(), du


def resultant_curvature(s, psi, tubes: TubeSet) -> np.ndarray:
    """u_ixy for each active tube at s, rows in active-set order."""
    idx = np.array(active_set(s, tubes))
    return curvature_xy(np.asarray(psi, float), tubes.ustar_xy[idx], tubes.EI[idx], np.ones(len(idx)))


def integrate_frame(R, p, u, ds: float, steps: int = 1):
    """Advance R' = R hat(u), p' = R e3 with constant body curvature u over ds."""
    if not ds > 0:
        raise ValueError("ds must be positive")
    u = np.asarray(u, float)
    R = np.asarray(R, float)
    p = np.asarray(p, float)
    h = ds / steps
    K = hat(u)

    def f(R_):
        return R_ @ K, R_[:, 2]

    for _ in range(steps):
        k1R, k1p = f(R)
        k2R, k2p = f(R + 0.5 * h * k1R)
        k3R, k3p = f(R + 0.5 * h * k2R)
        k4R, k4p = f(R + h * k3R)
        p = p + h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
        R = project_to_rotation(R + h / 6.0 * (k1R + 2 * k2R + 2 * k3R + k4R))
    return R, p


# ---------------------------------------------------------------------------
# boundary-value problem


def _initial_state(p0, R0, psi0, uz0):
    return np.concatenate([np.asarray(p0, float), np.asarray(R0, float).reshape(9), psi0, uz0])


def _rollout(tubes: TubeSet, uz0, p0, R0, nodes: int, keep: bool):
    """Integrate all segments from the base; return terminal torsion residuals (and nodes)."""
    n = len(tubes)
    ell = tubes.ell
    ustar, EI, GJ = tubes.ustar_xy, tubes.EI, tubes.GJ
    psi0 = tubes.alpha - tubes.beta * uz0
    x = _initial_state(p0, R0, psi0, uz0)
    masks = segment_masks(n)
    resid = np.zeros(n)
    s_nodes, x_nodes = [0.0], [x]
    start = 0.0
    for k in range(n):
        sigma = ell[k] - start
        if sigma > 0:
            h = sigma / (nodes - 1)
            for j in range(nodes - 1):
                x = rk4_step(x, h, ustar, EI, GJ, masks[k])
                if keep:
                    s_nodes.append(start + (j + 1) * h)
                    x_nodes.append(x)
        resid[k] = x[12 + n + k]
        start = ell[k]
    return resid, (np.array(s_nodes), np.array(x_nodes))


def _torsion_residuals(tubes: TubeSet, UZ0, nodes: int):
    """Terminal torsion rates u_kz(ell_k) for a batch of initial guesses, shape (B, n).

    The (psi, u_z) equations do not involve the frame, so RK4 on this
    subsystem alone reproduces the torsion part of the full rollout exactly.
    """
    n = len(tubes)
    ell = tubes.ell
    ux, uy = tubes.ustar_xy[:, 0], tubes.ustar_xy[:, 1]
    D = np.outer(ux, ux) + np.outer(uy, uy)
    X = np.outer(uy, ux) - np.outer(ux, uy)
    EI, GJ = tubes.EI, tubes.GJ
    uz = np.array(UZ0, float)
    psi = tubes.alpha - tubes.beta * uz
    masks = segment_masks(n)
    resid = np.empty_like(uz)
    start = 0.0
    for k in range(n):
        mask = masks[k]
        w = mask * EI
        gain = mask * EI / (w.sum() * GJ)

        def rate(ps):
            d = ps[:, :, None] - ps[:, None, :]  # psi_i - psi_j
            return gain * ((np.sin(d) * D + np.cos(d) * X) @ w)

        sigma = ell[k] - start
        if sigma > 0:
            h = sigma / (nodes - 1)
            for _ in range(nodes - 1):
                k1p, k1u = mask * uz, rate(psi)
                k2p, k2u = mask * (uz + 0.5 * h * k1u), rate(psi + 0.5 * h * k1p)
                k3p, k3u = mask * (uz + 0.5 * h * k2u), rate(psi + 0.5 * h * k2p)
                k4p, k4u = mask * (uz + h * k3u), rate(psi + h * k3p)
                psi = psi + (h / 6.0) * (k1p + 2 * k2p + 2 * k3p + k4p)
                uz = uz + (h / 6.0) * (k1u + 2 * k2u + 2 * k3u + k4u)
        resid[:, k] = uz[:, k]
        start = ell[k]
    return resid


def _newton(F, x0, tol, max_iter, fd_step=1e-7):
    """Damped Newton with a forward-difference Jacobian; returns (x, |F|_inf, iterations).

    ``F`` maps a (B, m) batch of points to (B, m) residuals so the m + 1
    evaluations behind each Jacobian run as one batch.
    """
    x = np.array(x0, float)
    r = F(x[None])[0]
    nrm = np.max(np.abs(r)) if r.size else 0.0
    it = 0
    while nrm > tol and it < max_iter:
        it += 1
        steps = fd_step * (1.0 + np.abs(x))
        Rb = F(x[None] + np.diag(steps))
        J = (Rb - r).T / steps
        dx = np.linalg.lstsq(J, -r, rcond=None)[0]
        t = 1.0
        while True:
            xn = x + t * dx
            rn = F(xn[None])[0]
            nn = np.max(np.abs(rn))
            if nn < nrm or t < 1e-4:
                break
            t *= 0.5
        if not np.isfinite(nn):
            break
        x, r, nrm = xn, rn, nn
    return x, nrm, it


def shoot_forward(
    tubes: TubeSet,
    p0=(0.0, 0.0, 0.0),
    R0=None,
    nodes_per_segment: int = 50,
    tol: float = 1e-10,
    max_iter: int = 50,
    uz_guess=None,
) -> RobotPath:
    """Solve the torsion boundary-value problem by shooting and return the full path.

    Unknowns are u_iz(0) of the tubes with positive extension; psi_i(0) follows
    from alpha_i - beta_i u_iz(0) at every trial, and the residuals are u_iz(ell_i).
    Raises :class:`ShootingError` when Newton fails to reach ``tol``.
    """
    R0 = np.eye(3) if R0 is None else np.asarray(R0, float)
    p0 = np.asarray(p0, float)
    if nodes_per_segment < 2:
        raise ValueError("nodes_per_segment must be >= 2")
    n_all = len(tubes)
    present = [i for i, t in enumerate(tubes.tubes) if t.ell > 0]
    if not present:
        return RobotPath(
            s=np.zeros(1), p=p0[None], R=R0[None], psi=tubes.alpha[None], u_z=np.zeros((1, n_all)),
            u_xy=np.zeros((1, 2)), segment_ends=tubes.ell, info={"iterations": 0, "residual": 0.0},
        )
    sub = TubeSet(tuple(tubes.tubes[i] for i in present))

    def F(UZ):
        with np.errstate(over="ignore", invalid="ignore"):
            return _torsion_residuals(sub, UZ, nodes_per_segment)

    guess = np.zeros(len(sub)) if uz_guess is None else np.asarray(uz_guess, float)[present]
    uz0, res, it = _newton(F, guess, tol, max_iter)
    if res > tol:
        raise ShootingError("torsion shooting did not converge", res)
    _, (s, X) = _rollout(sub, uz0, p0, R0, nodes_per_segment, keep=True)
    m = len(sub)
    psi = np.tile(tubes.alpha, (len(s), 1))
    uz = np.zeros((len(s), n_all))
    psi[:, present] = X[:, 12 : 12 + m]
    uz[:, present] = X[:, 12 + m : 12 + 2 * m]
    masks = segment_masks(m)
    ends = sub.ell
    uxy = np.empty((len(s), 2))
    for k in range(len(s)):
        seg = min(int(np.searchsorted(ends, s[k] - 1e-12)), m - 1)
        uxy[k] = curvature_xy(X[k, 12 : 12 + m], sub.ustar_xy, sub.EI, masks[seg])[m - 1]
    return RobotPath(
        s=s,
        p=X[:, :3],
        R=X[:, 3:12].reshape(-1, 3, 3),
        psi=psi,
        u_z=uz,
        u_xy=uxy,
        segment_ends=tubes.ell,
        info={"iterations": it, "residual": float(res), "uz0": uz[0].tolist()},
    )


def with_actuation(tubes: TubeSet, alpha=None, beta=None) -> TubeSet:
    out = []
    for k, t in enumerate(tubes.tubes):
        out.append(
            replace(
                t,
                alpha=t.alpha if alpha is None else float(alpha[k]),
                beta=t.beta if beta is None else float(beta[k]),
            )
        )
    return TubeSet(tuple(out))
