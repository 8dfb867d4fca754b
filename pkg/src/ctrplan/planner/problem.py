"""Planning problem data, decisions, results and the obstacle relaxation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from ctrplan.geometry import Ellipsoid, HalfSpace, q_dist_sq, rotation_from_quaternion
from ctrplan.kinematics import NITINOL_E, NITINOL_G, RobotPath, Tube, TubeSet

# displacement applied to each perturbable obstacle centre when exiling it
SHIFT_DISTANCE = 0.4


@dataclass(frozen=True)
class PlanBounds:
    """Boxes on the design parameters (meters, 1/m)."""

    L: tuple = (1e-3, 1.0)
    rho: tuple = (2e-4, 3e-3)
    u_star: tuple = (-50.0, 50.0)
    u_star_z: tuple = (0.0, 0.0)
    wall_min: float = 5e-5

    @classmethod
    def from_dict(cls, d: dict) -> "PlanBounds":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def to_dict(self) -> dict:
        return {"L": list(self.L), "rho": list(self.rho), "u_star": list(self.u_star),
                "u_star_z": list(self.u_star_z), "wall_min": self.wall_min}


@dataclass(frozen=True)
class PlanProblem:
    """Skull, hemisphere, target and obstacles for an n-tube robot.

    ``fixed_idx`` holds 0-based indices of obstacles the homotopy leaves in
    place.  ``hemi`` may be ``None`` when no hemisphere restriction applies.
    """

    skull: Ellipsoid
    hemi: HalfSpace | None
    target: Ellipsoid
    obstacles: tuple = ()
    fixed_idx: frozenset = frozenset()
    n_tubes: int = 1
    bounds: PlanBounds = field(default_factory=PlanBounds)
    E: float = NITINOL_E
    G: float = NITINOL_G

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "fixed_idx", frozenset(int(i) for i in self.fixed_idx))
        if self.n_tubes < 1:
            raise ValueError("n_tubes must be >= 1")
        bad = [i for i in self.fixed_idx if not 0 <= i < len(self.obstacles)]
        if bad:
            raise ValueError(f"fixed obstacle indices out of range: {sorted(bad)}")
        if q_dist_sq(self.target.c, self.skull) > 1.0:
            raise ValueError("target centre lies outside the skull")

    @property
    def K(self) -> int:
        return len(self.obstacles)

    @property
    def free_idx(self) -> list:
        return [j for j in range(self.K) if j not in self.fixed_idx]

    @property
    def length_scale(self) -> float:
        return float(np.max(self.skull.semi_axes))

    def with_obstacles(self, obstacles, fixed_idx=frozenset()) -> "PlanProblem":
        return replace(self, obstacles=tuple(obstacles), fixed_idx=frozenset(fixed_idx))

    def to_dict(self) -> dict:
        return {
            "skull": self.skull.to_dict(),
            "hemi": None if self.hemi is None else self.hemi.to_dict(),
            "target": self.target.to_dict(),
            "obstacles": [e.to_dict() for e in self.obstacles],
            "fixed_idx": sorted(self.fixed_idx),
            "n_tubes": self.n_tubes,
            "bounds": self.bounds.to_dict(),
        }


@dataclass
class Decision:
    """Design and actuation variables of an n-tube robot plus its base pose."""

    u_star: np.ndarray  # (n, 3)
    L: np.ndarray
    rho_i: np.ndarray
    rho_o: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    p0: np.ndarray
    q0: np.ndarray

    def __post_init__(self):
        self.u_star = np.asarray(self.u_star, float).reshape(-1, 3)
        for name in ("L", "rho_i", "rho_o", "alpha", "beta"):
            setattr(self, name, np.asarray(getattr(self, name), float).reshape(-1))
        self.p0 = np.asarray(self.p0, float).reshape(3)
        self.q0 = np.asarray(self.q0, float).reshape(4)

    @property
    def n(self) -> int:
        return len(self.L)

    @property
    def ell(self) -> np.ndarray:
        return self.L + self.beta

    @property
    def R0(self) -> np.ndarray:
        return rotation_from_quaternion(self.q0)

    def validate(self, tol: float = 0.0) -> None:
        if np.any(self.L <= 0):
            raise ValueError("tube lengths must be positive")
        if np.any(np.diff(self.L) < -tol):
            raise ValueError("tube lengths must be non-decreasing from the outermost tube")
        if np.any(self.beta > tol) or np.any(self.beta < -self.L - tol):
            raise ValueError("translations must satisfy -L <= beta <= 0")

    def to_tubes(self, E: float = NITINOL_E, G: float = NITINOL_G) -> TubeSet:
        """TubeSet with beta clipped into [-L, 0] to absorb solver tolerance."""
        beta = np.clip(self.beta, -self.L, 0.0)
        return TubeSet(tuple(
            Tube(L=float(self.L[i]), beta=float(beta[i]), alpha=float(self.alpha[i]),
                 u_star=tuple(self.u_star[i]), rho_i=float(self.rho_i[i]),
                 rho_o=float(self.rho_o[i]), E=E, G=G)
            for i in range(self.n)
        ))

    def to_dict(self) -> dict:
        return {
            "u_star": self.u_star.tolist(),
            "L": self.L.tolist(),
            "rho_i": self.rho_i.tolist(),
            "rho_o": self.rho_o.tolist(),
            "alpha": np.mod(self.alpha, 2 * np.pi).tolist(),
            "beta": self.beta.tolist(),
            "p0": self.p0.tolist(),
            "q0": (self.q0 / np.linalg.norm(self.q0)).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Decision":
        return cls(**{k: np.asarray(d[k], float) for k in
                      ("u_star", "L", "rho_i", "rho_o", "alpha", "beta", "p0", "q0")})


@dataclass
class PlanResult:
    decision: Decision | None
    path: RobotPath | None
    objective: float
    lambda_reached: float
    status: str  # optimal | homotopy_stalled | infeasible
    solver_stats: list = field(default_factory=list)
    stage: str = ""

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "stage": self.stage,
            "lambda_reached": self.lambda_reached,
            "objective": self.objective,
            "decision": None if self.decision is None else self.decision.to_dict(),
            "solver_stats": self.solver_stats,
            "path": None if self.path is None else self.path.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# ---------------------------------------------------------------------------
# obstacle relaxation


def _tie_break_direction(d):
    """Unit vector orthogonal to d built from the coordinate axis least aligned with it.

    Near-ties (within 1e-9) go to the lowest axis index so that round-off in
    d cannot flip the choice.
    """
    d = d / np.linalg.norm(d)
    a = np.abs(d)
    e = np.eye(3)[int(np.flatnonzero(a <= a.min() + 1e-9)[0])]
    v = e - (e @ d) * d
    return v / np.linalg.norm(v)


def closest_on_segment(c, p_a, p_b):
    """(a, l): segment parameter of the projection and the closest segment point."""
    c, p_a, p_b = (np.asarray(v, float) for v in (c, p_a, p_b))
    d = p_b - p_a
    a = float((c - p_a) @ d / (d @ d))
    if a < 0:
        return a, p_a.copy()
    if a > 1:
        return a, p_b.copy()
    return a, p_a + a * d


def shift_targets(problem: PlanProblem, p_a, p_b, distance: float = SHIFT_DISTANCE) -> list:
    """Exiled centres for the non-fixed obstacles, in ascending index order.

    Each centre moves by ``distance`` away from its closest point on the
    segment [p_a, p_b].  A centre lying on the segment moves along a fixed
    direction orthogonal to it.
    """
    p_a = np.asarray(p_a, float)
    p_b = np.asarray(p_b, float)
    if np.linalg.norm(p_b - p_a) == 0.0:
        raise ValueError("p_a and p_b coincide")
    out = []
    for j in problem.free_idx:
        c = problem.obstacles[j].c
        _, l = closest_on_segment(c, p_a, p_b)
        r = c - l
        nr = np.linalg.norm(r)
        u = _tie_break_direction(p_b - p_a) if nr < 1e-9 else r / nr
        out.append(c + distance * u)
    return out


def relax(problem: PlanProblem, lam: float, c_init) -> PlanProblem:
    """Move non-fixed obstacle centres to (1 - lam) c_init + lam c; shapes stay."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    free = problem.free_idx
    if len(c_init) != len(free):
        raise ValueError(f"expected {len(free)} initial centres, got {len(c_init)}")
    obs = list(problem.obstacles)
    for j, ci in zip(free, c_init):
        e = obs[j]
        obs[j] = Ellipsoid((1.0 - lam) * np.asarray(ci, float) + lam * e.c, e.Q)
    return replace(problem, obstacles=tuple(obs))


def default_fixed_idx(problem: PlanProblem) -> frozenset:
    """The single obstacle whose centre is nearest the target centre."""
    if problem.K == 0:
        return frozenset()
    d = [np.linalg.norm(e.c - problem.target.c) for e in problem.obstacles]
    return frozenset([int(np.argmin(d))])
