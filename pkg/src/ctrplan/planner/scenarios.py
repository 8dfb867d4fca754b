"""Initial guesses and a small synthetic planning scenario."""
from __future__ import annotations

import numpy as np

from ctrplan.geometry import Ellipsoid, HalfSpace, q_dist_sq, quaternion_from_rotation
from ctrplan.planner.problem import Decision, PlanBounds, PlanProblem


def frame_along(direction) -> np.ndarray:
    """A rotation whose third column is ``direction``."""
    z = np.asarray(direction, float)
    z = z / np.linalg.norm(z)
    e = np.eye(3)[int(np.argmin(np.abs(z)))]
    x = e - (e @ z) * z
    x /= np.linalg.norm(x)
    return np.column_stack([x, np.cross(z, x), z])


def skull_entry(problem: PlanProblem, direction) -> np.ndarray:
    """Point of the skull boundary on the ray from the target centre along ``direction``."""
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    S, c = problem.skull, problem.target.c
    a = d @ S.Q @ d
    b = 2.0 * d @ S.Q @ (c - S.c)
    k = q_dist_sq(c, S) - 1.0
    t = (-b + np.sqrt(b * b - 4 * a * k)) / (2 * a)
    return c + t * d


def straight_decision(problem: PlanProblem, entry=None, rho=(1.0e-3, 1.2e-3), gap=1e-4) -> Decision:
    """Straight tubes from a skull entry point to the target centre.

    ``entry`` defaults to the skull point beyond the target seen from the
    skull centre (or straight up when the two centres coincide).  All tubes
    share the extension so the outer ones are fully retracted except the
    last.
    """
    n = problem.n_tubes
    if entry is None:
        d = problem.target.c - problem.skull.c
        if np.linalg.norm(d) < 1e-12:
            d = np.array([0.0, 0.0, 1.0])
        entry = skull_entry(problem, d)
    entry = np.asarray(entry, float)
    chord = problem.target.c - entry
    length = float(np.linalg.norm(chord))
    R0 = frame_along(chord)
    # nested diameters, innermost tube last
    rho_o = np.array([rho[1] - k * (rho[1] - rho[0] + gap) for k in range(n)])
    rho_i = rho_o - (rho[1] - rho[0])
    if rho_i[-1] <= 0:
        raise ValueError("too many tubes for the default diameters")
    L = np.full(n, length)
    beta = np.zeros(n)
    return Decision(np.zeros((n, 3)), L, rho_i, rho_o, np.zeros(n), beta, entry,
                    quaternion_from_rotation(R0))


def random_direction(rng, axis=(0.0, 0.0, 1.0), max_angle: float = np.pi / 2) -> np.ndarray:
    """Uniform unit vector on the spherical cap of half-angle ``max_angle`` around ``axis``."""
    cos_t = rng.uniform(np.cos(max_angle), 1.0)
    phi = rng.uniform(0.0, 2 * np.pi)
    sin_t = np.sqrt(1.0 - cos_t**2)
    local = np.array([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t])
    return frame_along(axis) @ local


def random_straight_decision(problem: PlanProblem, rng, axis=(0.0, 0.0, 1.0), max_angle: float = np.pi / 2) -> Decision:
    """Straight guess entering where a random ray from the target leaves the skull."""
    return straight_decision(problem, skull_entry(problem, random_direction(rng, axis, max_angle)))


def toy_problem(obstacle: bool = True) -> PlanProblem:
    """Ball skull of radius 0.1 m at the origin, a 1 cm target ball below the top
    entry point and a plate-like obstacle centred on the vertical chord.

    The plate is narrowest along x, so the cheapest detour passes it on an x
    side, and it spans the skull along y.  Pre-curvatures are limited to
    10 1/m so the shortest admissible paths are nearly straight chords.
    """
    skull = Ellipsoid.ball([0.0, 0.0, 0.0], 0.1)
    target = Ellipsoid.ball([0.0, 0.0, 0.02], 0.01)
    hemi = HalfSpace([0.0, 0.0, -20.0], 1.0, "<=")  # z >= -0.05
    obstacles = []
    if obstacle:
        obstacles.append(Ellipsoid([0.0, 0.0, 0.06], np.diag([1 / 0.05**2, 1 / 0.09**2, 1 / 0.015**2])))
    return PlanProblem(skull, hemi, target, tuple(obstacles), frozenset(), n_tubes=1,
                       bounds=PlanBounds(u_star=(-10.0, 10.0)))


TOY_ENTRY = np.array([0.0, 0.0, 0.1])
