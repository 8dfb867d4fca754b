"""Multiple-shooting transcription of the planning problem.

The arc length is split into one segment per tube, [ell_{k-1}, ell_k], each
sampled at ``N`` nodes (shared endpoints).  Node states after the base are
free variables chained by RK4 defect equalities; the base state is a function
of the decision (p0, q0, psi0 = alpha - beta u_z(0)).  Segment lengths sigma
are variables, so ell = cumsum(sigma) and beta = ell - L.

Everything except the obstacle block is written once in jax and compiled per
:class:`Layout`; problem data (ellipsoids, materials, scales) is passed as
arguments, so relaxed problems and seed problems with fewer obstacles reuse
the compiled code.  Obstacle constraints 1 - |p - c|_Q^2 are quadratic in
the node positions and are differentiated by hand.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from functools import partial

import jax
import jax.numpy as jnp
import numpy as np

from ctrplan.kinematics import (
    RobotPath,
    ShootingError,
    curvature_xy,
    rk4_step,
    second_moment,
    segment_masks,
    shoot_forward,
)
from ctrplan.planner.problem import Decision, PlanProblem

jax.config.update("jax_enable_x64", True)
# compiling the Lagrangian Hessian dominates a first solve; an on-disk cache
# lets repeated runs with the same layout skip it
if os.environ.get("CTRPLAN_JAX_CACHE"):
    jax.config.update("jax_compilation_cache_dir", os.environ["CTRPLAN_JAX_CACHE"])
    jax.config.update("jax_persistent_cache_min_compile_time_secs", 1.0)

EQ_BLOCKS = ("defects", "boundary", "quaternion")
_JAX_INEQ = ("skull", "hemi", "target", "L_order", "beta_max", "rho_nest", "rho_wall")
INEQ_BLOCKS = _JAX_INEQ + ("obstacles",)


@dataclass(frozen=True)
class Layout:
    """Static shape of a transcription: tubes and nodes per segment."""

    n: int
    N: int
    hemi: bool = True
    substeps: int = 1

    @property
    def state_dim(self) -> int:
        return 12 + 2 * self.n

    @property
    def total_nodes(self) -> int:
        return self.n * (self.N - 1) + 1

    @property
    def slices(self) -> dict:
        n = self.n
        sizes = [
            ("u_star", 3 * n), ("L", n), ("rho_i", n), ("rho_o", n), ("alpha", n),
            ("sigma", n), ("p0", 3), ("q0", 4), ("uz0", n),
            ("X", (self.total_nodes - 1) * self.state_dim),
        ]
        out, k = {}, 0
        for name, size in sizes:
            out[name] = slice(k, k + size)
            k += size
        return out

    @property
    def size(self) -> int:
        return self.slices["X"].stop

    def position_index(self) -> np.ndarray:
        """(total_nodes, 3) indices of the node positions in the variable vector."""
        sl = self.slices
        base = sl["p0"].start + np.arange(3)
        rest = sl["X"].start + self.state_dim * np.arange(self.total_nodes - 1)[:, None] + np.arange(3)
        return np.vstack([base, rest])

    def block_sizes(self, K: int = 0) -> dict:
        n, M = self.n, self.total_nodes
        return {
            "defects": (M - 1) * self.state_dim,
            "boundary": 1 + n,
            "quaternion": 1,
            "skull": M,
            "hemi": M if self.hemi else 0,
            "obstacles": M * K,
            "target": 1,
            "L_order": n - 1,
            "beta_max": n,
            "rho_nest": n - 1,
            "rho_wall": n,
        }


def _rot(q):
    q = q / jnp.sqrt(q @ q)
    q0, q1, q2, q3 = q[0], q[1], q[2], q[3]
    return jnp.stack([
        jnp.stack([1 - 2 * (q2 * q2 + q3 * q3), 2 * (q1 * q2 - q0 * q3), 2 * (q1 * q3 + q0 * q2)]),
        jnp.stack([2 * (q1 * q2 + q0 * q3), 1 - 2 * (q1 * q1 + q3 * q3), 2 * (q2 * q3 - q0 * q1)]),
        jnp.stack([2 * (q1 * q3 - q0 * q2), 2 * (q2 * q3 + q0 * q1), 1 - 2 * (q1 * q1 + q2 * q2)]),
    ])


def _qd(P, c, Q):
    D = P - c
    return jnp.einsum("...i,ij,...j->...", D, Q, D)


def _unpack(lay: Layout, x, scale):
    v = x * scale
    sl = lay.slices
    n = lay.n
    return {
        "u_star": v[sl["u_star"]].reshape(n, 3),
        "L": v[sl["L"]],
        "rho_i": v[sl["rho_i"]],
        "rho_o": v[sl["rho_o"]],
        "alpha": v[sl["alpha"]],
        "sigma": v[sl["sigma"]],
        "p0": v[sl["p0"]],
        "q0": v[sl["q0"]],
        "uz0": v[sl["uz0"]],
        "X": v[sl["X"]].reshape(lay.total_nodes - 1, lay.state_dim),
    }


def _base_state(v):
    beta = jnp.cumsum(v["sigma"]) - v["L"]
    psi0 = v["alpha"] - beta * v["uz0"]
    return jnp.concatenate([v["p0"], _rot(v["q0"]).reshape(9), psi0, v["uz0"]])


def _integrate(lay: Layout, x0, h, ustar_xy, EI, GJ, mask):
    x = x0
    for _ in range(lay.substeps):
        x = rk4_step(x, h / lay.substeps, ustar_xy, EI, GJ, mask, xp=jnp)
    return x


def _constraint_blocks(lay: Layout, x, data):
    n, N = lay.n, lay.N
    v = _unpack(lay, x, data["scale"])
    X = jnp.concatenate([_base_state(v)[None], v["X"]])
    I = second_moment(v["rho_i"], v["rho_o"], jnp)
    EI, GJ = data["E"] * I, data["G"] * 2.0 * I
    ustar_xy = v["u_star"][:, :2]
    masks = jnp.asarray(segment_masks(n))

    defects = []
    terminal = []
    for k in range(n):
        h = v["sigma"][k] / (N - 1)
        a, b = k * (N - 1), (k + 1) * (N - 1)
        step = jax.vmap(lambda xs: _integrate(lay, xs, h, ustar_xy, EI, GJ, masks[k]))(X[a:b])
        defects.append((X[a + 1 : b + 1] - step) / data["state_scale"])
        terminal.append(X[b, 12 + n + k] * data["ls"])
    P = X[:, :3]
    blocks = {
        "defects": jnp.concatenate(defects).reshape(-1),
        "boundary": jnp.concatenate([(_qd(v["p0"], data["skull_c"], data["skull_Q"]) - 1.0)[None],
                                     jnp.stack(terminal)]),
        "quaternion": (v["q0"] @ v["q0"] - 1.0)[None],
        "skull": _qd(P, data["skull_c"], data["skull_Q"]) - 1.0,
        "hemi": (data["hemi_sgn"] * (P @ data["hemi_h"] - data["hemi_off"])) if lay.hemi else jnp.zeros(0),
        "target": (_qd(P[-1], data["target_c"], data["target_Q"]) - 1.0)[None],
        "L_order": (v["L"][:-1] - v["L"][1:]) / data["ls"],
        "beta_max": (jnp.cumsum(v["sigma"]) - v["L"]) / data["ls"],
        "rho_nest": (v["rho_o"][1:] - v["rho_i"][:-1]) / data["rho_scale"],
        "rho_wall": (v["rho_i"] - v["rho_o"] + data["wall_min"]) / data["rho_scale"],
    }
    return blocks


def _split(lay, x, data):
    b = _constraint_blocks(lay, x, data)
    return jnp.concatenate([b[k] for k in EQ_BLOCKS]), jnp.concatenate([b[k] for k in _JAX_INEQ])


@partial(jax.jit, static_argnums=0)
def _eval(lay, x, data):
    return _split(lay, x, data)


@partial(jax.jit, static_argnums=0)
def _pull(lay, x, data, wc, wg):
    _, vjp = jax.vjp(lambda z: _split(lay, z, data), x)
    return vjp((wc, wg))[0]


@partial(jax.jit, static_argnums=0)
def _jac(lay, x, data):
    return jax.jacfwd(lambda z: _split(lay, z, data))(x)


@partial(jax.jit, static_argnums=0)
def _hess(lay, x, data, wc, wg):
    def lag(z):
        c, g = _split(lay, z, data)
        return wc @ c + wg @ g

    return jax.hessian(lag)(x)


@partial(jax.jit, static_argnums=0)
def _blocks(lay, x, data):
    return _constraint_blocks(lay, x, data)


class Nlp:
    """Scaled NLP for one planning problem; satisfies :class:`ctrplan.optim.NlpModel`.

    Internal variables are physical values divided by ``scale``.
    ``derivatives`` is ``"ad"`` (reverse-mode through the RK4 steps) or
    ``"fd"`` (forward differences with step 1e-7 (1 + |x|)).
    """

    def __init__(self, problem: PlanProblem, nodes_per_segment: int = 11, substeps: int = 1,
                 derivatives: str = "ad"):
        if nodes_per_segment < 2:
            raise ValueError("nodes_per_segment must be >= 2")
        if derivatives not in ("ad", "fd"):
            raise ValueError(f"unknown derivative mode {derivatives!r}")
        self.problem = problem
        self.derivatives = derivatives
        self.layout = lay = Layout(problem.n_tubes, nodes_per_segment, problem.hemi is not None, substeps)
        self.n = lay.size
        ls = problem.length_scale
        self.length_scale = ls
        self.scale = self._scales(lay, ls)
        self.data = self._data(problem, ls)
        self.lb, self.ub = self._bounds(problem)
        self.K = problem.K
        self._obs_c = np.array([e.c for e in problem.obstacles]).reshape(-1, 3)
        self._obs_Q = np.array([e.Q for e in problem.obstacles]).reshape(-1, 3, 3)
        self._pos = lay.position_index()
        sizes = lay.block_sizes(self.K)
        self.eq_sizes = {k: sizes[k] for k in EQ_BLOCKS}
        self.ineq_sizes = {k: sizes[k] for k in INEQ_BLOCKS}
        self._grad = np.zeros(self.n)
        sl = lay.slices["sigma"]
        self._grad[sl] = self.scale[sl] / ls

    # -- setup ---------------------------------------------------------------

    @staticmethod
    def _state_scale(lay, ls):
        n = lay.n
        return np.concatenate([np.full(3, ls), np.ones(9), np.ones(n), np.full(n, 1.0 / ls)])

    def _scales(self, lay, ls):
        sl = lay.slices
        s = np.ones(lay.size)
        s[sl["u_star"]] = 1.0 / ls
        for name in ("L", "sigma", "p0"):
            s[sl[name]] = ls
        s[sl["rho_i"]] = s[sl["rho_o"]] = 1e-3
        s[sl["uz0"]] = 1.0 / ls
        s[sl["X"]] = np.tile(self._state_scale(lay, ls), lay.total_nodes - 1)
        return s

    def _data(self, pb: PlanProblem, ls):
        lay = self.layout
        hemi = pb.hemi
        return {
            "scale": jnp.asarray(self.scale),
            "state_scale": jnp.asarray(self._state_scale(lay, ls)),
            "ls": ls,
            "rho_scale": 1e-3,
            "wall_min": pb.bounds.wall_min,
            "E": pb.E,
            "G": pb.G,
            "skull_c": jnp.asarray(pb.skull.c),
            "skull_Q": jnp.asarray(pb.skull.Q),
            "target_c": jnp.asarray(pb.target.c),
            "target_Q": jnp.asarray(pb.target.Q),
            "hemi_h": jnp.asarray(hemi.h if hemi else np.zeros(3)),
            "hemi_off": hemi.offset if hemi else 0.0,
            "hemi_sgn": (1.0 if hemi.sign == "<=" else -1.0) if hemi else 0.0,
        }

    def _bounds(self, pb: PlanProblem):
        lay, b = self.layout, pb.bounds
        sl = lay.slices
        lb = np.full(lay.size, -np.inf)
        ub = np.full(lay.size, np.inf)
        us_lo = np.tile([b.u_star[0], b.u_star[0], b.u_star_z[0]], lay.n)
        us_hi = np.tile([b.u_star[1], b.u_star[1], b.u_star_z[1]], lay.n)
        lb[sl["u_star"]], ub[sl["u_star"]] = us_lo, us_hi
        lb[sl["L"]], ub[sl["L"]] = b.L
        lb[sl["rho_i"]], ub[sl["rho_i"]] = b.rho
        lb[sl["rho_o"]], ub[sl["rho_o"]] = b.rho
        lb[sl["alpha"]], ub[sl["alpha"]] = -2 * np.pi, 4 * np.pi
        lb[sl["sigma"]], ub[sl["sigma"]] = 0.0, b.L[1]
        lb[sl["q0"]], ub[sl["q0"]] = -1.5, 1.5
        return lb / self.scale, ub / self.scale

    # -- NlpModel ------------------------------------------------------------

    def objective(self, x):
        return float(self._grad @ x), self._grad

    # obstacle block, rows ordered (obstacle, node)

    def _obstacle_values(self, x):
        P = x[self._pos] * self.length_scale
        D = P[None, :, :] - self._obs_c[:, None, :]
        return 1.0 - np.einsum("kmi,kij,kmj->km", D, self._obs_Q, D).reshape(-1), D

    def _obstacle_grad(self, D):
        # d g_km / d x at the position slots of node m
        return -2.0 * self.length_scale * np.einsum("kij,kmj->kmi", self._obs_Q, D)

    def _obstacle_pull(self, D, w):
        G = self._obstacle_grad(D) * w.reshape(self.K, -1)[:, :, None]
        out = np.zeros(self.n)
        np.add.at(out, self._pos, G.sum(axis=0))
        return out

    def _obstacle_jacobian(self, D):
        G = self._obstacle_grad(D)
        M = len(self._pos)
        J = np.zeros((self.K * M, self.n))
        rows = np.arange(self.K * M)
        for a in range(3):
            J[rows, np.tile(self._pos[:, a], self.K)] = G[:, :, a].reshape(-1)
        return J

    def _obstacle_hessian(self, w):
        W = w.reshape(self.K, -1)
        blocks = -2.0 * self.length_scale**2 * np.einsum("km,kij->mij", W, self._obs_Q)
        H = np.zeros((self.n, self.n))
        for m, idx in enumerate(self._pos):
            H[np.ix_(idx, idx)] += blocks[m]
        return H

    def _values(self, x):
        c, g = _eval(self.layout, jnp.asarray(x), self.data)
        go, D = self._obstacle_values(np.asarray(x))
        return np.asarray(c), np.concatenate([np.asarray(g), go]), D

    def constraints(self, x):
        x = np.asarray(x, float)
        c, g, D = self._values(x)
        nj = len(g) - self.ineq_sizes["obstacles"]
        if self.derivatives == "ad":
            xj = jnp.asarray(x)

            def pull(wc, wg):
                out = np.asarray(_pull(self.layout, xj, self.data, jnp.asarray(wc), jnp.asarray(wg[:nj])))
                if self.K:
                    out = out + self._obstacle_pull(D, np.asarray(wg[nj:]))
                return out
        else:
            Jc, Jg = self.jacobian_fd(x)

            def pull(wc, wg):
                return Jc.T @ wc + Jg.T @ wg
        return c, g, pull

    def jacobians(self, x):
        x = np.asarray(x, float)
        if self.derivatives == "fd":
            return self.jacobian_fd(x)
        Jc, Jg = _jac(self.layout, jnp.asarray(x), self.data)
        Jg = np.asarray(Jg)
        if self.K:
            Jg = np.vstack([Jg, self._obstacle_jacobian(self._obstacle_values(x)[1])])
        return np.asarray(Jc), Jg

    def hessian(self, x, wc, wg):
        """Hessian of the Lagrangian (the objective is linear)."""
        nj = len(wg) - self.ineq_sizes["obstacles"]
        H = np.array(_hess(self.layout, jnp.asarray(x), self.data, jnp.asarray(wc), jnp.asarray(wg[:nj])))
        if self.K:
            H += self._obstacle_hessian(np.asarray(wg[nj:]))
        return H

    def jacobian_fd(self, x, step: float = 1e-7):
        c0, g0, _ = self._values(x)
        Jc = np.empty((len(c0), self.n))
        Jg = np.empty((len(g0), self.n))
        for j in range(self.n):
            e = np.zeros(self.n)
            e[j] = step * (1.0 + abs(x[j]))
            c1, g1, _ = self._values(x + e)
            Jc[:, j] = (c1 - c0) / e[j]
            Jg[:, j] = (g1 - g0) / e[j]
        return Jc, Jg

    def blocks(self, x) -> dict:
        out = {k: np.asarray(v) for k, v in _blocks(self.layout, jnp.asarray(x), self.data).items()}
        out["obstacles"] = self._obstacle_values(np.asarray(x, float))[0]
        return out

    # -- packing -------------------------------------------------------------

    def pack(self, d: Decision, uz0, nodes) -> np.ndarray:
        """Flat internal vector from a decision, base torsion rates and node states 1..M-1."""
        lay = self.layout
        sl = lay.slices
        v = np.zeros(lay.size)
        ell = np.maximum(d.ell, 0.0)
        v[sl["u_star"]] = d.u_star.reshape(-1)
        v[sl["L"]] = d.L
        v[sl["rho_i"]] = d.rho_i
        v[sl["rho_o"]] = d.rho_o
        v[sl["alpha"]] = d.alpha
        v[sl["sigma"]] = np.diff(ell, prepend=0.0)
        v[sl["p0"]] = d.p0
        v[sl["q0"]] = d.q0 / np.linalg.norm(d.q0)
        v[sl["uz0"]] = uz0
        v[sl["X"]] = np.asarray(nodes).reshape(-1)
        return v / self.scale

    def unpack(self, x):
        """(Decision, node states including the base, segment ends ell)."""
        v = {k: np.asarray(a) for k, a in _unpack(self.layout, jnp.asarray(x), self.scale).items()}
        ell = np.cumsum(v["sigma"])
        d = Decision(v["u_star"], v["L"], v["rho_i"], v["rho_o"], v["alpha"], ell - v["L"],
                     v["p0"], v["q0"] / np.linalg.norm(v["q0"]))
        base = np.asarray(_base_state({k: jnp.asarray(a) for k, a in v.items()}))
        return d, np.vstack([base, v["X"]]), ell

    def rollout(self, d: Decision) -> np.ndarray:
        """Internal vector whose nodes follow the kinematics exactly (zero defects)."""
        d.validate(tol=1e-12)
        lay, pb = self.layout, self.problem
        n, N = lay.n, lay.N
        tubes = d.to_tubes(pb.E, pb.G)
        try:
            uz0 = np.asarray(shoot_forward(tubes, d.p0, d.R0, nodes_per_segment=N).info.get("uz0", np.zeros(n)))
        except ShootingError:
            uz0 = np.zeros(n)
        ell = np.maximum(d.ell, 0.0)
        sigma = np.diff(ell, prepend=0.0)
        beta = ell - d.L
        x = np.concatenate([d.p0, d.R0.reshape(9), d.alpha - beta * uz0, uz0])
        I = second_moment(d.rho_i, d.rho_o)
        EI, GJ = pb.E * I, pb.G * 2.0 * I
        masks = segment_masks(n)
        nodes = []
        for k in range(n):
            h = sigma[k] / (N - 1) / lay.substeps
            for _ in range(N - 1):
                for _ in range(lay.substeps):
                    x = rk4_step(x, h, d.u_star[:, :2], EI, GJ, masks[k])
                nodes.append(x)
        return self.pack(d, uz0, np.array(nodes))

    def path(self, x) -> RobotPath:
        d, X, ell = self.unpack(x)
        lay = self.layout
        n, N = lay.n, lay.N
        sigma = np.diff(ell, prepend=0.0)
        s = np.concatenate([[0.0]] + [ell[k] - sigma[k] + sigma[k] * np.arange(1, N) / (N - 1) for k in range(n)])
        I = second_moment(d.rho_i, d.rho_o)
        masks = segment_masks(n)
        seg = np.concatenate([[0]] + [np.full(N - 1, k) for k in range(n)])
        uxy = np.array([
            curvature_xy(X[j, 12 : 12 + n], d.u_star[:, :2], self.problem.E * I, masks[seg[j]])[n - 1]
            for j in range(len(s))
        ])
        return RobotPath(
            s=s, p=X[:, :3], R=X[:, 3:12].reshape(-1, 3, 3), psi=X[:, 12 : 12 + n],
            u_z=X[:, 12 + n :], u_xy=uxy, segment_ends=ell, info={},
        )


def transcribe(problem: PlanProblem, d_init: Decision, nodes_per_segment: int = 11, **kw):
    """Build the NLP and its initial point (a kinematically consistent rollout of ``d_init``)."""
    nlp = Nlp(problem, nodes_per_segment, **kw)
    return nlp, nlp.rollout(d_init)
