"""Augmented-Lagrangian NLP solver with warm starts.

Problems are posed as

    min f(x)  s.t.  c(x) = 0,  g(x) <= 0,  lb <= x <= ub

and handed over as any object with ``n``, ``lb``, ``ub``, ``objective(x) ->
(f, grad)`` and ``constraints(x) -> (c, g, pullback)`` where ``pullback(w_c,
w_g)`` returns ``J_c^T w_c + J_g^T w_g``.  Bounds are kept out of the penalty
and handled by the inner solver: L-BFGS-B by default, or a projected Newton
method when the model also offers dense ``jacobians(x) -> (J_c, J_g)`` and
``hessian(x, w_c, w_g)`` (Hessian of f + w_c^T c + w_g^T g).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

import numpy as np
from scipy.optimize import minimize

log = logging.getLogger(__name__)

# Interior-point settings that reproduce the warm-start behaviour with Ipopt;
# consumed by external solver adapters.
IPOPT_WARM_START = {
    "warm_start_init_point": "yes",
    "mu_init": 1e-8,
    "warm_start_mult_bound_push": 1e-10,
    "warm_start_slack_bound_push": 1e-10,
    "warm_start_bound_push": 1e-8,
    "warm_start_bound_frac": 1e-8,
    "warm_start_slack_bound_frac": 1e-10,
}


class NlpModel(Protocol):
    n: int
    lb: np.ndarray
    ub: np.ndarray

    def objective(self, x: np.ndarray) -> tuple[float, np.ndarray]: ...

    def constraints(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, Callable]: ...


@dataclass
class SolverOptions:
    tol_feas: float = 1e-6
    tol_stat: float = 1e-6
    max_iter: int = 3000  # total inner (quasi-Newton) iterations
    max_outer: int = 60
    mu_init: float = 10.0
    mu_max: float = 1e9
    mu_growth: float = 10.0
    inner_tol_init: float = 1e-2
    # accept a feasible point whose stationarity stalls below this for
    # ``acceptable_iter`` consecutive outer iterations
    acceptable_stat: float = 1e-4
    acceptable_iter: int = 4
    lbfgs_memory: int = 30
    inner: str = "auto"  # auto | lbfgs | newton


@dataclass
class WarmStart:
    """Solver state carried between related solves.

    ``bound_push`` moves the primal start strictly inside its bounds by that
    relative amount, mirroring ``warm_start_bound_push``.
    """

    y: np.ndarray | None = None
    z: np.ndarray | None = None
    mu: float | None = None
    bound_push: float = 1e-8
    inner_tol: float = 1e-6


@dataclass
class SolveResult:
    x: np.ndarray
    status: str  # optimal | acceptable | max_iter | infeasible
    f: float
    feas: float
    stat: float
    outer_iterations: int
    inner_iterations: int
    warm: WarmStart
    history: list = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.status in ("optimal", "acceptable")


def _push_inside(x, lb, ub, push):
    free = ub > lb
    with np.errstate(invalid="ignore"):
        lo = np.where(np.isfinite(lb) & free, lb + push * np.maximum(1.0, np.abs(lb)), lb)
        hi = np.where(np.isfinite(ub) & free, ub - push * np.maximum(1.0, np.abs(ub)), ub)
    return np.clip(x, np.minimum(lo, hi), np.maximum(lo, hi))


def _projected_gradient(x, grad, lb, ub):
    return x - np.clip(x - grad, lb, ub)


def _projected_newton(model, x, y, z, mu, lb, ub, gtol, max_iter):
    """Minimize the augmented Lagrangian over the box with modified Newton steps.

    The Hessian is that of the Lagrangian at the shifted multipliers plus the
    penalty Gauss-Newton term; negative or tiny eigenvalues are reflected and
    floored.  Variables at a bound with the gradient pushing outward are held.
    """

    def phi(xv):
        f, _ = model.objective(xv)
        c, g, _ = model.constraints(xv)
        sh = np.maximum(0.0, z + mu * g)
        return f + y @ c + 0.5 * mu * c @ c + (sh @ sh - z @ z) / (2.0 * mu)

    val = phi(x)
    nit = 0
    while nit < max_iter:
        _, gf = model.objective(x)
        c, g, _ = model.constraints(x)
        Jc, Jg = model.jacobians(x)
        wc = y + mu * c
        sh = np.maximum(0.0, z + mu * g)
        grad = gf + Jc.T @ wc + Jg.T @ sh
        pg = np.max(np.abs(_projected_gradient(x, grad, lb, ub)), initial=0.0)
        if pg <= gtol:
            break
        nit += 1
        eps = min(1e-6, pg)
        held = ((x - lb <= eps) & (grad > 0)) | ((ub - x <= eps) & (grad < 0))
        free = ~held
        act = sh > 0
        H = model.hessian(x, wc, sh) + mu * (Jc.T @ Jc) + mu * (Jg[act].T @ Jg[act])
        w_raw, V = np.linalg.eigh(H[np.ix_(free, free)])
        w = np.maximum(np.abs(w_raw), 1e-10 * max(1.0, np.max(np.abs(w_raw), initial=0.0)))
        d = -grad
        d[free] = -(V @ ((V.T @ grad[free]) / w))
        t = 1.0
        for _ in range(50):
            xn = np.clip(x + t * d, lb, ub)
            vn = phi(xn)
            if vn <= val + 1e-4 * grad @ (xn - x):
                break
            t *= 0.5
        else:
            break
        log.debug("newton %d pg=%.2e t=%.2e neg=%d", nit, pg, t, int(np.sum(w_raw < 0)))
        x, val = xn, vn
    return x, nit


class _SlackModel:
    """Rewrites g(x) <= 0 as g(x) + s = 0 with s >= 0 so the penalty stays smooth."""

    def __init__(self, model):
        self.model = model
        self.base_n = model.n

    def setup(self, x0):
        c, g, _ = self.model.constraints(x0)
        self.me, self.mi = len(c), len(g)
        self.n = self.base_n + self.mi
        self.lb = np.concatenate([self.model.lb, np.zeros(self.mi)])
        self.ub = np.concatenate([self.model.ub, np.full(self.mi, np.inf)])
        return np.concatenate([x0, np.maximum(0.0, -g)])

    def objective(self, xs):
        f, gf = self.model.objective(xs[: self.base_n])
        return f, np.concatenate([gf, np.zeros(self.mi)])

    def constraints(self, xs):
        x, sl = xs[: self.base_n], xs[self.base_n :]
        c, g, pull = self.model.constraints(x)
        me = self.me

        def pull_s(w, _):
            return np.concatenate([pull(w[:me], w[me:]), w[me:]])

        return np.concatenate([c, g + sl]), np.zeros(0), pull_s

    def jacobians(self, xs):
        Jc, Jg = self.model.jacobians(xs[: self.base_n])
        top = np.hstack([Jc, np.zeros((self.me, self.mi))])
        bottom = np.hstack([Jg, np.eye(self.mi)])
        return np.vstack([top, bottom]), np.zeros((0, self.n))

    def hessian(self, xs, w, _):
        H = np.zeros((self.n, self.n))
        H[: self.base_n, : self.base_n] = self.model.hessian(xs[: self.base_n], w[: self.me], w[self.me :])
        return H


def _solve_with_slacks(model, x0, warm, opt, callback):
    sm = _SlackModel(model)
    xs0 = sm.setup(np.clip(np.asarray(x0, float), model.lb, model.ub))
    warm_s = None
    if warm is not None and warm.y is not None and len(warm.y) == sm.me and len(warm.z) == sm.mi:
        warm_s = replace(warm, y=np.concatenate([warm.y, warm.z]), z=np.zeros(0))
    r = solve_nlp(sm, xs0, warm_s, opt, callback)
    y, z = r.warm.y[: sm.me], np.maximum(0.0, r.warm.y[sm.me :])
    return replace(r, x=r.x[: sm.base_n], warm=WarmStart(y=y, z=z, mu=r.warm.mu))


def solve_nlp(
    model: NlpModel,
    x0,
    warm: WarmStart | None = None,
    options: SolverOptions | None = None,
    callback: Callable | None = None,
) -> SolveResult:
    """Run the method of multipliers from ``x0``.

    With ``warm`` given, multipliers and penalty resume from the previous
    solve and the first inner tolerance starts tight, so re-solving from a
    converged point costs a handful of iterations.
    """
    opt = options or SolverOptions()
    has_derivs = hasattr(model, "jacobians") and hasattr(model, "hessian")
    if opt.inner == "newton" and not has_derivs:
        raise ValueError("newton inner solver needs model.jacobians and model.hessian")
    newton = has_derivs and opt.inner in ("auto", "newton")
    if newton and not isinstance(model, _SlackModel):
        _, g0, _ = model.constraints(np.clip(np.asarray(x0, float), model.lb, model.ub))
        if len(g0):
            return _solve_with_slacks(model, x0, warm, opt, callback)
    lb = np.asarray(model.lb, float)
    ub = np.asarray(model.ub, float)
    x = np.clip(np.asarray(x0, float).copy(), lb, ub)
    c, g, _ = model.constraints(x)
    if warm is not None and warm.y is not None and len(warm.y) == len(c) and len(warm.z) == len(g):
        x = _push_inside(x, lb, ub, warm.bound_push)
        y, z = warm.y.copy(), warm.z.copy()
        mu = warm.mu or opt.mu_init
        omega = max(warm.inner_tol, opt.tol_stat)
    else:
        y, z = np.zeros(len(c)), np.zeros(len(g))
        mu = opt.mu_init
        omega = opt.inner_tol_init

    def merit(xv):
        f, gf = model.objective(xv)
        cv, gv, pull = model.constraints(xv)
        shifted = np.maximum(0.0, z + mu * gv)
        val = f + y @ cv + 0.5 * mu * cv @ cv + (shifted @ shifted - z @ z) / (2.0 * mu)
        return val, gf + pull(y + mu * cv, shifted)

    def measures(xv, yv, zv):
        f, gf = model.objective(xv)
        cv, gv, pull = model.constraints(xv)
        feas = max(np.max(np.abs(cv), initial=0.0), np.max(gv, initial=0.0))
        stat = np.max(np.abs(_projected_gradient(xv, gf + pull(yv, zv), lb, ub)), initial=0.0)
        # complementarity folded into feasibility
        comp = np.max(np.abs(np.minimum(-gv, zv)), initial=0.0) if len(gv) else 0.0
        return f, cv, gv, max(feas, comp), stat

    inner_total = 0
    history = []
    f, c, g, feas, stat = measures(x, y, z)
    best_feas = feas
    status = "max_iter"
    stall = 0
    acceptable_count = 0
    outer = 0
    if feas <= opt.tol_feas and stat <= opt.tol_stat:
        # already a KKT point (typical for a warm start from a solution)
        status = "optimal"
    for outer in range(1, opt.max_outer + 1):
        if status == "optimal":
            outer -= 1
            break
        budget = opt.max_iter - inner_total
        if budget <= 0:
            break
        if newton:
            x, nit = _projected_newton(model, x, y, z, mu, lb, ub, omega, budget)
        else:
            res = minimize(
                merit,
                x,
                jac=True,
                method="L-BFGS-B",
                bounds=list(zip(lb, ub)),
                options={
                    "maxiter": budget,
                    "gtol": omega,
                    "ftol": 1e-16,
                    "maxcor": opt.lbfgs_memory,
                    "maxls": 40,
                },
            )
            x, nit = res.x, int(res.nit)
        inner_total += nit
        c, g, _ = model.constraints(x)
        y = y + mu * c
        z = np.maximum(0.0, z + mu * g)
        f, c, g, feas, stat = measures(x, y, z)
        history.append({"outer": outer, "f": f, "feas": feas, "stat": stat, "mu": mu, "inner": nit})
        if callback is not None:
            callback(history[-1])
        log.debug("outer %d f=%.6g feas=%.2e stat=%.2e mu=%.1e nit=%d", outer, f, feas, stat, mu, nit)
        if feas <= opt.tol_feas and stat <= opt.tol_stat:
            status = "optimal"
            break
        if feas <= opt.tol_feas and stat <= opt.acceptable_stat:
            acceptable_count += 1
            if acceptable_count >= opt.acceptable_iter:
                status = "acceptable"
                break
        else:
            acceptable_count = 0
        if feas > 0.25 * best_feas and feas > opt.tol_feas:
            if mu >= opt.mu_max:
                stall += 1
                if stall >= 3:
                    status = "infeasible"
                    break
            mu = min(mu * opt.mu_growth, opt.mu_max)
        best_feas = min(best_feas, feas)
        omega = max(opt.tol_stat, min(0.1 * omega, 0.1 * max(feas, opt.tol_stat)))
        if nit == 0 and feas > opt.tol_feas and mu >= opt.mu_max:
            status = "infeasible"
            break
    return SolveResult(
        x=x,
        status=status,
        f=float(f),
        feas=float(feas),
        stat=float(stat),
        outer_iterations=outer,
        inner_iterations=inner_total,
        warm=WarmStart(y=y, z=z, mu=mu),
        history=history,
    )


class DenseModel:
    """Adapter for small problems given as plain callables with dense Jacobians.

    ``eq`` and ``ineq`` return ``(values, jacobian)``; either may be ``None``.
    """

    def __init__(self, n, fun, eq=None, ineq=None, lb=None, ub=None):
        self.n = n
        self._fun = fun
        self._eq = eq
        self._ineq = ineq
        self.lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, float)
        self.ub = np.full(n, np.inf) if ub is None else np.asarray(ub, float)

    def objective(self, x):
        return self._fun(x)

    def constraints(self, x):
        if self._eq is not None:
            c, Jc = self._eq(x)
        else:
            c, Jc = np.zeros(0), np.zeros((0, self.n))
        if self._ineq is not None:
            g, Jg = self._ineq(x)
        else:
            g, Jg = np.zeros(0), np.zeros((0, self.n))
        return c, g, lambda wc, wg: Jc.T @ wc + Jg.T @ wg
